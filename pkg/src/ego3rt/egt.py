"""EGT1 tensor file format.

Layout: magic bytes ``EGT1``, u32 rank, rank little-endian u32 extents,
then the row-major float64 payload, little-endian.  Used for checkpoints,
feature dumps and scene arrays.
"""

import numpy as np

from .errors import ShapeError

MAGIC = b"EGT1"


def save_egt(path, array):
    """Write a float array to ``path`` in EGT1 format."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = MAGIC + np.uint32(arr.ndim).astype("<u4").tobytes()
    extents = np.asarray(arr.shape, dtype="<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(extents)
        fh.write(arr.tobytes())


def load_egt(path):
    """Read an EGT1 file back into a float64 array."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ShapeError(f"{path}: not an EGT1 file (magic {magic!r})")
        rank = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        shape = tuple(np.frombuffer(fh.read(4 * rank), dtype="<u4").astype(int))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(fh.read(8 * count), dtype="<f8")
        if data.size != count:
            raise ShapeError(f"{path}: truncated payload")
    return data.reshape(shape).astype(np.float64)
