"""Vectorized numpy implementations of the sampling hot kernels.

These are the reference semantics; the compiled extension in
``_cykernels.pyx`` must match them to floating-point reordering only.

Conventions shared by both backends:

* feature maps are ``(H, W, C)`` row-major float arrays;
* sample locations are continuous *index* coordinates ``(row, col)``
  where ``(0, 0)`` is the center of cell ``[0, 0]`` and
  ``(H-1, W-1)`` the center of the last cell;
* the row axis is border-clamped (replicate), the column axis is either
  border-clamped or periodic (``wrap_cols=True``) for angular layouts.
"""

import numpy as np


def _corner_setup(fmap, rows, cols, wrap_cols):
    """Shared corner-index/weight computation for forward and backward."""
    h, w, _ = fmap.shape
    r = np.clip(rows, 0.0, h - 1.0)
    r0 = np.minimum(np.floor(r).astype(np.intp), max(h - 2, 0))
    r1 = np.minimum(r0 + 1, h - 1)
    fr = r - r0

    if wrap_cols:
        c = np.mod(cols, w)
        c0 = np.minimum(np.floor(c).astype(np.intp), w - 1)
        c1 = np.mod(c0 + 1, w)
        fc = c - c0
    else:
        c = np.clip(cols, 0.0, w - 1.0)
        c0 = np.minimum(np.floor(c).astype(np.intp), max(w - 2, 0))
        c1 = np.minimum(c0 + 1, w - 1)
        fc = c - c0
    return r0, r1, fr, c0, c1, fc


def sample_bilinear_fwd(fmap, rows, cols, wrap_cols=False):
    """Bilinearly sample ``fmap`` at N continuous locations -> (N, C)."""
    r0, r1, fr, c0, c1, fc = _corner_setup(fmap, rows, cols, wrap_cols)
    fr = fr[:, None]
    fc = fc[:, None]
    return (
        fmap[r0, c0] * (1.0 - fr) * (1.0 - fc)
        + fmap[r0, c1] * (1.0 - fr) * fc
        + fmap[r1, c0] * fr * (1.0 - fc)
        + fmap[r1, c1] * fr * fc
    )


def sample_bilinear_bwd(fmap, rows, cols, d_out, wrap_cols=False):
    """Gradient of :func:`sample_bilinear_fwd`.

    Returns ``(d_map, d_rows, d_cols)``.  Location gradients are zero
    wherever the corresponding axis was clamped at the border.
    """
    h, w, c = fmap.shape
    r0, r1, fr, c0, c1, fc = _corner_setup(fmap, rows, cols, wrap_cols)
    frc = fr[:, None]
    fcc = fc[:, None]

    w00 = (1.0 - fr) * (1.0 - fc)
    w01 = (1.0 - fr) * fc
    w10 = fr * (1.0 - fc)
    w11 = fr * fc

    flat = np.concatenate(
        [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1]
    )
    wts = np.concatenate([w00, w01, w10, w11])
    d_rep = np.concatenate([d_out, d_out, d_out, d_out], axis=0)
    d_map = np.empty((h * w, c), dtype=fmap.dtype)
    weighted = wts[:, None] * d_rep
    for ch in range(c):
        d_map[:, ch] = np.bincount(flat, weights=weighted[:, ch], minlength=h * w)
    d_map = d_map.reshape(h, w, c)

    top = fmap[r0, c0] * (1.0 - fcc) + fmap[r0, c1] * fcc
    bot = fmap[r1, c0] * (1.0 - fcc) + fmap[r1, c1] * fcc
    d_rows = ((bot - top) * d_out).sum(axis=1)
    left = fmap[r0, c0] * (1.0 - frc) + fmap[r1, c0] * frc
    right = fmap[r0, c1] * (1.0 - frc) + fmap[r1, c1] * frc
    d_cols = ((right - left) * d_out).sum(axis=1)

    inside_r = (rows >= 0.0) & (rows <= h - 1.0)
    d_rows = np.where(inside_r, d_rows, 0.0)
    if not wrap_cols:
        inside_c = (cols >= 0.0) & (cols <= w - 1.0)
        d_cols = np.where(inside_c, d_cols, 0.0)
    return d_map, d_rows, d_cols


def _pad_map(x, wrap_cols):
    """3x3 halo: rows zero-padded, cols zero-padded or periodic."""
    col_mode = "wrap" if wrap_cols else "constant"
    x = np.pad(x, ((0, 0), (1, 1), (0, 0)), mode=col_mode)
    return np.pad(x, ((1, 1), (0, 0), (0, 0)), mode="constant")


def depthwise3x3_fwd(x, kernel, wrap_cols=False):
    """Per-channel 3x3 convolution over an (H, W, C) map."""
    h, w, _ = x.shape
    xp = _pad_map(x, wrap_cols)
    out = np.zeros_like(x)
    for ki in range(3):
        for kj in range(3):
            out += kernel[ki, kj] * xp[ki : ki + h, kj : kj + w]
    return out


def depthwise3x3_bwd(x, kernel, d_out, wrap_cols=False):
    """Gradient of :func:`depthwise3x3_fwd` -> (d_x, d_kernel)."""
    h, w, _ = x.shape
    xp = _pad_map(x, wrap_cols)
    d_xp = np.zeros_like(xp)
    d_kernel = np.zeros_like(kernel)
    for ki in range(3):
        for kj in range(3):
            patch = xp[ki : ki + h, kj : kj + w]
            d_kernel[ki, kj] = (patch * d_out).sum(axis=(0, 1))
            d_xp[ki : ki + h, kj : kj + w] += kernel[ki, kj] * d_out
    d_x = d_xp[1:-1, 1:-1].copy()
    if wrap_cols:
        d_x[:, -1] += d_xp[1:-1, 0]
        d_x[:, 0] += d_xp[1:-1, -1]
    return d_x, d_kernel
