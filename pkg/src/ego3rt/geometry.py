"""Multi-camera rig model: intrinsics, extrinsics, perspective projection
and per-point visibility classification.

Image coordinates are normalized: a projected point with ``0 < u, v < 1``
lands inside the image regardless of pixel resolution.  Pixel-unit
intrinsics in rig files are divided by the image extents at load time.
Ego coordinates are right-handed with z up; the camera frame is
``x' right, y' down, z' forward``.
"""

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError, DomainError, ProjectionSingularError

MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    """Normalized pinhole intrinsics; ``b_x`` is a metric baseline offset."""

    f_u: float
    f_v: float
    c_u: float = 0.5
    c_v: float = 0.5
    b_x: float = 0.0

    def __post_init__(self):
        if self.f_u <= 0 or self.f_v <= 0:
            raise DomainError("focal lengths must be positive")

    @property
    def matrix(self):
        """3x4 projection from homogeneous camera coordinates."""
        return np.array(
            [
                [self.f_u, 0.0, self.c_u, -self.f_u * self.b_x],
                [0.0, self.f_v, self.c_v, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ]
        )


@dataclass(frozen=True)
class Extrinsics:
    """Rigid map from ego coordinates to camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise DomainError("extrinsic rotation is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-9):
            raise DomainError("extrinsic rotation must have determinant +1")

    @property
    def matrix(self):
        """4x4 homogeneous ego-to-camera transform."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CameraModel:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    view: int = 1


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple

    def __post_init__(self):
        cams = tuple(self.cameras)
        object.__setattr__(self, "cameras", cams)
        if len(cams) < 1:
            raise DomainError("a rig needs at least one camera")
        views = [c.view for c in cams]
        if len(set(views)) != len(views):
            raise DomainError(f"duplicate view indices in rig: {views}")

    @property
    def n_view(self):
        return len(self.cameras)


@dataclass(frozen=True)
class ImagePoint:
    u: float
    v: float
    depth: float


def compose_projection(camera):
    """Full 3x4 projection: intrinsics times the homogeneous extrinsics."""
    return camera.intrinsics.matrix @ camera.extrinsics.matrix


def project(camera, point):
    """Project one ego-frame point; the perspective divide is explicit.

    Raises ProjectionSingularError when the camera-frame depth magnitude
    falls below ``MIN_DEPTH``.
    """
    p = np.asarray(point, dtype=float).reshape(3)
    if not np.all(np.isfinite(p)):
        raise DomainError("project: point must be finite")
    cam = camera.extrinsics.rotation @ p + camera.extrinsics.translation
    xp, yp, zp = cam
    if abs(zp) < MIN_DEPTH:
        raise ProjectionSingularError(f"depth {zp:g} too close to the image plane")
    intr = camera.intrinsics
    u_h = intr.f_u * xp + intr.c_u * zp - intr.f_u * intr.b_x
    v_h = intr.f_v * yp + intr.c_v * zp
    return ImagePoint(u=u_h / zp, v=v_h / zp, depth=zp)


def project_batch(camera, points):
    """Vectorized projection of ``(N, 3)`` points -> ``(u, v, depth)`` arrays.

    Never raises on near-zero depth; such entries get ``u = v = 0`` and keep
    their tiny depth, which classifies them invisible.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    cam = pts @ camera.extrinsics.rotation.T + camera.extrinsics.translation
    z = cam[:, 2]
    safe = np.where(np.abs(z) < MIN_DEPTH, 1.0, z)
    intr = camera.intrinsics
    u = (intr.f_u * cam[:, 0] + intr.c_u * z - intr.f_u * intr.b_x) / safe
    v = (intr.f_v * cam[:, 1] + intr.c_v * z) / safe
    bad = np.abs(z) < MIN_DEPTH
    u = np.where(bad, 0.0, u)
    v = np.where(bad, 0.0, v)
    return u, v, z


def visible(point):
    """True iff the image point lies strictly inside the frame with positive depth."""
    return (
        0.0 < point.u < 1.0
        and 0.0 < point.v < 1.0
        and point.depth > MIN_DEPTH
    )


def _visible_arrays(u, v, depth):
    return (u > 0.0) & (u < 1.0) & (v > 0.0) & (v < 1.0) & (depth > MIN_DEPTH)


def visibility_sets(rig, positions):
    """Per-position sets of view indices whose cameras see the position."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 3)
    sets = [set() for _ in range(len(pts))]
    for cam in rig.cameras:
        u, v, z = project_batch(cam, pts)
        for i in np.nonzero(_visible_arrays(u, v, z))[0]:
            sets[i].add(cam.view)
    return sets


@dataclass
class SceneGeometry:
    """Cached per-scene projection of fixed query positions into every view.

    ``base_uv[i, t]`` is the projected location of position ``i`` in the
    t-th camera (rig order); ``vis[i, t]`` its visibility.  Invisible
    entries carry a safe dummy location at the image center.
    """

    base_uv: np.ndarray
    vis: np.ndarray
    views: tuple = field(default_factory=tuple)

    @property
    def blind(self):
        return ~self.vis.any(axis=1)


def scene_geometry(rig, positions):
    pts = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(pts)
    t = rig.n_view
    uv = np.full((n, t, 2), 0.5)
    vis = np.zeros((n, t), dtype=bool)
    for j, cam in enumerate(rig.cameras):
        u, v, z = project_batch(cam, pts)
        ok = _visible_arrays(u, v, z)
        uv[ok, j, 0] = u[ok]
        uv[ok, j, 1] = v[ok]
        vis[:, j] = ok
    return SceneGeometry(base_uv=uv, vis=vis, views=tuple(c.view for c in rig.cameras))


# ---------------------------------------------------------------------------
# rig construction and file IO

def ring_rig(n_views, fov_deg=100.0, height=1.6, center=(0.0, 0.0), start_yaw=0.0):
    """Evenly yawed outward-facing cameras sharing one mast position."""
    if n_views < 1:
        raise ConfigError("ring_rig: need at least one view")
    half = np.radians(fov_deg) / 2.0
    f = 0.5 / np.tan(half)
    cams = []
    for i in range(n_views):
        yaw = start_yaw + 2.0 * np.pi * i / n_views
        cams.append(
            CameraModel(
                intrinsics=Intrinsics(f_u=f, f_v=f),
                extrinsics=yaw_extrinsics(yaw, (center[0], center[1], height)),
                view=i + 1,
            )
        )
    return CameraRig(cameras=tuple(cams))


def yaw_extrinsics(yaw, position):
    """Extrinsics for a level camera at ``position`` facing along ``yaw``."""
    fwd = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    rot = np.stack([right, down, fwd])
    pos = np.asarray(position, dtype=float)
    return Extrinsics(rotation=rot, translation=-rot @ pos)


def save_rig(path, rig, image_width, image_height):
    doc = {
        "image_width": int(image_width),
        "image_height": int(image_height),
        "intrinsic_units": "normalized",
        "cameras": [
            {
                "view": cam.view,
                "f_u": float(cam.intrinsics.f_u),
                "f_v": float(cam.intrinsics.f_v),
                "c_u": float(cam.intrinsics.c_u),
                "c_v": float(cam.intrinsics.c_v),
                "b_x": float(cam.intrinsics.b_x),
                "rotation": [float(x) for x in cam.extrinsics.rotation.reshape(-1)],
                "translation": [float(x) for x in cam.extrinsics.translation],
            }
            for cam in rig.cameras
        ],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_rig(path):
    """Read a rig description file -> (rig, (image_width, image_height))."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    try:
        width = int(doc["image_width"])
        height = int(doc["image_height"])
        units = doc.get("intrinsic_units", "normalized")
        cams = []
        for entry in doc["cameras"]:
            f_u, f_v = float(entry["f_u"]), float(entry["f_v"])
            c_u, c_v = float(entry["c_u"]), float(entry["c_v"])
            if units == "pixel":
                f_u, c_u = f_u / width, c_u / width
                f_v, c_v = f_v / height, c_v / height
            elif units != "normalized":
                raise ConfigError(f"unknown intrinsic_units {units!r}")
            cams.append(
                CameraModel(
                    intrinsics=Intrinsics(
                        f_u=f_u, f_v=f_v, c_u=c_u, c_v=c_v,
                        b_x=float(entry.get("b_x", 0.0)),
                    ),
                    extrinsics=Extrinsics(
                        rotation=np.asarray(entry["rotation"], dtype=float),
                        translation=np.asarray(entry["translation"], dtype=float),
                    ),
                    view=int(entry["view"]),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed rig file {path}: {exc}") from exc
    return CameraRig(cameras=tuple(cams)), (width, height)
