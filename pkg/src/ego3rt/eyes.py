"""Polar grid of imaginary eyes and the polar-to-rectangular BEV resampler.

Eye features with ``N_eyes = R * S`` rows are laid out radial-major: the
flat index of the eye at radial step ``i`` on ray ``j`` is ``i * S + j``,
so a ``(N_eyes, C)`` array reshapes to ``(R, S, C)`` with the angular
axis last but one.  Ray ``j`` points along azimuth ``2*pi*j/S``.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError
from .ops import FLOAT

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class EyeGrid:
    """R x S polar layout of eyes at a fixed height above the ground."""

    radii: np.ndarray
    angles: np.ndarray
    height: float
    positions: np.ndarray

    @property
    def r(self):
        return len(self.radii)

    @property
    def s(self):
        return len(self.angles)

    @property
    def n_eyes(self):
        return self.r * self.s

    @property
    def r_min(self):
        return float(self.radii[0])

    @property
    def r_max(self):
        return float(self.radii[-1])


def build_eye_grid(r_count, s_count, r_min, r_max, height=0.0):
    """Lay out ``r_count`` eyes on each of ``s_count`` evenly spaced rays.

    Radii are uniform in metric distance over ``[r_min, r_max]``; azimuths
    are ``2*pi*j/s_count``.  Eye positions are ego-frame ``(x, y, height)``.
    """
    if r_count < 1 or s_count < 1:
        raise DomainError("eye grid needs at least one ray and one radius")
    if not (0.0 < r_min < r_max):
        raise DomainError(f"need 0 < r_min < r_max, got [{r_min}, {r_max}]")
    if r_count == 1:
        radii = np.array([r_min], dtype=FLOAT)
    else:
        radii = np.linspace(r_min, r_max, r_count, dtype=FLOAT)
    angles = TWO_PI * np.arange(s_count, dtype=FLOAT) / s_count
    rr, aa = np.meshgrid(radii, angles, indexing="ij")
    positions = np.stack(
        [rr * np.cos(aa), rr * np.sin(aa), np.full_like(rr, height)], axis=-1
    ).reshape(-1, 3)
    return EyeGrid(radii=radii, angles=angles, height=float(height), positions=positions)


@dataclass(frozen=True)
class BevGrid:
    """Square ego-centered rectangular grid; ``cell_m`` meters per cell."""

    side: int = 32
    cell_m: float = 0.5

    def __post_init__(self):
        if self.side < 1 or self.cell_m <= 0:
            raise DomainError("BEV grid needs positive side and cell size")

    @property
    def extent_m(self):
        return self.side * self.cell_m

    def cell_centers(self, side=None):
        """(side, side, 2) ego (x, y) of cell centers; axis 0 is x, axis 1 y."""
        side = self.side if side is None else side
        cell = self.extent_m / side
        coords = (np.arange(side, dtype=FLOAT) + 0.5) * cell - self.extent_m / 2.0
        x, y = np.meshgrid(coords, coords, indexing="ij")
        return np.stack([x, y], axis=-1)


def default_r_max(bev: BevGrid, margin=1.05):
    """Smallest eye radius covering the BEV grid's diagonal corner."""
    return margin * bev.extent_m * np.sqrt(2.0) / 2.0


def annulus_mask(grid: EyeGrid, bev: BevGrid, side=None):
    """Validity mask: 1 where the cell-center radius lies in [r_min, r_max]."""
    centers = bev.cell_centers(side)
    radius = np.hypot(centers[..., 0], centers[..., 1])
    return (radius >= grid.r_min) & (radius <= grid.r_max)


def _polar_indices(grid: EyeGrid, bev: BevGrid):
    centers = bev.cell_centers()
    radius = np.hypot(centers[..., 0], centers[..., 1])
    azimuth = np.mod(np.arctan2(centers[..., 1], centers[..., 0]), TWO_PI)
    valid = (radius >= grid.r_min) & (radius <= grid.r_max)
    if grid.r > 1:
        radial = (radius - grid.r_min) / (grid.r_max - grid.r_min) * (grid.r - 1)
    else:
        radial = np.zeros_like(radius)
    angular = azimuth / (TWO_PI / grid.s)
    return radial, angular, valid


def bev_sample(eye_features, grid: EyeGrid, bev: BevGrid):
    """Resample polar eye features onto the rectangular BEV grid.

    ``eye_features`` is ``(N_eyes, C)`` or ``(R, S, C)``.  Each rect cell
    center is converted to polar coordinates and interpolated bilinearly
    in (radial index, angular index) space with angular wrap-around.
    Cells outside the eye annulus come out zero with a 0 mask bit.

    Returns ``(features (side, side, C), mask (side, side) bool, backward)``
    where ``backward(d_features) -> (d_eye_features,)`` (the map is linear
    in the eye features).
    """
    feats = np.ascontiguousarray(eye_features, dtype=FLOAT)
    feats = feats.reshape(grid.r, grid.s, -1)
    c = feats.shape[-1]
    side = bev.side
    radial, angular, valid = _polar_indices(grid, bev)
    rows = np.ascontiguousarray(radial[valid])
    cols = np.ascontiguousarray(angular[valid])
    sampled = kernels.sample_bilinear_fwd(feats, rows, cols, wrap_cols=True)
    out = np.zeros((side, side, c), dtype=FLOAT)
    out[valid] = sampled

    def backward(d_out):
        d_sampled = np.ascontiguousarray(
            np.asarray(d_out, dtype=FLOAT)[valid]
        )
        d_map, _, _ = kernels.sample_bilinear_bwd(
            feats, rows, cols, d_sampled, wrap_cols=True
        )
        return (d_map.reshape(eye_features.shape),)

    return out, valid, backward
