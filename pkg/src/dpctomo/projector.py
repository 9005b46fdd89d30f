"""Parallel-beam discrete Radon transform with intersection-length weights.

Geometry conventions: the pixel grid and the detector array are both
centered on the origin.  For angle ``theta`` the detector coordinate runs
along ``(cos theta, sin theta)`` and rays travel perpendicular to it in
direction ``(-sin theta, cos theta)``.  One ray passes through the center
of each detector cell, and its weight on a pixel is the exact length of
the ray segment inside that pixel (zero-length corner grazes get no
weight).

Images are stored column-major: the vector entry ``iy + ix * n_y`` holds
the pixel in grid column ``ix`` (x direction) and row ``iy`` (y
direction).  Sinograms are angle-major blocks of ``k`` detector values,
matching the block structure of the difference operators.

The weight matrix of a geometry is assembled once (vectorized over the
rays of each angle, sequential across angles) and stored sparse, so
repeated applies are fast and the accumulation order of the adjoint is
fixed, making results reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linops import LinearOperator, ShapeMismatchError, as_vector


def uniform_angles(l: int) -> np.ndarray:
    """l projection angles equally spaced over [0, pi)."""
    if int(l) < 1:
        raise ValueError(f"need at least one angle, got {l}")
    return np.arange(int(l)) * (np.pi / int(l))


@dataclass(frozen=True)
class ProjectionGeometry:
    """Grid, detector and angle layout defining the projector's shape."""

    n_x: int
    n_y: int
    k: int
    angles: np.ndarray
    pixel_size: float = 1.0
    h: float = 1.0

    def __post_init__(self):
        angles = np.atleast_1d(np.asarray(self.angles, dtype=np.float64)).copy()
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.n_x}x{self.n_y}")
        if self.k < 1:
            raise ValueError(f"need at least one detector, got k={self.k}")
        if self.pixel_size <= 0 or self.h <= 0:
            raise ValueError("pixel_size and detector spacing h must be positive")
        if angles.size < 1:
            raise ValueError("need at least one projection angle")
        if np.any(angles < 0.0) or np.any(angles >= np.pi):
            raise ValueError("projection angles must lie in [0, pi)")

    @property
    def l(self) -> int:
        return int(self.angles.size)

    @property
    def m(self) -> int:
        return self.k * self.l

    @property
    def n(self) -> int:
        return self.n_x * self.n_y


def standard_geometry(n: int, num_angles: int, detectors: int | None = None) -> ProjectionGeometry:
    """Square-grid geometry with k = n detectors at unit spacing."""
    k = int(n) if detectors is None else int(detectors)
    return ProjectionGeometry(n_x=int(n), n_y=int(n), k=k, angles=uniform_angles(num_angles))


@dataclass(frozen=True, eq=False)
class Image:
    """Column-major raster of length n_x * n_y."""

    n_x: int
    n_y: int
    values: np.ndarray

    def __post_init__(self):
        values = as_vector(self.values, self.n_x * self.n_y, "image values")
        object.__setattr__(self, "values", values)

    def as_matrix(self) -> np.ndarray:
        """(n_y, n_x) array; entry [iy, ix] is grid column ix, row iy."""
        return self.values.reshape(self.n_y, self.n_x, order="F")

    @classmethod
    def from_matrix(cls, matrix) -> "Image":
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"expected a 2-D array, got ndim={m.ndim}")
        return cls(n_x=m.shape[1], n_y=m.shape[0], values=m.ravel(order="F"))


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Angle-major measurement vector: l blocks of k detector values."""

    k: int
    l: int
    values: np.ndarray
    h: float = 1.0

    def __post_init__(self):
        values = as_vector(self.values, self.k * self.l, "sinogram values")
        object.__setattr__(self, "values", values)

    def as_blocks(self) -> np.ndarray:
        """(l, k) array, one row per projection angle."""
        return self.values.reshape(self.l, self.k)


def _trace_angle(geom: ProjectionGeometry, theta: float):
    """Sparse weights (det_index, pixel_index, length) for one angle."""
    nx, ny, ps = geom.n_x, geom.n_y, geom.pixel_size
    x_min = -0.5 * nx * ps
    y_min = -0.5 * ny * ps
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    t = (np.arange(geom.k) - 0.5 * (geom.k - 1)) * geom.h
    p0x, p0y = t * cos_t, t * sin_t
    dx, dy = -sin_t, cos_t

    def axis_crossings(p0, d, planes):
        # crossing parameters with one family of grid planes, plus the
        # parametric window the ray spends between the outermost planes
        if d != 0.0:
            a = (planes[None, :] - p0[:, None]) / d
            return a, np.minimum(a[:, 0], a[:, -1]), np.maximum(a[:, 0], a[:, -1])
        inside = (p0 >= planes[0]) & (p0 <= planes[-1])
        lo = np.where(inside, -np.inf, np.inf)
        hi = np.where(inside, np.inf, -np.inf)
        return None, lo, hi

    xplanes = x_min + ps * np.arange(nx + 1)
    yplanes = y_min + ps * np.arange(ny + 1)
    ax, lo_x, hi_x = axis_crossings(p0x, dx, xplanes)
    ay, lo_y, hi_y = axis_crossings(p0y, dy, yplanes)
    enter = np.maximum(lo_x, lo_y)
    leave = np.minimum(hi_x, hi_y)
    hit = leave > enter

    parts = [a for a in (ax, ay) if a is not None]
    alphas = np.concatenate(parts + [enter[:, None], leave[:, None]], axis=1)
    alphas = np.clip(alphas, enter[:, None], leave[:, None])
    alphas[~hit] = 0.0
    alphas.sort(axis=1)

    lengths = np.diff(alphas, axis=1)  # ray direction is unit length
    mids = 0.5 * (alphas[:, :-1] + alphas[:, 1:])
    ix = np.floor((p0x[:, None] + mids * dx - x_min) / ps)
    iy = np.floor((p0y[:, None] + mids * dy - y_min) / ps)
    valid = hit[:, None] & (lengths > 1e-12 * ps)
    valid &= (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)

    det_index = np.broadcast_to(np.arange(geom.k)[:, None], lengths.shape)
    pixel_index = iy[valid].astype(np.int32) + ix[valid].astype(np.int32) * np.int32(ny)
    return det_index[valid].astype(np.int32), pixel_index, lengths[valid]


def _assemble_weights(geom: ProjectionGeometry) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for a, theta in enumerate(geom.angles):
        det_idx, pix_idx, w = _trace_angle(geom, float(theta))
        rows.append(det_idx.astype(np.int64) + a * geom.k)
        cols.append(pix_idx.astype(np.int64))
        vals.append(w)
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geom.m, geom.n),
    )
    return matrix.tocsr()


class ParallelProjector(LinearOperator):
    """Discrete Radon transform R of a geometry, with exact adjoint."""

    def __init__(self, geometry: ProjectionGeometry):
        super().__init__(geometry.m, geometry.n)
        self.geometry = geometry
        self._weights = _assemble_weights(geometry)
        self._weights_t = self._weights.T.tocsr()

    def apply(self, x):
        return self._weights @ as_vector(x, self.cols, repr(self))

    def apply_transpose(self, y):
        return self._weights_t @ as_vector(y, self.rows, repr(self))


def build_projector(geom: ProjectionGeometry) -> ParallelProjector:
    """Assemble the projector for a geometry."""
    return ParallelProjector(geom)


def project(op: ParallelProjector, img: Image) -> Sinogram:
    """Forward projection R x as an angle-major sinogram."""
    geom = op.geometry
    if (img.n_x, img.n_y) != (geom.n_x, geom.n_y):
        raise ShapeMismatchError(
            f"image grid {img.n_x}x{img.n_y} does not match projector grid "
            f"{geom.n_x}x{geom.n_y}"
        )
    return Sinogram(k=geom.k, l=geom.l, values=op.apply(img.values), h=geom.h)


def backproject(op: ParallelProjector, sino: Sinogram) -> Image:
    """Unfiltered adjoint R^T b accumulated on the pixel grid."""
    geom = op.geometry
    if (sino.k, sino.l) != (geom.k, geom.l):
        raise ShapeMismatchError(
            f"sinogram layout k={sino.k}, l={sino.l} does not match projector "
            f"layout k={geom.k}, l={geom.l}"
        )
    return Image(n_x=geom.n_x, n_y=geom.n_y, values=op.apply_transpose(sino.values))
