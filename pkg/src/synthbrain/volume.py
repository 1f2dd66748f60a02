"""Dense 3D volumes, label maps, and the sampling/arithmetic primitives built on them.

Conventions used throughout the package:

* Voxel data is indexed ``data[i, j, k]`` with ``i`` along x (the fastest
  axis on disk, matching NIfTI-1 Fortran order).
* ``grid_to_world`` maps homogeneous voxel indices to world millimetres.
* Intensity sampling outside ``[0, n-1]^3`` returns 0; label sampling
  returns the background label 0. This matches skull-stripped data where
  everything outside the head is zero.
* Volumes are immutable after construction and safe to share across
  threads; every operation here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGrid, GeometryMismatch

__all__ = [
    "Volume",
    "LabelMap",
    "VolumeStack",
    "trilinear_sample",
    "nearest_sample",
    "sample_trilinear",
    "sample_trilinear_channels",
    "sample_nearest",
    "spatial_gradient",
    "minmax_normalize",
    "same_geometry",
    "check_same_geometry",
    "voxel_to_world",
    "world_to_voxel",
    "voxel_index_grid",
    "world_coordinate_grid",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, copy=True)
    out.setflags(write=False)
    return out


def _default_affine(spacing) -> np.ndarray:
    m = np.eye(4)
    m[0, 0], m[1, 1], m[2, 2] = spacing
    return m


def _validate_grid(data: np.ndarray, spacing, affine: np.ndarray) -> None:
    if data.ndim != 3:
        raise ValueError(f"expected 3D data, got shape {data.shape}")
    if min(data.shape) < 1:
        raise ValueError(f"voxel counts must be positive, got {data.shape}")
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ValueError(f"spacing components must be > 0, got {spacing}")
    if affine.shape != (4, 4) or not np.allclose(affine[3], [0, 0, 0, 1]):
        raise ValueError("grid_to_world must be a 4x4 homogeneous affine")
    if abs(np.linalg.det(affine[:3, :3])) <= 1e-12:
        raise ValueError("grid_to_world upper-left 3x3 block is singular")


@dataclass(frozen=True)
class Volume:
    """A scalar field on a regular 3D grid.

    Parameters
    ----------
    data : ndarray, shape (nx, ny, nz)
        Voxel values; stored as float64, read-only.
    spacing : tuple of 3 floats, optional
        Voxel size in mm. Defaults to 1 mm isotropic.
    grid_to_world : (4, 4) ndarray, optional
        Homogeneous voxel-to-mm affine. Defaults to ``diag(spacing)``.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    grid_to_world: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        spacing = tuple(float(s) for s in self.spacing)
        affine = (
            _default_affine(spacing)
            if self.grid_to_world is None
            else np.asarray(self.grid_to_world, dtype=np.float64)
        )
        _validate_grid(data, spacing, affine)
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "grid_to_world", _freeze(affine))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same grid, new values."""
        return Volume(data, self.spacing, self.grid_to_world)


@dataclass(frozen=True)
class LabelMap:
    """An integer anatomical-label field; label 0 is reserved for background."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    grid_to_world: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.integer):
            rounded = np.rint(np.asarray(data, dtype=np.float64))
            if not np.array_equal(rounded, data):
                raise ValueError("label data must be integer-valued")
            data = rounded
        data = data.astype(np.int32)
        if data.size and data.min() < 0:
            raise ValueError("labels must be non-negative")
        spacing = tuple(float(s) for s in self.spacing)
        affine = (
            _default_affine(spacing)
            if self.grid_to_world is None
            else np.asarray(self.grid_to_world, dtype=np.float64)
        )
        _validate_grid(data, spacing, affine)
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "grid_to_world", _freeze(affine))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def label_set(self) -> tuple[int, ...]:
        """Sorted unique labels present in the map."""
        return tuple(int(v) for v in np.unique(self.data))

    def with_data(self, data: np.ndarray) -> "LabelMap":
        return LabelMap(data, self.spacing, self.grid_to_world)


@dataclass(frozen=True)
class VolumeStack:
    """An ordered list of geometry-identical volumes (feature channels)."""

    channels: tuple[Volume, ...]

    def __post_init__(self):
        channels = tuple(self.channels)
        if len(channels) < 1:
            raise ValueError("a stack needs at least one channel")
        for ch in channels[1:]:
            check_same_geometry(channels[0], ch)
        object.__setattr__(self, "channels", channels)

    @property
    def channel_count(self) -> int:
        return len(self.channels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.channels[0].dims

    @property
    def spacing(self) -> tuple[float, float, float]:
        return self.channels[0].spacing

    @property
    def grid_to_world(self) -> np.ndarray:
        return self.channels[0].grid_to_world

    def as_array(self) -> np.ndarray:
        """Channel-last (nx, ny, nz, c) copy of the stack."""
        return np.stack([ch.data for ch in self.channels], axis=-1)


def same_geometry(a, b, tol: float = 1e-5) -> bool:
    """True when two grid-carrying objects share dims, spacing, and affine."""
    return (
        tuple(a.dims) == tuple(b.dims)
        and np.allclose(a.spacing, b.spacing, atol=tol)
        and np.allclose(a.grid_to_world, b.grid_to_world, atol=tol)
    )


def check_same_geometry(a, b, tol: float = 1e-5) -> None:
    if not same_geometry(a, b, tol):
        raise GeometryMismatch(
            f"grids differ: dims {tuple(a.dims)} vs {tuple(b.dims)}, "
            f"spacing {a.spacing} vs {b.spacing}"
        )


# -- coordinate helpers -------------------------------------------------------

def voxel_to_world(affine: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a homogeneous affine to (..., 3) voxel coordinates."""
    p = np.asarray(pts, dtype=np.float64)
    return p @ affine[:3, :3].T + affine[:3, 3]


def world_to_voxel(affine: np.ndarray, pts: np.ndarray) -> np.ndarray:
    inv = np.linalg.inv(affine)
    return voxel_to_world(inv, pts)


def voxel_index_grid(dims) -> np.ndarray:
    """(nx, ny, nz, 3) array of voxel indices."""
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def world_coordinate_grid(dims, affine: np.ndarray) -> np.ndarray:
    """(nx, ny, nz, 3) array of voxel-center world positions."""
    return voxel_to_world(affine, voxel_index_grid(dims))


# -- sampling -----------------------------------------------------------------

def sample_trilinear(data: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Vectorized trilinear interpolation at (..., 3) voxel coordinates.

    Points outside ``[0, n-1]`` on any axis evaluate to 0 (zero padding).
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    nx, ny, nz = data.shape
    p = np.asarray(pts, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]

    inside = (
        (x >= 0.0) & (x <= nx - 1.0)
        & (y >= 0.0) & (y <= ny - 1.0)
        & (z >= 0.0) & (z <= nz - 1.0)
    )
    # clamp so corner indexing is safe for the (masked-out) outside points
    xc = np.clip(x, 0.0, nx - 1.0)
    yc = np.clip(y, 0.0, ny - 1.0)
    zc = np.clip(z, 0.0, nz - 1.0)

    ix0 = np.floor(xc).astype(np.int64)
    iy0 = np.floor(yc).astype(np.int64)
    iz0 = np.floor(zc).astype(np.int64)
    ix1 = np.minimum(ix0 + 1, nx - 1)
    iy1 = np.minimum(iy0 + 1, ny - 1)
    iz1 = np.minimum(iz0 + 1, nz - 1)

    fx = xc - ix0
    fy = yc - iy0
    fz = zc - iz0
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz

    flat = data.ravel()
    syx, sy = ny * nz, nz

    def corner(ix, iy, iz):
        return flat[ix * syx + iy * sy + iz]

    out = (
        corner(ix0, iy0, iz0) * gx * gy * gz
        + corner(ix1, iy0, iz0) * fx * gy * gz
        + corner(ix0, iy1, iz0) * gx * fy * gz
        + corner(ix0, iy0, iz1) * gx * gy * fz
        + corner(ix1, iy1, iz0) * fx * fy * gz
        + corner(ix1, iy0, iz1) * fx * gy * fz
        + corner(ix0, iy1, iz1) * gx * fy * fz
        + corner(ix1, iy1, iz1) * fx * fy * fz
    )
    return np.where(inside, out, 0.0)


def sample_trilinear_channels(data: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a channel-stacked ``(nx, ny, nz, c)`` array.

    One index/weight computation shared by all channels; per channel this
    matches :func:`sample_trilinear` (zero outside ``[0, n-1]`` per axis).
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    nx, ny, nz, nc = data.shape
    p = np.asarray(pts, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]

    inside = (
        (x >= 0.0) & (x <= nx - 1.0)
        & (y >= 0.0) & (y <= ny - 1.0)
        & (z >= 0.0) & (z <= nz - 1.0)
    )
    xc = np.clip(x, 0.0, nx - 1.0)
    yc = np.clip(y, 0.0, ny - 1.0)
    zc = np.clip(z, 0.0, nz - 1.0)

    ix0 = np.floor(xc).astype(np.int64)
    iy0 = np.floor(yc).astype(np.int64)
    iz0 = np.floor(zc).astype(np.int64)
    ix1 = np.minimum(ix0 + 1, nx - 1)
    iy1 = np.minimum(iy0 + 1, ny - 1)
    iz1 = np.minimum(iz0 + 1, nz - 1)

    fx = xc - ix0
    fy = yc - iy0
    fz = zc - iz0
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz

    flat = data.reshape(-1, nc)
    syx, sy = ny * nz, nz

    def corner(ix, iy, iz, w):
        return flat[ix * syx + iy * sy + iz] * w[..., None]

    out = (
        corner(ix0, iy0, iz0, gx * gy * gz)
        + corner(ix1, iy0, iz0, fx * gy * gz)
        + corner(ix0, iy1, iz0, gx * fy * gz)
        + corner(ix0, iy0, iz1, gx * gy * fz)
        + corner(ix1, iy1, iz0, fx * fy * gz)
        + corner(ix1, iy0, iz1, fx * gy * fz)
        + corner(ix0, iy1, iz1, gx * fy * fz)
        + corner(ix1, iy1, iz1, fx * fy * fz)
    )
    return np.where(inside[..., None], out, 0.0)


def sample_nearest(data: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Nearest-neighbour sampling; ties break toward the lower index.

    Outside ``[0, n-1]^3`` the background label 0 is returned.
    """
    data = np.ascontiguousarray(data)
    nx, ny, nz = data.shape
    p = np.asarray(pts, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]

    inside = (
        (x >= 0.0) & (x <= nx - 1.0)
        & (y >= 0.0) & (y <= ny - 1.0)
        & (z >= 0.0) & (z <= nz - 1.0)
    )
    # ceil(p - 0.5) rounds halves down, i.e. toward the lower index
    ix = np.clip(np.ceil(x - 0.5), 0, nx - 1).astype(np.int64)
    iy = np.clip(np.ceil(y - 0.5), 0, ny - 1).astype(np.int64)
    iz = np.clip(np.ceil(z - 0.5), 0, nz - 1).astype(np.int64)

    out = data.ravel()[ix * (ny * nz) + iy * nz + iz]
    return np.where(inside, out, np.zeros((), dtype=data.dtype))


def trilinear_sample(v: Volume, p) -> float:
    """Trilinear interpolation of ``v`` at one continuous voxel coordinate."""
    return float(sample_trilinear(v.data, np.asarray(p, dtype=np.float64)))


def nearest_sample(lm: LabelMap, p) -> int:
    """Label of the voxel nearest to ``p``; 0 outside the grid."""
    return int(sample_nearest(lm.data, np.asarray(p, dtype=np.float64)))


# -- elementwise / differential ops -------------------------------------------

def spatial_gradient(v: Volume) -> VolumeStack:
    """Per-axis intensity gradient in intensity/mm.

    Central differences in the interior, one-sided at faces, each axis
    divided by its spacing so the result is resolution-consistent.
    """
    if min(v.dims) < 2:
        raise DegenerateGrid(f"gradient needs >= 2 voxels per axis, got {v.dims}")
    gx, gy, gz = np.gradient(v.data, *v.spacing, edge_order=1)
    return VolumeStack(tuple(v.with_data(g) for g in (gx, gy, gz)))


def minmax_normalize(v: Volume) -> Volume:
    """Affine rescale of the values to [0, 1]; constant volumes map to zero."""
    lo = float(v.data.min())
    hi = float(v.data.max())
    if hi - lo <= 0.0:
        return v.with_data(np.zeros(v.dims))
    return v.with_data((v.data - lo) / (hi - lo))
