"""Random deformations: affine + stationary-velocity-field composition.

A :class:`DeformationField` stores, for every voxel of its grid, a world-frame
displacement ``u`` such that the field maps the voxel's world position ``x``
to ``x + u(x)``. Warping follows the backward convention: the output at ``x``
samples the input at the mapped point, so no scatter holes appear.

The generated field is ``T ∘ A``: an affine (rotation/scaling/shearing about
the grid's world center, plus translation) followed by the integration of a
smooth stationary velocity field via scaling-and-squaring. Generation records
provenance, which makes inversion cheap and accurate (``A⁻¹ ∘ T⁻¹`` with
``T⁻¹`` integrated from the negated velocities); provenance-free fields fall
back to fixed-point inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import NonFiniteField, NotInvertible
from .volume import (
    LabelMap,
    Volume,
    VolumeStack,
    same_geometry,
    sample_nearest,
    sample_trilinear,
    sample_trilinear_channels,
    voxel_to_world,
    world_coordinate_grid,
    world_to_voxel,
)

__all__ = [
    "DeformationConfig",
    "AffineParams",
    "SVF",
    "DeformationField",
    "sample_affine",
    "sample_svf",
    "integrate_svf",
    "compose",
    "invert",
    "warp_volume",
    "warp_labels",
    "warp_stack",
    "affine_to_field",
    "identity_field",
    "build_deformation",
]

DEFAULT_SQUARING_STEPS = 7


@dataclass(frozen=True)
class DeformationConfig:
    """Sampling ranges for the random deformation (shared by all severity levels).

    Angles in degrees, translations in mm. ``svf_mu_*`` scale the velocity
    amplitude as a fraction of the shortest volume extent; ``svf_sigma_max``
    caps the Gaussian smoothing (in control-grid voxels) of the velocities.
    """

    rot_max: float = 15.0
    scale_max: float = 0.2
    shear_max: float = 0.2
    trans_max: float = 0.0
    svf_mu_min: float = 0.03
    svf_mu_max: float = 0.06
    svf_sigma_max: float = 4.0
    svf_control_spacing: float = 16.0
    squaring_steps: int = DEFAULT_SQUARING_STEPS

    @classmethod
    def all_off(cls) -> "DeformationConfig":
        """Ranges collapsed to zero: sampling yields the identity map."""
        return cls(rot_max=0.0, scale_max=0.0, shear_max=0.0, trans_max=0.0,
                   svf_mu_min=0.0, svf_mu_max=0.0)


@dataclass(frozen=True)
class AffineParams:
    """Rotation (deg), scaling, shearing, translation (mm) of the linear part."""

    rotation: tuple[float, float, float]
    scaling: tuple[float, float, float]
    shearing: tuple[float, float, float]
    translation: tuple[float, float, float]

    def linear(self) -> np.ndarray:
        """3x3 rotation @ shear @ scale matrix."""
        ax, ay, az = (math.radians(a) for a in self.rotation)
        rx = np.array([[1, 0, 0],
                       [0, math.cos(ax), -math.sin(ax)],
                       [0, math.sin(ax), math.cos(ax)]])
        ry = np.array([[math.cos(ay), 0, math.sin(ay)],
                       [0, 1, 0],
                       [-math.sin(ay), 0, math.cos(ay)]])
        rz = np.array([[math.cos(az), -math.sin(az), 0],
                       [math.sin(az), math.cos(az), 0],
                       [0, 0, 1]])
        hxy, hxz, hyz = self.shearing
        shear = np.array([[1.0, hxy, hxz],
                          [0.0, 1.0, hyz],
                          [0.0, 0.0, 1.0]])
        return rx @ ry @ rz @ shear @ np.diag(self.scaling)

    def matrix(self, center) -> np.ndarray:
        """4x4 world-frame map pivoting the linear part about ``center`` (mm)."""
        lin = self.linear()
        if abs(np.linalg.det(lin)) <= 1e-12:
            raise ValueError(f"affine parameters give a singular matrix: {self}")
        c = np.asarray(center, dtype=np.float64)
        m = np.eye(4)
        m[:3, :3] = lin
        m[:3, 3] = c - lin @ c + np.asarray(self.translation, dtype=np.float64)
        return m

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))


@dataclass(frozen=True)
class SVF:
    """Stationary velocity field on a coarse axis-aligned control lattice.

    ``velocities`` are mm/unit-time vectors at control points; the lattice
    starts at ``origin`` (world mm) with ``control_spacing`` between points,
    and covers the full-resolution target grid recorded in ``grid_*``.
    """

    velocities: np.ndarray  # (cx, cy, cz, 3)
    control_spacing: float
    origin: tuple[float, float, float]
    smoothing_std: float
    amplitude: float
    grid_dims: tuple[int, int, int]
    grid_spacing: tuple[float, float, float]
    grid_to_world: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.velocities, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NonFiniteField("SVF velocities contain NaN/Inf")
        if self.control_spacing <= max(self.grid_spacing):
            raise ValueError(
                f"control spacing {self.control_spacing} must exceed voxel "
                f"spacing {self.grid_spacing}"
            )
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "velocities", v)
        g2w = np.array(self.grid_to_world, dtype=np.float64, copy=True)
        g2w.setflags(write=False)
        object.__setattr__(self, "grid_to_world", g2w)

    def negated(self) -> "SVF":
        return replace(self, velocities=-np.asarray(self.velocities))


@dataclass(frozen=True)
class _Provenance:
    affine: AffineParams
    svf: SVF
    steps: int
    inverted: bool = False


@dataclass(frozen=True)
class DeformationField:
    """Dense world-frame displacement (mm) on a voxel grid."""

    displacement: np.ndarray  # (nx, ny, nz, 3)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    grid_to_world: np.ndarray = field(default=None)  # type: ignore[assignment]
    provenance: _Provenance | None = None

    def __post_init__(self):
        u = np.asarray(self.displacement, dtype=np.float64)
        if u.ndim != 4 or u.shape[-1] != 3:
            raise ValueError(f"displacement must be (nx, ny, nz, 3), got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise NonFiniteField("displacement contains NaN/Inf")
        spacing = tuple(float(s) for s in self.spacing)
        affine = self.grid_to_world
        if affine is None:
            affine = np.eye(4)
            affine[0, 0], affine[1, 1], affine[2, 2] = spacing
        affine = np.array(affine, dtype=np.float64, copy=True)
        u = u.copy()
        u.setflags(write=False)
        affine.setflags(write=False)
        object.__setattr__(self, "displacement", u)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "grid_to_world", affine)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.displacement.shape[:3]

    def channels(self) -> VolumeStack:
        """The displacement components as a 3-channel stack (for serialization)."""
        return VolumeStack(tuple(
            Volume(self.displacement[..., c], self.spacing, self.grid_to_world)
            for c in range(3)
        ))

    def mapped_points(self) -> np.ndarray:
        """World position each voxel maps to: x + u(x), shape (nx, ny, nz, 3)."""
        return world_coordinate_grid(self.dims, self.grid_to_world) + self.displacement

    def grid_center_world(self) -> np.ndarray:
        half = (np.asarray(self.dims, dtype=np.float64) - 1.0) / 2.0
        return voxel_to_world(self.grid_to_world, half)


def _sample_displacement(fld: DeformationField, world_pts: np.ndarray) -> np.ndarray:
    """Trilinear displacement lookup at world points (identity outside the grid)."""
    p = world_to_voxel(fld.grid_to_world, world_pts)
    return sample_trilinear_channels(fld.displacement, p)


def identity_field(like) -> DeformationField:
    """Zero displacement on the grid of ``like`` (anything with dims/spacing/affine)."""
    return DeformationField(
        np.zeros(tuple(like.dims) + (3,)), like.spacing, like.grid_to_world
    )


def affine_to_field(matrix: np.ndarray, like) -> DeformationField:
    """Exact displacement field of a 4x4 world-frame affine on ``like``'s grid."""
    xs = world_coordinate_grid(like.dims, like.grid_to_world)
    mapped = voxel_to_world(np.asarray(matrix, dtype=np.float64), xs)
    return DeformationField(mapped - xs, like.spacing, like.grid_to_world)


# -- sampling the random transform --------------------------------------------

def sample_affine(rng: np.random.Generator, cfg: DeformationConfig) -> AffineParams:
    """Draw affine parameters uniformly within the configured ranges."""
    rot = rng.uniform(-cfg.rot_max, cfg.rot_max, 3)
    scale = rng.uniform(1.0 - cfg.scale_max, 1.0 + cfg.scale_max, 3)
    shear = rng.uniform(-cfg.shear_max, cfg.shear_max, 3)
    trans = rng.uniform(-cfg.trans_max, cfg.trans_max, 3)
    return AffineParams(tuple(rot), tuple(scale), tuple(shear), tuple(trans))


def _world_bbox(like) -> tuple[np.ndarray, np.ndarray]:
    dims = np.asarray(like.dims, dtype=np.float64) - 1.0
    corners = np.array([[i, j, k] for i in (0, dims[0])
                        for j in (0, dims[1]) for k in (0, dims[2])])
    w = voxel_to_world(like.grid_to_world, corners)
    return w.min(axis=0), w.max(axis=0)


def sample_svf(rng: np.random.Generator, cfg: DeformationConfig, like) -> SVF:
    """Draw a smooth random velocity field covering ``like``'s grid.

    The control lattice (spacing ``cfg.svf_control_spacing`` mm) extends one
    step beyond the volume's world bounding box. White-noise control vectors
    are Gaussian-smoothed with a std drawn in [1, sigma_max] control voxels,
    then rescaled so the peak vector magnitude equals the drawn amplitude:
    uniform in [mu_min, mu_max] times the shortest volume extent.
    """
    lo, hi = _world_bbox(like)
    extent = hi - lo
    step = float(cfg.svf_control_spacing)
    amplitude = float(rng.uniform(cfg.svf_mu_min, cfg.svf_mu_max)) * float(extent.min())
    sigma = float(rng.uniform(min(1.0, cfg.svf_sigma_max), cfg.svf_sigma_max))
    counts = tuple(int(np.ceil(e / step)) + 3 for e in extent)
    noise = rng.standard_normal(counts + (3,))

    if amplitude > 0.0:
        smoothed = np.stack(
            [gaussian_filter(noise[..., c], sigma, mode="nearest") for c in range(3)],
            axis=-1,
        )
        peak = float(np.sqrt((smoothed ** 2).sum(axis=-1)).max())
        velocities = smoothed * (amplitude / peak) if peak > 0 else smoothed * 0.0
    else:
        velocities = np.zeros(counts + (3,))

    return SVF(
        velocities=velocities,
        control_spacing=step,
        origin=tuple(lo - step),
        smoothing_std=sigma,
        amplitude=amplitude,
        grid_dims=tuple(like.dims),
        grid_spacing=tuple(like.spacing),
        grid_to_world=np.asarray(like.grid_to_world, dtype=np.float64),
    )


def _upsample_svf(svf: SVF) -> np.ndarray:
    """Velocities resampled onto the full-resolution grid, in mm."""
    xs = world_coordinate_grid(svf.grid_dims, svf.grid_to_world)
    ctrl = (xs - np.asarray(svf.origin)) / svf.control_spacing
    return np.stack(
        [sample_trilinear(svf.velocities[..., c], ctrl) for c in range(3)], axis=-1
    )


def integrate_svf(svf: SVF, steps: int = DEFAULT_SQUARING_STEPS) -> DeformationField:
    """exp(v) by scaling and squaring on the SVF's full-resolution grid.

    The coarse velocities are trilinearly upsampled first; the halved field
    is then self-composed ``steps`` times.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    v = _upsample_svf(svf)
    if not np.all(np.isfinite(v)):
        raise NonFiniteField("upsampled velocity field contains NaN/Inf")
    disp = v / (2.0 ** steps)
    fld = DeformationField(disp, svf.grid_spacing, svf.grid_to_world)
    xs = world_coordinate_grid(svf.grid_dims, svf.grid_to_world)
    for _ in range(steps):
        fld = DeformationField(
            fld.displacement + _sample_displacement(fld, xs + fld.displacement),
            svf.grid_spacing,
            svf.grid_to_world,
        )
    return fld


# -- algebra -------------------------------------------------------------------

def compose(
    outer: DeformationField,
    inner: "DeformationField | AffineParams | np.ndarray",
) -> DeformationField:
    """The map ``x -> outer(inner(x))`` as a dense field.

    ``inner`` may be a field, a 4x4 world affine, or :class:`AffineParams`
    (pivoted about the outer grid's world center). The result lives on the
    inner field's grid (outer's grid for affine inner), with the outer
    displacement treated as identity beyond its own grid.
    """
    if isinstance(inner, AffineParams):
        inner = affine_to_field(inner.matrix(outer.grid_center_world()), outer)
    elif isinstance(inner, np.ndarray):
        inner = affine_to_field(inner, outer)
    mapped = inner.mapped_points()
    total = mapped + _sample_displacement(outer, mapped)
    xs = world_coordinate_grid(inner.dims, inner.grid_to_world)
    return DeformationField(total - xs, inner.spacing, inner.grid_to_world)


def build_deformation(
    affine: AffineParams,
    svf: SVF,
    steps: int = DEFAULT_SQUARING_STEPS,
    inverted: bool = False,
) -> DeformationField:
    """``T ∘ A`` from sampled parameters (or its inverse ``A⁻¹ ∘ T⁻¹``)."""
    if not inverted:
        t_field = integrate_svf(svf, steps)
        fld = compose(t_field, affine)
    else:
        t_inv = integrate_svf(svf.negated(), steps)
        a_inv = np.linalg.inv(affine.matrix(t_inv.grid_center_world()))
        fld = compose(affine_to_field(a_inv, t_inv), t_inv)
    return replace(fld, provenance=_Provenance(affine, svf, steps, inverted))


def invert(fld: DeformationField, iterations: int = 20, step: float = 1.0) -> DeformationField:
    """Inverse map of a deformation field.

    Provenance-bearing fields are inverted analytically (affine inverse plus
    integration of the negated velocities). Otherwise a fixed-point iteration
    ``u⁻¹(x) <- -u(x + u⁻¹(x))`` runs; it fails with :class:`NotInvertible`
    when the final update still moves points by more than one voxel on
    average. Convergence is judged only at voxels whose iterates stayed on
    the grid — elsewhere the lookup falls back to the identity extension and
    says nothing about the fixed point.
    """
    if fld.provenance is not None:
        p = fld.provenance
        return build_deformation(p.affine, p.svf, p.steps, inverted=not p.inverted)

    xs = world_coordinate_grid(fld.dims, fld.grid_to_world)
    inv = -fld.displacement
    delta = np.zeros_like(inv)
    for _ in range(iterations):
        target = -_sample_displacement(fld, xs + inv)
        delta = target - inv
        inv = inv + step * delta
    vox_pts = world_to_voxel(fld.grid_to_world, xs + inv)
    on_grid = np.all(
        (vox_pts >= 0.0) & (vox_pts <= np.asarray(fld.dims, dtype=np.float64) - 1.0),
        axis=-1,
    )
    if not on_grid.any():
        raise NotInvertible("every iterate left the grid; nothing to verify against")
    voxel_delta = np.abs(delta) / np.asarray(fld.spacing)
    residual = float(np.sqrt((voxel_delta ** 2).sum(axis=-1))[on_grid].mean())
    if residual > 1.0:
        raise NotInvertible(f"fixed-point inversion residual {residual:.3f} voxels > 1")
    return DeformationField(inv, fld.spacing, fld.grid_to_world)


# -- warping -------------------------------------------------------------------

def _is_identity_on(fld: DeformationField, target) -> bool:
    return not fld.displacement.any() and same_geometry(fld, target)


def warp_volume(v: Volume, fld: DeformationField) -> Volume:
    """Backward-warp: output(x) = v(fld(x)), trilinear, zero outside.

    The output lives on the field's grid, which usually coincides with the
    volume's but may differ (e.g. warping into an atlas frame). A zero field
    on the volume's own grid passes the data through untouched.
    """
    if _is_identity_on(fld, v):
        return v
    p = world_to_voxel(v.grid_to_world, fld.mapped_points())
    return Volume(sample_trilinear(v.data, p), fld.spacing, fld.grid_to_world)


def warp_labels(lm: LabelMap, fld: DeformationField) -> LabelMap:
    """Backward-warp with nearest sampling; never invents labels."""
    if _is_identity_on(fld, lm):
        return lm
    p = world_to_voxel(lm.grid_to_world, fld.mapped_points())
    return LabelMap(sample_nearest(lm.data, p), fld.spacing, fld.grid_to_world)


def warp_stack(stack: VolumeStack, fld: DeformationField) -> VolumeStack:
    """Warp each channel of a stack by the same field."""
    return VolumeStack(tuple(warp_volume(ch, fld) for ch in stack.channels))
