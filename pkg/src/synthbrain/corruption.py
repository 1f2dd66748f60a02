"""Image corruption: bias field, resolution simulation, noise.

Three severity presets (mild / medium / severe) control how aggressive each
stage is. Every random draw is captured in a :class:`CorruptionRecord`, and
``apply_corruption`` replays a record bit-exactly — ``corrupt`` itself is
implemented as sample-record-then-replay, so the round trip is an identity
by construction. Records double as ground truth for downstream tasks
(e.g. the true bias field for bias estimation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .deformation import DeformationConfig
from .volume import (
    Volume,
    check_same_geometry,
    minmax_normalize,
    sample_trilinear,
    voxel_index_grid,
)

__all__ = [
    "SeverityConfig",
    "BiasField",
    "CorruptionRecord",
    "sample_bias_field",
    "apply_bias",
    "simulate_resolution",
    "add_noise",
    "corrupt",
    "apply_corruption",
    "SEVERITY_LEVELS",
]

SEVERITY_LEVELS = ("mild", "medium", "severe")

# FWHM of a Gaussian = 2*sqrt(2*ln 2) * sigma
_FWHM = 2.354820045030949


@dataclass(frozen=True)
class SeverityConfig:
    """One corruption preset: stage probabilities and parameter ranges.

    Deformation ranges are identical across levels; what changes with
    severity is the chance of degraded resolution, the bias-field log
    statistics, and the noise std (quoted on a 0-255 intensity scale).
    """

    level: str
    p_low_field: float
    p_anisotropic: float
    bias_mu: tuple[float, float]
    bias_sigma: tuple[float, float]
    noise_sigma: tuple[float, float]  # 0-255 scale
    deformation: DeformationConfig = DeformationConfig()
    low_field_spacing: tuple[float, float] = (1.5, 4.0)
    anisotropic_spacing: tuple[float, float] = (2.5, 7.0)
    bias_grid: int = 4

    def __post_init__(self):
        for name in ("p_low_field", "p_anisotropic"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.p_low_field + self.p_anisotropic > 1.0:
            raise ValueError("p_low_field + p_anisotropic must not exceed 1")
        for name in ("bias_mu", "bias_sigma", "noise_sigma",
                     "low_field_spacing", "anisotropic_spacing"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range has min {lo} > max {hi}")
        if not 2 <= self.bias_grid <= 8:
            raise ValueError(f"bias_grid must be in [2, 8], got {self.bias_grid}")

    @classmethod
    def mild(cls) -> "SeverityConfig":
        return cls("mild", 0.1, 0.0, (0.01, 0.02), (0.01, 0.05), (0.01, 1.0))

    @classmethod
    def medium(cls) -> "SeverityConfig":
        return cls("medium", 0.3, 0.1, (0.02, 0.03), (0.05, 0.3), (0.5, 5.0))

    @classmethod
    def severe(cls) -> "SeverityConfig":
        return cls("severe", 0.5, 0.25, (0.02, 0.04), (0.1, 0.6), (5.0, 15.0))

    @classmethod
    def all_off(cls) -> "SeverityConfig":
        """Every stage disabled: corrupt() becomes the identity."""
        return cls("off", 0.0, 0.0, (0.0, 0.0), (0.0, 0.0), (0.0, 0.0),
                   deformation=DeformationConfig.all_off())

    @classmethod
    def by_name(cls, name: str) -> "SeverityConfig":
        try:
            return {"mild": cls.mild, "medium": cls.medium,
                    "severe": cls.severe, "off": cls.all_off}[name.lower()]()
        except KeyError:
            raise ValueError(
                f"unknown severity {name!r} (expected one of {SEVERITY_LEVELS})"
            ) from None


@dataclass(frozen=True)
class BiasField:
    """Smooth multiplicative intensity field: exp of an upsampled coarse log-grid."""

    coarse_log: np.ndarray
    field: Volume
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        coarse = np.asarray(self.coarse_log, dtype=np.float64)
        if coarse.ndim != 3 or max(coarse.shape) > 8:
            raise ValueError(f"coarse grid must be 3D with <= 8 points per axis, got {coarse.shape}")
        if not np.all(np.isfinite(coarse)):
            raise ValueError("coarse log-field contains NaN/Inf")
        if self.field.data.min() <= 0:
            raise ValueError("bias field must be strictly positive")
        coarse = coarse.copy()
        coarse.setflags(write=False)
        object.__setattr__(self, "coarse_log", coarse)

    @classmethod
    def from_coarse(cls, coarse_log: np.ndarray, like,
                    mu: float = 0.0, sigma: float = 0.0) -> "BiasField":
        """Trilinear-upsample a coarse log grid onto ``like``'s grid and exponentiate."""
        coarse = np.asarray(coarse_log, dtype=np.float64)
        dims = tuple(like.dims)
        idx = voxel_index_grid(dims)
        # stretch so coarse corners land exactly on volume corners
        scale = [(c - 1) / max(n - 1, 1) for c, n in zip(coarse.shape, dims)]
        pts = idx * np.asarray(scale)
        log_full = sample_trilinear(coarse, pts)
        return cls(coarse, Volume(np.exp(log_full), like.spacing, like.grid_to_world),
                   float(mu), float(sigma))


def sample_bias_field(rng: np.random.Generator, cfg: SeverityConfig, like) -> BiasField:
    """Draw a random bias field for ``like``'s grid at the given severity.

    Coarse log-values are N(mu_b, sigma_b) with mu_b, sigma_b themselves
    uniform in the preset's ranges.
    """
    mu_b = float(rng.uniform(*cfg.bias_mu))
    sigma_b = float(rng.uniform(*cfg.bias_sigma))
    g = cfg.bias_grid
    coarse = rng.normal(mu_b, sigma_b, (g, g, g))
    return BiasField.from_coarse(coarse, like, mu_b, sigma_b)


def apply_bias(v: Volume, b: BiasField) -> Volume:
    """Voxelwise product with the multiplicative field."""
    check_same_geometry(v, b.field)
    return v.with_data(v.data * b.field.data)


def _sample_clamped(data: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Trilinear with edge replication (resampling must not darken borders)."""
    n = np.asarray(data.shape, dtype=np.float64) - 1.0
    return sample_trilinear(data, np.clip(pts, 0.0, n))


def _resample_through(data: np.ndarray, ratios) -> np.ndarray:
    """Downsample by per-axis ratios (>= 1) then trilinear-upsample back."""
    dims = data.shape
    coarse_dims = tuple(int(np.floor((n - 1) / r)) + 1 for n, r in zip(dims, ratios))
    down_pts = voxel_index_grid(coarse_dims) * np.asarray(ratios)
    down = _sample_clamped(data, down_pts)
    up_pts = voxel_index_grid(dims) / np.asarray(ratios)
    return _sample_clamped(down, up_pts)


def _apply_resolution(v: Volume, target_spacing) -> Volume:
    ratios = [t / c if t > c else 1.0 for t, c in zip(target_spacing, v.spacing)]
    if all(r == 1.0 for r in ratios):
        return v
    sigmas = [r / _FWHM if r > 1.0 else 0.0 for r in ratios]
    blurred = gaussian_filter(v.data, sigmas, mode="nearest")
    return v.with_data(_resample_through(blurred, ratios))


def simulate_resolution(
    v: Volume, rng: np.random.Generator, cfg: SeverityConfig
) -> tuple[Volume, tuple[float, float, float]]:
    """Simulate acquisition at a random lower resolution, back on the input grid.

    With probability ``p_low_field`` an isotropic target spacing is drawn;
    with probability ``p_anisotropic`` a single random axis gets thick
    slices; otherwise the volume passes through untouched. The degraded
    axis is blurred (slice-profile FWHM = target spacing), subsampled at
    the target spacing, and trilinearly upsampled back, so output dims
    always equal input dims. Returns the simulated spacing as metadata.
    """
    target, _ = _draw_resolution_target(rng, cfg, v.spacing)
    return _apply_resolution(v, target), target


def _draw_resolution_target(rng, cfg: SeverityConfig, current):
    u = float(rng.uniform())
    if u < cfg.p_low_field:
        iso = float(rng.uniform(*cfg.low_field_spacing))
        return (iso, iso, iso), "low-field"
    if u < cfg.p_low_field + cfg.p_anisotropic:
        axis = int(rng.integers(3))
        thick = float(rng.uniform(*cfg.anisotropic_spacing))
        target = list(current)
        target[axis] = thick
        return tuple(target), "anisotropic"
    return tuple(float(c) for c in current), "native"


# -- noise ---------------------------------------------------------------------

def _apply_noise(v: Volume, sigma: float, seed: int) -> Volume:
    noise = np.random.default_rng(seed).normal(0.0, sigma, v.dims)
    return v.with_data(np.clip(v.data + noise, 0.0, 1.0))


def add_noise(v: Volume, rng: np.random.Generator, cfg: SeverityConfig) -> Volume:
    """Additive white Gaussian noise, std uniform in the preset range, clamp to [0,1]."""
    sigma = float(rng.uniform(*cfg.noise_sigma)) / 255.0
    if sigma == 0.0:
        return v
    seed = int(rng.integers(np.iinfo(np.int64).max))
    return _apply_noise(v, sigma, seed)


# -- full pipeline with replayable records --------------------------------------

@dataclass(frozen=True)
class CorruptionRecord:
    """Everything needed to replay one corruption bit-exactly.

    Stage entries are ``None`` when the stage did not alter the volume, so
    an all-off configuration leaves an empty record.
    """

    level: str
    bias: dict | None = None          # {mu, sigma, coarse: nested list}
    resolution: dict | None = None    # {target_spacing: [3], kind}
    noise: dict | None = None         # {sigma, seed}
    renormalized: bool = False

    @property
    def empty(self) -> bool:
        return self.bias is None and self.resolution is None and self.noise is None

    def to_json_dict(self) -> dict:
        return {
            "level": self.level,
            "bias": self.bias,
            "resolution": self.resolution,
            "noise": self.noise,
            "renormalized": self.renormalized,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "CorruptionRecord":
        return cls(
            level=d["level"],
            bias=d.get("bias"),
            resolution=d.get("resolution"),
            noise=d.get("noise"),
            renormalized=bool(d.get("renormalized", False)),
        )

    @classmethod
    def from_json(cls, text: str) -> "CorruptionRecord":
        return cls.from_json_dict(json.loads(text))

    def bias_field(self, like) -> BiasField | None:
        """Reconstruct the ground-truth bias field on ``like``'s grid."""
        if self.bias is None:
            return None
        return BiasField.from_coarse(
            np.asarray(self.bias["coarse"], dtype=np.float64), like,
            self.bias.get("mu", 0.0), self.bias.get("sigma", 0.0),
        )


def sample_corruption_record(
    rng: np.random.Generator, cfg: SeverityConfig, like
) -> CorruptionRecord:
    """Draw all corruption parameters for one sample without touching voxels."""
    bias = None
    if cfg.bias_mu != (0.0, 0.0) or cfg.bias_sigma != (0.0, 0.0):
        b = sample_bias_field(rng, cfg, like)
        bias = {"mu": b.mu, "sigma": b.sigma, "coarse": b.coarse_log.tolist()}

    resolution = None
    if cfg.p_low_field > 0.0 or cfg.p_anisotropic > 0.0:
        target, kind = _draw_resolution_target(rng, cfg, like.spacing)
        if kind != "native":
            resolution = {"target_spacing": list(target), "kind": kind}

    noise = None
    if cfg.noise_sigma != (0.0, 0.0):
        sigma = float(rng.uniform(*cfg.noise_sigma)) / 255.0
        if sigma > 0.0:
            seed = int(rng.integers(np.iinfo(np.int64).max))
            noise = {"sigma": sigma, "seed": seed}

    rec = CorruptionRecord(cfg.level, bias, resolution, noise)
    return replace(rec, renormalized=not rec.empty)


def apply_corruption(v: Volume, record: CorruptionRecord) -> Volume:
    """Replay a record: bias, then resolution, then noise, then renormalize."""
    out = v
    if record.bias is not None:
        out = apply_bias(out, record.bias_field(v))
    if record.resolution is not None:
        out = _apply_resolution(out, tuple(record.resolution["target_spacing"]))
    if record.noise is not None:
        out = _apply_noise(out, float(record.noise["sigma"]), int(record.noise["seed"]))
    if record.renormalized:
        out = minmax_normalize(out)
    return out


def corrupt(
    v: Volume, rng: np.random.Generator, cfg: SeverityConfig
) -> tuple[Volume, CorruptionRecord]:
    """Full pipeline on a normalized volume; returns image + replayable record."""
    if not np.all(np.isfinite(v.data)):
        raise ValueError("input volume contains NaN/Inf")
    record = sample_corruption_record(rng, cfg, v)
    return apply_corruption(v, record), record
