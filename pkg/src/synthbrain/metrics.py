"""Similarity metrics and the feature-robustness evaluation protocol.

Scalar metrics (L1, PSNR, SSIM, MS-SSIM, Dice, scale-invariant bias-field
distance) are pure functions over volumes. On top of them sits the
robustness protocol: warp candidate feature stacks back into a common frame
(the inverse of their own deformation, or a provided atlas mapping) and
score every channel against a clean reference, reporting mean and spread.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion, uniform_filter

from .deformation import DeformationField, invert, warp_stack
from .errors import (
    ChannelMismatch,
    EmptyLabelSet,
    EmptyMask,
    TooSmallForScales,
    ZeroEstimate,
)
from .volume import LabelMap, Volume, VolumeStack, check_same_geometry

__all__ = [
    "l1",
    "psnr",
    "ssim",
    "ms_ssim",
    "dice",
    "DiceScores",
    "norm_l2_bias",
    "canonical_features",
    "atlas_features",
    "interior_mask",
    "robustness_protocol",
    "MetricReport",
]

# conventional five-scale weights, truncated + renormalized per requested depth
_MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _mask_array(mask, dims) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(getattr(mask, "data", mask)).astype(bool)
    if m.shape != tuple(dims):
        raise EmptyMask(f"mask shape {m.shape} does not match volume dims {tuple(dims)}")
    if not m.any():
        raise EmptyMask("mask selects zero voxels")
    return m


def l1(a: Volume, b: Volume, mask=None) -> float:
    """Mean absolute difference, optionally restricted to a mask."""
    check_same_geometry(a, b)
    diff = np.abs(a.data - b.data)
    m = _mask_array(mask, a.dims)
    return float(diff[m].mean() if m is not None else diff.mean())


def psnr(pred: Volume, ref: Volume, peak: float = 1.0, mask=None) -> float:
    """10*log10(peak^2 / MSE); identical inputs give +inf."""
    check_same_geometry(pred, ref)
    sq = (pred.data - ref.data) ** 2
    m = _mask_array(mask, pred.dims)
    mse = float(sq[m].mean() if m is not None else sq.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_cs_maps(a, b, window, k1, k2, rng_):
    """Per-window SSIM and contrast-structure maps over valid (fully inside) centers."""
    r = window // 2
    crop = tuple(slice(r, n - r) for n in a.shape)

    def win_mean(x):
        return uniform_filter(x, size=window, mode="constant")[crop]

    mu_a, mu_b = win_mean(a), win_mean(b)
    e_aa, e_bb, e_ab = win_mean(a * a), win_mean(b * b), win_mean(a * b)
    # raw (unclamped) moments keep ssim(a, a) == 1 bitwise: for identical
    # inputs cov and the variances are the very same floats
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    c1 = (k1 * rng_) ** 2
    c2 = (k2 * rng_) ** 2
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return lum * cs, cs


def _valid_center_mask(mask, dims, window):
    if mask is None:
        return None
    r = window // 2
    crop = tuple(slice(r, n - r) for n in dims)
    m = mask[crop]
    if not m.any():
        raise EmptyMask("mask selects no fully-interior window centers")
    return m


def ssim(
    a: Volume,
    b: Volume,
    window: int = 7,
    k1: float = 0.01,
    k2: float = 0.03,
    dynamic_range: float = 1.0,
    mask=None,
) -> float:
    """Mean structural similarity over all fully-inside uniform windows.

    Uses the population variance within each window; a mask, when given,
    selects which window *centers* contribute to the mean.
    """
    check_same_geometry(a, b)
    if min(a.dims) < window:
        raise TooSmallForScales(f"dims {a.dims} smaller than window {window}")
    m = _mask_array(mask, a.dims)
    ssim_map, _ = _ssim_cs_maps(a.data, b.data, window, k1, k2, dynamic_range)
    mc = _valid_center_mask(m, a.dims, window)
    return float(ssim_map[mc].mean() if mc is not None else ssim_map.mean())


def _downsample2(x: np.ndarray) -> np.ndarray:
    """2x average pooling, truncating odd trailing voxels."""
    nx, ny, nz = (d - d % 2 for d in x.shape)
    y = x[:nx, :ny, :nz].reshape(nx // 2, 2, ny // 2, 2, nz // 2, 2)
    return y.mean(axis=(1, 3, 5))


def _downsample_mask(m: np.ndarray) -> np.ndarray:
    return _downsample2(m.astype(np.float64)) > 0.5


def ms_ssim(
    a: Volume,
    b: Volume,
    scales: int = 3,
    window: int = 7,
    k1: float = 0.01,
    k2: float = 0.03,
    dynamic_range: float = 1.0,
    mask=None,
) -> float:
    """Multi-scale SSIM over dyadic downsamplings.

    Contrast-structure terms (clamped at 0) are taken at the finer scales
    and full SSIM at the coarsest; the per-scale exponents are the
    conventional five weights truncated to ``scales`` and renormalized.
    With ``scales=1`` this reduces exactly to :func:`ssim`.
    """
    check_same_geometry(a, b)
    if not 1 <= scales <= len(_MS_WEIGHTS):
        raise TooSmallForScales(f"scales must be in [1, {len(_MS_WEIGHTS)}], got {scales}")
    if min(a.dims) < window * 2 ** (scales - 1):
        raise TooSmallForScales(
            f"dims {a.dims} cannot host {scales} dyadic scales of window {window}"
        )
    weights = np.asarray(_MS_WEIGHTS[:scales])
    weights = weights / weights.sum()

    xa, xb = a.data, b.data
    m = _mask_array(mask, a.dims)
    result = 1.0
    for s in range(scales):
        ssim_map, cs_map = _ssim_cs_maps(xa, xb, window, k1, k2, dynamic_range)
        mc = _valid_center_mask(m, xa.shape, window)
        if s < scales - 1:
            cs = float(cs_map[mc].mean() if mc is not None else cs_map.mean())
            result *= max(cs, 0.0) ** weights[s]
            xa, xb = _downsample2(xa), _downsample2(xb)
            if m is not None:
                m = _downsample_mask(m)
                if not m.any():
                    raise EmptyMask(f"mask vanished at scale {s + 1}")
        else:
            val = float(ssim_map[mc].mean() if mc is not None else ssim_map.mean())
            w = float(weights[s])
            result *= val if w == 1.0 else math.copysign(abs(val) ** w, val)
    return float(result)


@dataclass(frozen=True)
class DiceScores:
    per_label: dict[int, float]
    mean: float


def dice(pred: LabelMap, ref: LabelMap, labels=None) -> DiceScores:
    """Overlap 2|P∩R|/(|P|+|R|) per label; labels absent from both are skipped."""
    check_same_geometry(pred, ref)
    if labels is None:
        labels = sorted((set(pred.label_set) | set(ref.label_set)) - {0})
    per: dict[int, float] = {}
    for lab in labels:
        p = pred.data == lab
        r = ref.data == lab
        denom = int(p.sum()) + int(r.sum())
        if denom == 0:
            continue
        per[int(lab)] = 2.0 * int((p & r).sum()) / denom
    if not per:
        raise EmptyLabelSet("no label present in either map")
    return DiceScores(per, float(np.mean(list(per.values()))))


def norm_l2_bias(b_est, b_true, mask=None) -> float:
    """Scale-invariant L2 distance between bias fields.

    The estimate is first rescaled by the closed-form optimal scalar
    w = sum(true*est)/sum(est^2), so any positive global scaling of the
    estimate scores 0 against itself.
    """
    est = getattr(b_est, "field", b_est)
    true = getattr(b_true, "field", b_true)
    check_same_geometry(est, true)
    m = _mask_array(mask, est.dims)
    e = est.data[m] if m is not None else est.data.ravel()
    t = true.data[m] if m is not None else true.data.ravel()
    ss_e = float((e * e).sum())
    if ss_e == 0.0:
        raise ZeroEstimate("estimated bias field is identically zero over the mask")
    ss_t = float((t * t).sum())
    if ss_t == 0.0:
        raise ValueError("reference bias field is identically zero over the mask")
    w = float((t * e).sum()) / ss_e
    return float(np.sqrt(((w * e - t) ** 2).sum() / ss_t))


# -- feature robustness ---------------------------------------------------------

def canonical_features(f: VolumeStack, phi: DeformationField) -> VolumeStack:
    """Warp every channel back through the inverse of its generation deformation."""
    return warp_stack(f, invert(phi))


def atlas_features(f: VolumeStack, psi: DeformationField) -> VolumeStack:
    """Warp every channel into the atlas frame described by ``psi``.

    ``psi`` lives on the atlas grid and maps atlas points into the subject
    frame (backward convention), so the output stack has atlas geometry.
    """
    return warp_stack(f, psi)


def interior_mask(lm: LabelMap, erosion: int = 2) -> np.ndarray:
    """Foreground (label != 0) eroded to stay clear of warping boundary effects."""
    fg = lm.data != 0
    if erosion > 0:
        fg = binary_erosion(fg, iterations=erosion)
    return fg


@dataclass(frozen=True)
class MetricReport:
    """Per-pair metric values with mean/std aggregation (population std)."""

    values: dict[str, tuple[float, ...]]
    masked: bool = False

    def mean(self, name: str) -> float:
        return float(np.mean(self.values[name]))

    def std(self, name: str) -> float:
        return float(np.std(self.values[name]))

    def to_json_dict(self) -> dict:
        return {
            "masked": self.masked,
            "metrics": {
                name: {"values": list(vals), "mean": self.mean(name), "std": self.std(name)}
                for name, vals in self.values.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{'metric':<10}{'mean':>10}  (±std)"]
        for name in self.values:
            lines.append(f"{name:<10}{self.mean(name):>10.4f}  (±{self.std(name):.4f})")
        return "\n".join(lines)


def robustness_protocol(
    reference: VolumeStack,
    candidates,
    mode: str = "intra",
    mask=None,
    window: int = 7,
    scales: int = 3,
) -> MetricReport:
    """Score candidate feature stacks against a clean reference, channelwise.

    ``candidates`` is a list of (VolumeStack, DeformationField) pairs; each
    stack is first mapped into the reference frame — through the inverse of
    its own deformation (``mode="intra"``) or by the given atlas mapping
    (``mode="inter"``) — then every channel contributes one L1/SSIM/MS-SSIM
    value against the matching reference channel.
    """
    if mode not in ("intra", "inter"):
        raise ValueError(f"mode must be 'intra' or 'inter', got {mode!r}")
    vals: dict[str, list[float]] = {"l1": [], "ssim": [], "ms_ssim": []}
    for stack, fld in candidates:
        if stack.channel_count != reference.channel_count:
            raise ChannelMismatch(
                f"candidate has {stack.channel_count} channels, "
                f"reference has {reference.channel_count}"
            )
        warped = canonical_features(stack, fld) if mode == "intra" else atlas_features(stack, fld)
        for c in range(reference.channel_count):
            ref_c, cand_c = reference.channels[c], warped.channels[c]
            vals["l1"].append(l1(ref_c, cand_c, mask))
            vals["ssim"].append(ssim(ref_c, cand_c, window=window, mask=mask))
            vals["ms_ssim"].append(
                ms_ssim(ref_c, cand_c, scales=scales, window=window, mask=mask)
            )
    if not vals["l1"]:
        raise ValueError("no candidates to score")
    return MetricReport(
        {k: tuple(v) for k, v in vals.items()}, masked=mask is not None
    )
