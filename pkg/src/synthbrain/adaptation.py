"""One-layer adaptation: closed-form voxelwise linear maps on frozen features.

A task head here is a single affine map from feature channels (optionally
concatenated with the raw input image) to target channels, optionally
followed by a softmax for segmentation. Because the head is linear, ridge
least squares over all voxels IS the training optimum — no gradient loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ChannelMismatch, NotASimplex, SingularSystem
from .volume import LabelMap, Volume, VolumeStack, check_same_geometry

__all__ = [
    "LinearAdapter",
    "fit_adapter",
    "apply_adapter",
    "fit_residual",
    "soft_dice_ce_loss",
    "l2_loss",
    "adapter_to_json",
    "adapter_from_json",
    "save_adapter",
    "load_adapter",
]

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class LinearAdapter:
    """Voxelwise affine map: out = x @ weights + bias.

    ``uses_input`` marks heads fitted with the raw image concatenated as an
    extra (last) input column; ``softmax`` marks segmentation heads whose
    outputs are normalized per voxel on application.
    """

    weights: np.ndarray  # (in_channels, out_channels)
    bias: np.ndarray  # (out_channels,)
    uses_input: bool = False
    softmax: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
            raise ValueError(f"inconsistent adapter shapes {w.shape} / {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("adapter parameters contain NaN/Inf")
        w = w.copy()
        b = b.copy()
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[1]


def _as_stack(x) -> VolumeStack:
    return x if isinstance(x, VolumeStack) else VolumeStack((x,))


def _design_matrix(features: VolumeStack, concat_input: Volume | None) -> np.ndarray:
    cols = [ch.data.ravel() for ch in features.channels]
    if concat_input is not None:
        check_same_geometry(features, concat_input)
        cols.append(concat_input.data.ravel())
    return np.stack(cols, axis=1)


def fit_adapter(
    features: VolumeStack,
    target,
    concat_input: Volume | None = None,
    ridge: float = 1e-6,
    softmax: bool = False,
) -> LinearAdapter:
    """Ridge least squares over voxels: min ||XW + b - Y||^2 + ridge*||W||^2.

    The bias column is never regularized. ``ridge=0`` demands a full-rank
    system and raises :class:`SingularSystem` otherwise.
    """
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    target = _as_stack(target)
    check_same_geometry(features, target)
    x = _design_matrix(features, concat_input)
    y = np.stack([ch.data.ravel() for ch in target.channels], axis=1)
    nvox, k = x.shape
    if nvox <= k:
        raise ValueError(f"{nvox} voxels cannot determine {k} input channels")

    a = np.concatenate([x, np.ones((nvox, 1))], axis=1)
    gram = a.T @ a
    reg = np.zeros(k + 1)
    reg[:k] = ridge
    gram += np.diag(reg)
    rhs = a.T @ y

    if ridge == 0.0:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise SingularSystem(
                f"normal equations are rank-deficient (cond {cond:.3g}) and ridge is 0"
            )
    try:
        wb = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return LinearAdapter(wb[:k], wb[k], uses_input=concat_input is not None, softmax=softmax)


def apply_adapter(
    adapter: LinearAdapter, features: VolumeStack, concat_input: Volume | None = None
) -> VolumeStack:
    """Forward pass of the head; softmax heads return per-voxel probabilities."""
    if adapter.uses_input != (concat_input is not None):
        raise ChannelMismatch(
            "adapter was fitted "
            + ("with" if adapter.uses_input else "without")
            + " a concatenated input image"
        )
    expected = adapter.in_channels - (1 if adapter.uses_input else 0)
    if features.channel_count != expected:
        raise ChannelMismatch(
            f"adapter expects {expected} feature channels, got {features.channel_count}"
        )
    x = _design_matrix(features, concat_input)
    out = x @ adapter.weights + adapter.bias
    if adapter.softmax:
        out = out - out.max(axis=1, keepdims=True)
        np.exp(out, out=out)
        out /= out.sum(axis=1, keepdims=True)
    dims = features.dims
    return VolumeStack(tuple(
        Volume(out[:, c].reshape(dims), features.spacing, features.grid_to_world)
        for c in range(adapter.out_channels)
    ))


def fit_residual(
    adapter: LinearAdapter,
    features: VolumeStack,
    target,
    concat_input: Volume | None = None,
) -> dict:
    """Training-set residuals (mean absolute / mean squared) of a fitted head."""
    target = _as_stack(target)
    pred = apply_adapter(adapter, features, concat_input)
    diff = pred.as_array() - target.as_array()
    return {
        "residual_l1": float(np.mean(np.abs(diff))),
        "residual_l2": float(np.mean(diff ** 2)),
    }


# -- task losses ----------------------------------------------------------------

def soft_dice_ce_loss(probs: VolumeStack, ref: LabelMap, labels=None) -> float:
    """(1 - mean soft Dice) + mean cross-entropy against integer labels.

    Channel c of ``probs`` carries the probability of ``labels[c]``
    (default: the sorted labels present in ``ref``). Probabilities must form
    a per-voxel simplex.
    """
    check_same_geometry(probs, ref)
    if labels is None:
        labels = ref.label_set
    labels = list(labels)
    if probs.channel_count != len(labels):
        raise ChannelMismatch(
            f"{probs.channel_count} probability channels for {len(labels)} labels"
        )
    p = probs.as_array()
    if p.min() < -1e-9 or np.abs(p.sum(axis=-1) - 1.0).max() > 1e-6:
        raise NotASimplex("per-voxel probabilities must be >= 0 and sum to 1")
    p = np.clip(p, 0.0, 1.0)

    onehot = np.stack([ref.data == lab for lab in labels], axis=-1).astype(np.float64)
    eps = 1e-12
    inter = (p * onehot).sum(axis=(0, 1, 2))
    sizes = p.sum(axis=(0, 1, 2)) + onehot.sum(axis=(0, 1, 2))
    dice_per_label = (2.0 * inter + eps) / (sizes + eps)
    p_true = (p * onehot).sum(axis=-1)
    ce = float(-np.log(np.clip(p_true, eps, 1.0)).mean())
    return float(1.0 - dice_per_label.mean()) + ce


def l2_loss(pred: Volume, ref: Volume) -> float:
    """Mean squared error."""
    check_same_geometry(pred, ref)
    return float(np.mean((pred.data - ref.data) ** 2))


# -- serialization ---------------------------------------------------------------

def adapter_to_json(adapter: LinearAdapter) -> str:
    doc = {
        "shape": [adapter.in_channels, adapter.out_channels],
        "weights": adapter.weights.ravel(order="C").tolist(),
        "bias": adapter.bias.tolist(),
        "uses_input": adapter.uses_input,
        "softmax": adapter.softmax,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def adapter_from_json(text: str) -> LinearAdapter:
    doc = json.loads(text)
    k, out = (int(v) for v in doc["shape"])
    w = np.asarray(doc["weights"], dtype=np.float64).reshape(k, out)
    b = np.asarray(doc["bias"], dtype=np.float64)
    return LinearAdapter(w, b, bool(doc.get("uses_input", False)), bool(doc.get("softmax", False)))


def save_adapter(path, adapter: LinearAdapter, extra: dict | None = None) -> None:
    doc = json.loads(adapter_to_json(adapter))
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_adapter(path) -> LinearAdapter:
    with open(path) as fh:
        return adapter_from_json(fh.read())
