import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from synthbrain import LabelMap, SubjectRecord, Volume


def sphere_labels(n: int, radii, spacing=(1.0, 1.0, 1.0)) -> LabelMap:
    """Concentric spheres: label k fills the k-th radius shell, 0 outside."""
    idx = np.indices((n, n, n)).astype(np.float64)
    center = (n - 1) / 2.0
    r = np.sqrt(((idx - center) ** 2).sum(axis=0))
    lab = np.zeros((n, n, n), dtype=np.int32)
    for k, radius in enumerate(sorted(radii, reverse=True), start=1):
        lab[r < radius] = k
    return LabelMap(lab, spacing)


def smooth_volume(n: int, seed: int, spacing=(1.0, 1.0, 1.0), sigma=2.0) -> Volume:
    """Smoothed noise rescaled to [0, 1] — a stand-in structural image."""
    rng = np.random.default_rng(seed)
    data = gaussian_filter(rng.random((n, n, n)), sigma)
    lo, hi = data.min(), data.max()
    return Volume((data - lo) / (hi - lo), spacing)


def make_subject(n: int = 32, seed: int = 0, radii=None, sid: str = "subj") -> SubjectRecord:
    radii = radii or (0.42 * n, 0.3 * n, 0.17 * n)
    labels = sphere_labels(n, radii)
    anat = smooth_volume(n, seed)
    # anatomy roughly follows the labels, plus smooth texture
    data = 0.2 * labels.data + 0.3 * anat.data
    data[labels.data == 0] = 0.0
    return SubjectRecord(sid, labels, Volume(data / max(data.max(), 1e-9)))


@pytest.fixture
def subject32() -> SubjectRecord:
    return make_subject(32, seed=0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
