"""Independent reference implementations used as test oracles.

Everything here is written directly from the textbook definitions (sliding
windows, explicit loops, offset-level struct parsing) and shares no code
with the package, so agreement is meaningful.
"""

import struct

import numpy as np

_FULL_MS_WEIGHTS = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333]


def brute_ssim_cs(a: np.ndarray, b: np.ndarray, window=7, k1=0.01, k2=0.03, rng=1.0):
    """Per-window SSIM by explicit window slicing; returns (ssim_vals, cs_vals)."""
    c1, c2 = (k1 * rng) ** 2, (k2 * rng) ** 2
    nx, ny, nz = a.shape
    ssims, css = [], []
    for i in range(nx - window + 1):
        for j in range(ny - window + 1):
            for k in range(nz - window + 1):
                wa = a[i : i + window, j : j + window, k : k + window]
                wb = b[i : i + window, j : j + window, k : k + window]
                mu_a, mu_b = wa.mean(), wb.mean()
                var_a = ((wa - mu_a) ** 2).mean()
                var_b = ((wb - mu_b) ** 2).mean()
                cov = ((wa - mu_a) * (wb - mu_b)).mean()
                lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
                cs = (2 * cov + c2) / (var_a + var_b + c2)
                ssims.append(lum * cs)
                css.append(cs)
    return np.array(ssims), np.array(css)


def brute_ssim(a, b, window=7, k1=0.01, k2=0.03, rng=1.0) -> float:
    ssims, _ = brute_ssim_cs(a, b, window, k1, k2, rng)
    return float(ssims.mean())


def _halve(x: np.ndarray) -> np.ndarray:
    nx, ny, nz = (d - d % 2 for d in x.shape)
    x = x[:nx, :ny, :nz]
    out = np.zeros((nx // 2, ny // 2, nz // 2))
    for i in range(nx // 2):
        for j in range(ny // 2):
            for k in range(nz // 2):
                out[i, j, k] = x[2 * i : 2 * i + 2, 2 * j : 2 * j + 2, 2 * k : 2 * k + 2].mean()
    return out


def brute_ms_ssim(a, b, scales=3, window=7, k1=0.01, k2=0.03, rng=1.0) -> float:
    weights = np.array(_FULL_MS_WEIGHTS[:scales])
    weights = weights / weights.sum()
    result = 1.0
    for s in range(scales):
        ssims, css = brute_ssim_cs(a, b, window, k1, k2, rng)
        if s < scales - 1:
            result *= max(float(css.mean()), 0.0) ** weights[s]
            a, b = _halve(a), _halve(b)
        else:
            val = float(ssims.mean())
            w = float(weights[s])
            result *= val if w == 1.0 else np.sign(val) * abs(val) ** w
    return float(result)


def brute_norm_l2(est: np.ndarray, true: np.ndarray) -> float:
    """Scale-invariant L2 between fields, summed with explicit loops."""
    num = 0.0
    den = 0.0
    for e, t in zip(est.ravel(), true.ravel()):
        num += t * e
        den += e * e
    w = num / den
    sq = 0.0
    tt = 0.0
    for e, t in zip(est.ravel(), true.ravel()):
        sq += (w * e - t) ** 2
        tt += t * t
    return float(np.sqrt(sq / tt))


def brute_batch_loss(preds, target, lam: float, spacing=(1.0, 1.0, 1.0)) -> float:
    """Intensity + gradient L1 loss re-summed with explicit per-axis loops."""
    total = 0.0
    for p in preds:
        total += np.abs(p - target).mean()
        for axis in range(3):
            gp = np.gradient(p, spacing[axis], axis=axis, edge_order=1)
            gt = np.gradient(target, spacing[axis], axis=axis, edge_order=1)
            total += lam * np.abs(gp - gt).mean()
    return float(total)


# -- offset-level NIfTI-1 header dump (independent of the package reader) --------

def header_dump(blob: bytes) -> dict:
    """Parse NIfTI-1 header fields at their standard byte offsets."""
    import gzip

    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr == 348:
        bo = "<"
    else:
        (sizeof_hdr,) = struct.unpack_from(">i", blob, 0)
        assert sizeof_hdr == 348, "not a NIfTI-1 header"
        bo = ">"
    dim = struct.unpack_from(bo + "8h", blob, 40)
    (datatype,) = struct.unpack_from(bo + "h", blob, 70)
    (bitpix,) = struct.unpack_from(bo + "h", blob, 72)
    pixdim = struct.unpack_from(bo + "8f", blob, 76)
    (vox_offset,) = struct.unpack_from(bo + "f", blob, 108)
    (scl_slope,) = struct.unpack_from(bo + "f", blob, 112)
    (scl_inter,) = struct.unpack_from(bo + "f", blob, 116)
    (intent_code,) = struct.unpack_from(bo + "h", blob, 68)
    (qform_code,) = struct.unpack_from(bo + "h", blob, 252)
    (sform_code,) = struct.unpack_from(bo + "h", blob, 254)
    srow_x = struct.unpack_from(bo + "4f", blob, 280)
    srow_y = struct.unpack_from(bo + "4f", blob, 296)
    srow_z = struct.unpack_from(bo + "4f", blob, 312)
    magic = struct.unpack_from("4s", blob, 344)[0]
    return {
        "dim": dim,
        "datatype": datatype,
        "bitpix": bitpix,
        "pixdim": pixdim,
        "vox_offset": vox_offset,
        "scl_slope": scl_slope,
        "scl_inter": scl_inter,
        "intent_code": intent_code,
        "qform_code": qform_code,
        "sform_code": sform_code,
        "srow": np.array([srow_x, srow_y, srow_z, (0, 0, 0, 1)]),
        "magic": magic,
    }
