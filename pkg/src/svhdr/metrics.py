"""Image quality metrics and PSNR-versus-illuminance curves."""
import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError
from .numerics.tensor import ShapeError
from .sensor import BracketConfig, SensorParams, derive_seed, lux_to_photons, normalized_ground_truth, simulate_bracket
from .transforms import DEFAULT_TONEMAP, tonemap

log = logging.getLogger(__name__)

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_FILTER_SIZE = 11
SSIM_FILTER_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

REPORT_LUX = (0.4, 0.2, 0.1, 0.05)
CURVE_LUX_RANGE = (0.005, 0.644)
CSV_HEADER = ("lux", "psnr", "psnr_mu", "ms_ssim", "ms_ssim_mu", "n_images", "seed")


@dataclass
class MetricsReport:
    psnr: float
    psnr_mu: float
    ms_ssim: float
    ms_ssim_mu: float
    illuminance: float = float("nan")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    if peak <= 0:
        raise ContractError("peak must be positive")
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr_mu(a, b, tm=DEFAULT_TONEMAP):
    return psnr(tonemap(a, tm), tonemap(b, tm), peak=1.0)


# ---------------------------------------------------------------------------
# MS-SSIM

def _gauss_1d(size, sigma):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * x * x / (sigma * sigma))
    return g / g.sum()


def _filter_valid(img, k):
    """Separable 'valid' Gaussian filtering of an H x W x C array."""
    n = len(k)
    rows = sliding_window_view(img, n, axis=0) @ k
    return sliding_window_view(rows, n, axis=1) @ k


def _ssim_components(a, b, max_val, k):
    """Per-channel (ssim, contrast-structure) means."""
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    num0 = 2.0 * mu_a * mu_b
    den0 = mu_a * mu_a + mu_b * mu_b
    luminance = (num0 + c1) / (den0 + c1)
    num1 = 2.0 * _filter_valid(a * b, k)
    den1 = _filter_valid(a * a + b * b, k)
    cs = (num1 - num0 + c2) / (den1 - den0 + c2)
    return (luminance * cs).mean(axis=(0, 1)), cs.mean(axis=(0, 1))


def _downsample(img):
    """2x2 average pooling after symmetric padding to even size."""
    h, w = img.shape[:2]
    img = np.pad(img, ((0, h % 2), (0, w % 2), (0, 0)), mode="symmetric")
    h, w = img.shape[:2]
    return img.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))


def ms_ssim_scales(height, width):
    """How many scales fit; five need ``min(H, W) >= 176``."""
    n, size = 0, min(height, width)
    while n < len(MS_SSIM_WEIGHTS) and size >= SSIM_FILTER_SIZE:
        n += 1
        size //= 2
    return n


def ms_ssim(a, b, max_val=1.0):
    """Multi-scale SSIM averaged over colour channels.

    Images smaller than 176 pixels on a side use fewer scales, with the
    leading weights renormalized to sum to one. Images smaller than the
    11-pixel window raise :class:`ContractError`.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    scales = ms_ssim_scales(*a.shape[:2])
    if scales == 0:
        raise ContractError(f"image {a.shape[:2]} smaller than the {SSIM_FILTER_SIZE}-pixel SSIM window")
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales])
    if scales < len(MS_SSIM_WEIGHTS):
        log.debug("ms_ssim: %s image uses %d scales", a.shape[:2], scales)
        weights = weights / weights.sum()
    k = _gauss_1d(SSIM_FILTER_SIZE, SSIM_FILTER_SIGMA)
    factors = []
    for s in range(scales):
        if s:
            a, b = _downsample(a), _downsample(b)
        ssim_c, cs_c = _ssim_components(a, b, max_val, k)
        factors.append(np.maximum(cs_c, 0.0))
    factors[-1] = np.maximum(ssim_c, 0.0)
    per_channel = np.prod(np.stack(factors) ** weights[:, None], axis=0)
    return float(per_channel.mean())


def ms_ssim_mu(a, b, tm=DEFAULT_TONEMAP):
    return ms_ssim(tonemap(a, tm), tonemap(b, tm))


def evaluate(estimate, truth, tm=DEFAULT_TONEMAP, illuminance=float("nan")):
    """All four scores after normalizing both images by the ground-truth maximum."""
    estimate, truth = _pair(estimate, truth)
    peak = truth.max()
    if peak <= 0:
        raise ContractError("ground truth must have a positive maximum")
    est = np.clip(estimate / peak, 0.0, None)
    ref = truth / peak
    return MetricsReport(psnr(est, ref), psnr_mu(est, ref, tm), ms_ssim(np.clip(est, 0, 1), ref),
                         ms_ssim_mu(est, ref, tm), illuminance)


# ---------------------------------------------------------------------------
# curves

def psnr_curve(fuser, dataset, lux_levels, seed=0, repeats=1, cfg=None, base=None, tm=DEFAULT_TONEMAP):
    """Average scores of ``fuser`` over ``dataset`` at each illuminance.

    ``fuser(bracket, cfg, base)`` returns an HDR estimate normalized to the
    scene peak. Each (image, repeat) pair keeps the same noise seed at every
    level. Returns one dict per level with the CSV columns.
    """
    if not dataset:
        raise ContractError("psnr_curve needs a nonempty dataset")
    cfg = cfg or BracketConfig()
    base = base or SensorParams()
    rows = []
    for lux in lux_levels:
        level_cfg = BracketConfig(cfg.exposure_factors, cfg.read_sigmas, cfg.gamma, lux_to_photons(lux))
        reports = []
        for j, flux in enumerate(dataset):
            truth = normalized_ground_truth(flux)
            for r in range(repeats):
                bracket = simulate_bracket(flux, level_cfg, base, derive_seed(seed, j, r))
                reports.append(evaluate(fuser(bracket, level_cfg, base), truth, tm, lux))
        rows.append({
            "lux": float(lux),
            "psnr": float(np.mean([m.psnr for m in reports])),
            "psnr_mu": float(np.mean([m.psnr_mu for m in reports])),
            "ms_ssim": float(np.mean([m.ms_ssim for m in reports])),
            "ms_ssim_mu": float(np.mean([m.ms_ssim_mu for m in reports])),
            "n_images": len(reports),
            "seed": int(seed),
        })
    return rows


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6g}"


def curve_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_fmt(row[k]) for k in CSV_HEADER])
    return buf.getvalue()


def read_curve_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ContractError(f"unexpected CSV header {reader.fieldnames}")
    return [{k: (int(v) if k in ("n_images", "seed") else float(v)) for k, v in row.items()} for row in reader]


def log_spaced_lux(count=10, lo=CURVE_LUX_RANGE[0], hi=CURVE_LUX_RANGE[1]):
    return [float(v) for v in np.geomspace(lo, hi, count)]
