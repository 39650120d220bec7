"""Noise-aware maximum-likelihood merge of a static exposure bracket.

Each exposure is linearized (``I**gamma / t``) and the results are averaged
with inverse-variance weights ``t_i**2 / Var[y_i]`` taken from the sensor
noise model. Saturated observations get zero weight; a pixel saturated in
every exposure falls back to the shortest one.

The variance is evaluated at the expected observation ``t_i * H_pilot``,
where the pilot is the longest unsaturated exposure. Plugging in the noisy
sample instead hands pixels that caught zero photons an almost unbounded
weight and biases dark regions toward black.
"""
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .numerics.tensor import ShapeError
from .sensor import noise_variance
from .transforms import exposure_normalize

SATURATION_LEVEL = 0.99
VARIANCE_FLOOR = 1e-12


@dataclass
class FusionWeights:
    weights: np.ndarray      # n x H x W x C, nonnegative
    saturated: np.ndarray    # n x H x W x C, bool

    def normalized(self):
        return self.weights / self.weights.sum(axis=0, keepdims=True)


def _check_bracket(bracket, cfg):
    shapes = {np.shape(b) for b in bracket}
    if len(shapes) != 1:
        raise ShapeError(f"bracket images differ in shape: {sorted(shapes)}")
    if len(bracket) != len(cfg.exposure_factors):
        raise ContractError(f"{len(bracket)} images but {len(cfg.exposure_factors)} exposure factors")
    return np.stack([np.asarray(b, dtype=np.float64) for b in bracket])


def linearize(bracket, cfg):
    """Per-exposure observations ``y`` and their radiance estimates ``y / t``."""
    ldr = _check_bracket(bracket, cfg)
    y = np.power(ldr, cfg.gamma)
    hat = np.stack([exposure_normalize(b, t, cfg.gamma) for b, t in zip(ldr, cfg.exposure_factors)])
    return y, hat


def fusion_weights(y, cfg, p, weighting="inverse_variance", signal=None):
    """Merge weights for observations ``y`` (n x H x W x C).

    ``signal`` optionally replaces ``y`` when evaluating the noise variance
    (e.g. an expected observation instead of the noisy one).
    """
    t = np.asarray(cfg.exposure_factors, dtype=np.float64).reshape(-1, *([1] * (y.ndim - 1)))
    saturated = y >= SATURATION_LEVEL
    if weighting == "inverse_variance":
        basis = y if signal is None else signal
        var = np.stack([noise_variance(np.clip(basis[i], 0.0, 1.0), replace(p, read_sigma=s))
                        for i, s in enumerate(cfg.read_sigmas)])
        w = t ** 2 / np.maximum(var, VARIANCE_FLOOR)
    elif weighting == "uniform":
        w = np.ones_like(y)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    w = np.where(saturated, 0.0, w)
    dead = w.sum(axis=0) == 0
    w[0] = np.where(dead, 1.0, w[0])
    return FusionWeights(w, saturated)


def radiance_scale(cfg, p):
    """Factor taking merged ``y / t`` values to radiance normalized by its peak."""
    return p.dn_sat * cfg.t_mid / (p.gain_alpha * cfg.peak_photons)


def pilot_estimate(y, hat):
    """Radiance from the longest exposure that is not saturated (shortest if none)."""
    est = hat[0].copy()
    for i in range(1, len(y)):
        est = np.where(y[i] >= SATURATION_LEVEL, est, hat[i])
    return est


def expected_observations(y, hat, cfg):
    t = np.asarray(cfg.exposure_factors, dtype=np.float64).reshape(-1, *([1] * (y.ndim - 1)))
    return np.clip(pilot_estimate(y, hat)[None] * t, 0.0, 1.0)


def fuse_ml(bracket, cfg, p, weighting="inverse_variance", normalize=True):
    """Merge a bracket into an HDR image.

    With ``normalize`` the result is expressed relative to the scene peak
    (``cfg.peak_photons`` at the middle exposure maps to 1.0).
    """
    y, hat = linearize(bracket, cfg)
    fw = fusion_weights(y, cfg, p, weighting, signal=expected_observations(y, hat, cfg))
    merged = (fw.weights * hat).sum(axis=0) / fw.weights.sum(axis=0)
    if normalize:
        merged = merged * radiance_scale(cfg, p)
    return merged.astype(np.float32)
