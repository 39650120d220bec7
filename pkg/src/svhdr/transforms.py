"""Exposure normalization, network input assembly, mu-law tonemapping and the training loss."""
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numerics.tensor import ShapeError, Tensor, make


@dataclass(frozen=True)
class TonemapParams:
    mu: float = 5000.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ContractError(f"mu must be positive, got {self.mu}")


DEFAULT_TONEMAP = TonemapParams()


def exposure_normalize(ldr, t, gamma=2.2):
    """Map an LDR observation to the linear HDR scale: ``ldr**gamma / t``."""
    if t <= 0:
        raise ContractError(f"exposure factor must be positive, got {t}")
    ldr = np.asarray(ldr)
    return (np.power(ldr, gamma) / t).astype(ldr.dtype if ldr.dtype.kind == "f" else np.float32)


def gamma_encode(linear, t, gamma=2.2):
    """Inverse of :func:`exposure_normalize` on its valid range."""
    return np.power(np.asarray(linear) * t, 1.0 / gamma)


def assemble_input(ldr, normalized):
    """Stack ``[ldr, normalized]`` along channels (H x W x 6)."""
    ldr = np.asarray(ldr)
    normalized = np.asarray(normalized)
    if ldr.shape != normalized.shape:
        raise ShapeError(f"assemble_input: {ldr.shape} vs {normalized.shape}")
    return np.concatenate([ldr, normalized], axis=-1)


def split_input(j):
    c = j.shape[-1] // 2
    return j[..., :c], j[..., c:]


def network_inputs(bracket, exposure_factors, gamma=2.2):
    """The per-exposure network inputs for a list of LDR images."""
    return [assemble_input(ldr, exposure_normalize(ldr, t, gamma)) for ldr, t in zip(bracket, exposure_factors)]


def tonemap(h, p=DEFAULT_TONEMAP):
    """``log(1 + mu h) / log(1 + mu)``; differentiable when given a Tensor."""
    scale = 1.0 / np.log1p(p.mu)
    if isinstance(h, Tensor):
        hd = h.data
        if np.any(hd < 0):
            raise ContractError("tonemap input must be nonnegative (clamp first)")
        return make(np.log1p(p.mu * hd) * scale, (h,), lambda g: (g * (p.mu * scale) / (1.0 + p.mu * hd),))
    h = np.asarray(h)
    if np.any(h < 0):
        raise ContractError("tonemap input must be nonnegative (clamp first)")
    return np.log1p(p.mu * h) * scale


def inverse_tonemap(v, p=DEFAULT_TONEMAP):
    return np.expm1(np.asarray(v) * np.log1p(p.mu)) / p.mu


def loss(h_hat, h, p=DEFAULT_TONEMAP, reduction="norm"):
    """Euclidean norm of the tonemapped difference.

    ``reduction="mean"`` divides by the square root of the element count
    (root-mean-square), which keeps the value independent of batch size.
    """
    target = h.data if isinstance(h, Tensor) else np.asarray(h)
    if not isinstance(h_hat, Tensor):
        h_hat = Tensor(h_hat)
    if h_hat.shape != target.shape:
        raise ShapeError(f"loss: prediction {h_hat.shape} vs target {target.shape}")
    if reduction not in ("norm", "mean"):
        raise ValueError(f"reduction must be 'norm' or 'mean', got {reduction!r}")
    diff_t = tonemap(h_hat, p)
    d = diff_t.data - tonemap(target, p)
    norm = np.sqrt(np.sum(d * d))
    scale = 1.0 if reduction == "norm" else 1.0 / np.sqrt(d.size)

    def backward(g):
        if norm == 0:
            return (np.zeros_like(d),)
        return (g * scale * d / norm,)

    return make(np.asarray(norm * scale, dtype=d.dtype), (diff_t,), backward)


def tonemapped_mse(h_hat, h, p=DEFAULT_TONEMAP):
    d = tonemap(np.asarray(h_hat, dtype=np.float64), p) - tonemap(np.asarray(h, dtype=np.float64), p)
    return float(np.mean(d * d))
