"""Image sensor forward model and exposure-bracket synthesis.

Per pixel and colour channel::

    lambda = tau * qe * (theta + dark)
    e      ~ Poisson(lambda)                  (or lambda itself when shot_noise=False)
    dn     = min(round(alpha * min(e, full_well)), 2**bits - 1)
    y      = dn / dn_sat  +  N(0, read_sigma^2)   then clamped to [0, 1]
    I      = y ** (1 / gamma)

with ``dn_sat = min(round(alpha * full_well), 2**bits - 1)``. With
``read_noise_stage="adu"`` the Gaussian is added to ``dn`` before the
division instead.

Random draws come from :mod:`svhdr.kernels`, addressed by the flat
(pixel, channel) index, so results depend only on the seed.
"""
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ContractError

# 256 photons <-> 0.323 lux at 1/50 s, 6 um pixels
LUX_PER_PHOTON = 0.323 / 256.0

PEAK_PHOTONS_MIN = 4.0
PEAK_PHOTONS_MODE = 8.0
PEAK_PHOTONS_MAX = 256.0

_STREAM_SHOT = 0
_STREAM_READ = 1


@dataclass(frozen=True)
class SensorParams:
    adc_bits: int = 14
    full_well_e: float = 5000.0
    tau: float = 1.0
    qe: float = 0.5
    dark_current: float = 0.0
    gain_alpha: float = 1.0
    read_sigma: float = 0.0
    read_noise_stage: str = "adu"
    shot_noise: bool = True

    def __post_init__(self):
        if not 0.0 < self.qe <= 1.0:
            raise ContractError(f"qe must be in (0, 1], got {self.qe}")
        if self.tau <= 0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if self.full_well_e <= 0:
            raise ContractError(f"full_well_e must be positive, got {self.full_well_e}")
        if not 8 <= int(self.adc_bits) <= 32:
            raise ContractError(f"adc_bits must be in [8, 32], got {self.adc_bits}")
        if self.read_sigma < 0:
            raise ContractError(f"read_sigma must be nonnegative, got {self.read_sigma}")
        if self.gain_alpha <= 0:
            raise ContractError(f"gain_alpha must be positive, got {self.gain_alpha}")
        if self.dark_current < 0:
            raise ContractError(f"dark_current must be nonnegative, got {self.dark_current}")
        if self.read_noise_stage not in ("normalized", "adu"):
            raise ContractError(f"read_noise_stage must be 'normalized' or 'adu', got {self.read_noise_stage!r}")

    @property
    def dn_max(self):
        return 2 ** int(self.adc_bits) - 1

    @property
    def dn_sat(self):
        return min(round(self.gain_alpha * self.full_well_e), self.dn_max)


@dataclass(frozen=True)
class BracketConfig:
    exposure_factors: tuple = (1.0, 8.0, 64.0)
    read_sigmas: tuple = (0.0292, 0.1798, 1.4384)
    gamma: float = 2.2
    peak_photons: float = PEAK_PHOTONS_MODE

    def __post_init__(self):
        t = tuple(float(v) for v in self.exposure_factors)
        s = tuple(float(v) for v in self.read_sigmas)
        object.__setattr__(self, "exposure_factors", t)
        object.__setattr__(self, "read_sigmas", s)
        if len(t) < 1 or any(v <= 0 for v in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ContractError(f"exposure factors must be positive and strictly increasing, got {t}")
        if len(s) != len(t) or any(v < 0 for v in s):
            raise ContractError(f"need one nonnegative read sigma per exposure, got {s}")
        if self.gamma <= 0:
            raise ContractError(f"gamma must be positive, got {self.gamma}")
        if self.peak_photons <= 0:
            raise ContractError(f"peak_photons must be positive, got {self.peak_photons}")

    @property
    def mid_index(self):
        return len(self.exposure_factors) // 2

    @property
    def t_mid(self):
        return self.exposure_factors[self.mid_index]


def derive_seed(seed, *stream):
    return int(kernels.stream_key(seed, *stream))


def _check_flux(flux):
    flux = np.asarray(flux, dtype=np.float64)
    if not np.all(np.isfinite(flux)):
        raise ContractError("flux contains non-finite values")
    if np.any(flux < 0):
        raise ContractError("flux must be nonnegative")
    return flux


def mean_electrons(flux, p):
    return p.tau * p.qe * (_check_flux(flux) + p.dark_current)


def photoelectrons(flux, p, seed):
    """Electron counts before the full-well clip (float array, integral unless noiseless)."""
    lam = mean_electrons(flux, p)
    if not p.shot_noise:
        return lam
    key = kernels.stream_key(seed, _STREAM_SHOT)
    return kernels.poisson(lam.ravel(), key).reshape(lam.shape).astype(np.float64)


def digitize(electrons, p):
    """Full-well clip and ADC: electrons -> digital numbers in [0, 2**bits - 1]."""
    e = np.minimum(electrons, p.full_well_e)
    return np.minimum(np.rint(p.gain_alpha * e), p.dn_max)


def add_read_noise(dn, p, seed):
    """Normalize digital numbers by ``dn_sat`` and add Gaussian read noise."""
    dn_sat = float(p.dn_sat)
    if p.read_sigma == 0:
        return dn / dn_sat
    noise = kernels.normal(kernels.stream_key(seed, _STREAM_READ), np.arange(dn.size)).reshape(dn.shape)
    if p.read_noise_stage == "adu":
        return (dn + p.read_sigma * noise) / dn_sat
    return dn / dn_sat + p.read_sigma * noise


def simulate_exposure(flux, p, seed, gamma=2.2):
    """One gamma-encoded LDR observation in [0, 1] of radiance ``flux``."""
    e = photoelectrons(flux, p, seed)
    y = add_read_noise(digitize(e, p), p, seed)
    y = np.clip(y, 0.0, 1.0)
    return (y ** (1.0 / gamma)).astype(np.float32)


def exposure_taus(flux, cfg, base):
    """Exposure scale per bracket member so the middle one peaks at ``cfg.peak_photons``."""
    peak_flux = float(np.max(_check_flux(flux)))
    if peak_flux <= 0:
        raise ContractError("flux is zero everywhere; cannot scale to a photon peak")
    tau_mid = cfg.peak_photons / (base.qe * peak_flux)
    return [tau_mid * t / cfg.t_mid for t in cfg.exposure_factors]


def simulate_bracket(flux, cfg, base, seed):
    """Synthesize the exposure bracket of ``flux`` (one LDR image per exposure factor).

    The flux is rescaled so that ``max(tau * qe * flux)`` equals ``cfg.peak_photons``
    at the middle exposure; exposure ``i`` then uses ``tau_mid * t_i / t_mid`` and
    read sigma ``cfg.read_sigmas[i]``.
    """
    out = []
    for i, (tau, sigma) in enumerate(zip(exposure_taus(flux, cfg, base), cfg.read_sigmas)):
        p = replace(base, tau=tau, read_sigma=sigma)
        out.append(simulate_exposure(flux, p, derive_seed(seed, i), gamma=cfg.gamma))
    return out


def bracket_params(flux, cfg, base):
    """The per-exposure :class:`SensorParams` used by :func:`simulate_bracket`."""
    return [replace(base, tau=tau, read_sigma=sigma)
            for tau, sigma in zip(exposure_taus(flux, cfg, base), cfg.read_sigmas)]


def sample_peak_photons(rng, size=None):
    """Peak photon count ~ triangular(4, mode 8, 256)."""
    return rng.triangular(PEAK_PHOTONS_MIN, PEAK_PHOTONS_MODE, PEAK_PHOTONS_MAX, size=size)


def photons_to_lux(photons):
    photons = np.asarray(photons, dtype=np.float64)
    if np.any(photons <= 0):
        raise ContractError("photon count must be positive")
    out = photons * LUX_PER_PHOTON
    return float(out) if out.ndim == 0 else out


def lux_to_photons(lux):
    lux = np.asarray(lux, dtype=np.float64)
    if np.any(lux <= 0):
        raise ContractError("illuminance must be positive")
    out = lux / LUX_PER_PHOTON
    return float(out) if out.ndim == 0 else out


def noise_variance(y, p):
    """Variance of a normalized observation ``y`` under the Poisson + Gaussian model."""
    y = np.asarray(y, dtype=np.float64)
    shot = y * p.gain_alpha / p.dn_sat
    if p.read_noise_stage == "adu":
        return shot + (p.read_sigma / p.dn_sat) ** 2
    return shot + p.read_sigma ** 2


def normalized_ground_truth(flux):
    """Radiance scaled to unit peak; the HDR target for fusion."""
    flux = _check_flux(flux)
    return (flux / flux.max()).astype(np.float32)
