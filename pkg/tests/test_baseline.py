import numpy as np
import pytest

from svhdr.baseline import (SATURATION_LEVEL, expected_observations, fuse_ml, fusion_weights, linearize,
                            pilot_estimate, radiance_scale)
from svhdr.errors import ContractError
from svhdr.metrics import psnr
from svhdr.numerics import ShapeError
from svhdr.scenes import synthetic_scene
from svhdr.sensor import BracketConfig, SensorParams, normalized_ground_truth, simulate_bracket
from svhdr.transforms import tonemapped_mse

NOISELESS = SensorParams(adc_bits=30, shot_noise=False)


def test_noiseless_reconstruction_is_quantization_limited():
    flux = synthetic_scene(0, 64)
    cfg = BracketConfig(read_sigmas=(0, 0, 0), peak_photons=600.0)
    hdr = fuse_ml(simulate_bracket(flux, cfg, NOISELESS, 0), cfg, NOISELESS)
    assert psnr(hdr, normalized_ground_truth(flux)) > 40


def test_uniform_scene_exact_in_unsaturated_range():
    flux = np.full((4, 4, 3), 2.0)
    cfg = BracketConfig(read_sigmas=(0, 0, 0), peak_photons=100.0)
    p = SensorParams(adc_bits=16, shot_noise=False, gain_alpha=1.0)
    hdr = fuse_ml(simulate_bracket(flux, cfg, p, 0), cfg, p)
    # one photon of quantization on ~12.5 electrons at the shortest exposure bounds the error
    np.testing.assert_allclose(hdr, 1.0, rtol=0.02)


def test_saturated_exposures_get_zero_weight():
    cfg = BracketConfig()
    y = np.stack([np.full((2, 2, 3), v) for v in (0.1, 0.5, 1.0)])
    fw = fusion_weights(y, cfg, SensorParams())
    assert fw.saturated[2].all() and not fw.weights[2].any()
    np.testing.assert_allclose(fw.normalized().sum(axis=0), 1.0)


def test_all_saturated_falls_back_to_shortest():
    cfg = BracketConfig()
    y = np.ones((3, 2, 2, 3))
    fw = fusion_weights(y, cfg, SensorParams())
    np.testing.assert_array_equal(fw.normalized()[0], 1.0)


def test_inverse_variance_prefers_long_exposure_in_shadows():
    cfg = BracketConfig()
    y = np.stack([np.full((1, 1, 1), v) for v in (0.001, 0.008, 0.064)])
    w = fusion_weights(y, cfg, SensorParams()).normalized().ravel()
    assert w[2] > w[1] > w[0]


def test_pilot_uses_longest_unsaturated():
    y = np.array([0.1, 0.5, SATURATION_LEVEL])[:, None]
    hat = np.array([0.01, 0.02, 0.03])[:, None]
    assert pilot_estimate(y, hat)[0] == 0.02
    cfg = BracketConfig()
    # pilot times each exposure factor, clipped to the unit range
    np.testing.assert_allclose(expected_observations(y, hat, cfg).ravel(), [0.02, 0.16, 1.0])


def test_radiance_scale_maps_peak_to_one():
    cfg = BracketConfig(peak_photons=64.0)
    p = SensorParams()
    # middle exposure collecting 64 electrons at the peak reads 64 / dn_sat; y / t * scale must be 1
    assert (64.0 / p.dn_sat) / cfg.t_mid * radiance_scale(cfg, p) == pytest.approx(1.0)


def test_inverse_variance_beats_uniform_at_64_photons():
    cfg = BracketConfig(peak_photons=64.0)
    p = SensorParams()
    iv, un = [], []
    for seed in range(20):
        flux = synthetic_scene(seed, 64)
        gt = normalized_ground_truth(flux)
        br = simulate_bracket(flux, cfg, p, seed)
        iv.append(tonemapped_mse(np.clip(fuse_ml(br, cfg, p), 0, None), gt))
        un.append(tonemapped_mse(np.clip(fuse_ml(br, cfg, p, weighting="uniform"), 0, None), gt))
    assert np.mean(iv) < np.mean(un)


def test_input_validation():
    cfg = BracketConfig()
    with pytest.raises(ShapeError):
        linearize([np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), np.zeros((2, 2, 3))], cfg)
    with pytest.raises(ContractError):
        linearize([np.zeros((2, 2, 3))] * 2, cfg)
    with pytest.raises(ValueError):
        fusion_weights(np.zeros((3, 1, 1, 1)), cfg, SensorParams(), weighting="median")
