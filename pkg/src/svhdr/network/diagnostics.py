"""Whole-network gradient verification."""
import numpy as np

from ..numerics.gradcheck import directional_grad_check
from ..transforms import loss, network_inputs
from .config import NetworkConfig
from .model import build_network, forward


def perturbed_network(cfg, seed=0):
    """f64 parameters moved off their structured initial values.

    Zero-initialized offset predictors would put every deformable tap on
    an integer grid point, where bilinear sampling has a kink, and unit
    norm gains hide scale errors. A positive head bias keeps the output
    clamp inactive so the loss stays differentiable.
    """
    P = build_network(cfg, seed, np.float64)
    rng = np.random.default_rng([seed, 1])
    for name, t in P.items():
        if ".offset." in name:
            t.data[...] = rng.uniform(-0.05, 0.05, t.shape) if name.endswith("weight") \
                else rng.uniform(-0.45, 0.45, t.shape)
        elif P.kinds[name] == "zeros":
            t.data[...] = rng.normal(0.0, 0.02, t.shape)
        elif P.kinds[name] == "ones":
            t.data[...] = 1.0 + rng.normal(0.0, 0.1, t.shape)
    P["head.bias"].data[...] = 0.5
    return P


def parameter_groups(P, cfg):
    """Parameter indices grouped by stage: shallow, per-level encoder/share/decoder, merge, refine, head."""
    names = list(P.params)
    prefixes = ["shallow."]
    for lvl in range(cfg.levels):
        prefixes += [f"enc.{lvl}.", f"share.{lvl}."]
    prefixes += ["merge."] + [f"dec.{lvl}." for lvl in range(cfg.levels - 1)] + ["refine.", "head."]
    # offsets stay with their stage: alone, their directional derivative is
    # near roundoff level and level-0 taps cross bilinear kinks
    groups = [[i for i, n in enumerate(names) if n.startswith(p)] for p in prefixes]
    return [g for g in groups if g]


def network_grad_check(cfg=None, size=16, directions=2, seed=0, eps=1e-5):
    """Max relative error of forward + loss directional derivatives over all parameters."""
    cfg = cfg or NetworkConfig.tiny()
    P = perturbed_network(cfg, seed)
    rng = np.random.default_rng([seed, 2])
    factors = (1.0, 8.0, 64.0)[: cfg.num_exposures]
    bracket = [rng.uniform(0.05, 0.95, (size, size, 3)) for _ in range(cfg.num_exposures)]
    inputs = np.stack(network_inputs(bracket, factors))
    target = rng.uniform(0.0, 1.0, (size, size, 3))
    names = list(P.params)

    def fn(*params):
        return loss(forward(inputs, P, cfg), target)

    return directional_grad_check(fn, [P[n] for n in names], parameter_groups(P, cfg),
                                  directions=directions, eps=eps, seed=seed, name="network")
