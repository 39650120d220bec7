"""Adam with a cosine learning-rate schedule, and the training loop."""
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ContractError, NumericalError
from ..transforms import DEFAULT_TONEMAP, loss as hdr_loss
from .model import forward

log = logging.getLogger(__name__)

# full recipe: 1184 iterations/epoch x 300 epochs, batch 3
FULL_ITERS_PER_EPOCH = 1184
FULL_EPOCHS = 300
FULL_BATCH_SIZE = 3
FULL_TOTAL_STEPS = FULL_ITERS_PER_EPOCH * FULL_EPOCHS


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    total_steps: int = 2000

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ContractError(f"Adam betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.total_steps < 1:
            raise ContractError("total_steps must be positive")

    def lr_at(self, step):
        """Cosine decay from ``lr`` at step 0 to 0 at ``total_steps``."""
        frac = min(step, self.total_steps) / self.total_steps
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * frac))

    def to_dict(self):
        return asdict(self)


def adam_update(P, opt):
    lr = opt.lr_at(P.step)
    t = P.step + 1
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    for name, p in P.items():
        g = p.grad
        if g is None:
            continue
        m = P.m.get(name)
        if m is None:
            m = P.m[name] = np.zeros_like(p.data)
            P.v[name] = np.zeros_like(p.data)
        v = P.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)).astype(p.dtype)
    P.step = t
    return lr


def _first_nonfinite(P):
    for name, p in P.items():
        if not np.all(np.isfinite(p.data)):
            return f"parameter {name}"
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return f"gradient of {name}"
    return None


def train_step(batch, P, cfg, opt, tonemap=DEFAULT_TONEMAP, reduction="norm"):
    """One Adam step on ``batch`` = list of ``(inputs, target)`` pairs; returns the mean loss."""
    if not batch:
        raise ContractError("train_step needs a nonempty batch")
    P.zero_grad()
    total = 0.0
    for inputs, target in batch:
        value = hdr_loss(forward(inputs, P, cfg), target, tonemap, reduction)
        if not np.isfinite(value.data):
            culprit = _first_nonfinite(P) or "network output"
            raise NumericalError(f"non-finite loss at step {P.step}; first non-finite tensor: {culprit}")
        value.backward(np.asarray(1.0 / len(batch), dtype=value.dtype))
        total += float(value.data)
    culprit = _first_nonfinite(P)
    if culprit:
        raise NumericalError(f"non-finite values at step {P.step}: {culprit}")
    adam_update(P, opt)
    return total / len(batch)


def batch_indices(seed, step, n_samples, batch_size):
    """Sample indices for ``step``; a pure function of (seed, step) so resumed runs match."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(step)])
    return rng.choice(n_samples, size=batch_size, replace=batch_size > n_samples)


def train(samples, P, cfg, opt, steps=None, batch_size=1, seed=0, log_every=50,
          on_log=None, stop_when=None, on_checkpoint=None, checkpoint_every=0, reduction="norm"):
    """Run ``train_step`` until ``steps`` (default ``opt.total_steps``) are done.

    ``stop_when(step, loss)`` may end the run early. ``on_checkpoint(P)`` is
    called every ``checkpoint_every`` steps, at the end, and with the last
    good state before re-raising a :class:`NumericalError`.
    Returns the list of per-step losses.
    """
    steps = opt.total_steps if steps is None else steps
    trace = []
    while P.step < steps:
        step = P.step
        idx = batch_indices(seed, step, len(samples), batch_size)
        try:
            value = train_step([samples[i] for i in idx], P, cfg, opt, reduction=reduction)
        except NumericalError:
            if on_checkpoint:
                on_checkpoint(P)
            raise
        trace.append(value)
        stop = bool(stop_when and stop_when(step, value))
        if log_every and (step % log_every == 0 or P.step == steps or stop):
            log.info("step %d loss %.6f lr %.3g", step, value, opt.lr_at(step))
            if on_log:
                on_log(step, value)
        if on_checkpoint and checkpoint_every and P.step % checkpoint_every == 0:
            on_checkpoint(P)
        if stop:
            break
    if on_checkpoint:
        on_checkpoint(P)
    return trace
