"""Central finite-difference verification of analytic gradients."""
import numpy as np

from .tensor import Tensor


class GradCheckError(RuntimeError):
    pass


def grad_check(fn, inputs, eps=1e-5, seed=0, max_probes=None, name=None, floor=1e-8):
    """Compare backprop gradients of ``fn`` against central differences.

    ``fn`` maps the tensors in ``inputs`` to an output tensor. The output is
    reduced to a scalar by a fixed random projection so each coordinate costs
    two forward evaluations. ``max_probes`` limits how many coordinates per
    input are probed (randomly chosen); ``None`` probes all of them.

    Returns the maximum relative error
    ``|a - n| / max(|a|, |n|, floor)`` over every probed coordinate. Raise
    ``floor`` for inputs whose true gradient is identically zero, where both
    values are pure rounding noise.
    """
    label = name or getattr(fn, "__name__", "op")
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise GradCheckError(f"{label}: grad_check needs float64 inputs, got {t.dtype}")
        t.requires_grad = True
        t.grad = None

    out = fn(*inputs)
    proj = rng.standard_normal(out.shape)

    def evaluate():
        value = np.array(fn(*inputs).data, dtype=np.float64)  # copy: outputs may alias inputs
        if not np.all(np.isfinite(value)):
            raise GradCheckError(f"{label}: non-finite output while probing")
        return value

    if not np.all(np.isfinite(out.data)):
        raise GradCheckError(f"{label}: non-finite output at the base point")
    out.backward(proj)

    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64)
        if not np.all(np.isfinite(analytic)):
            raise GradCheckError(f"{label}: non-finite analytic gradient")
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            coords = rng.choice(flat.size, size=max_probes, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            plus = evaluate()
            flat[i] = orig - eps
            minus = evaluate()
            flat[i] = orig
            # difference before projecting: summing first cancels catastrophically
            numeric = float(np.sum((plus - minus) * proj)) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


def random_inputs(shapes, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return [Tensor(rng.standard_normal(s) * scale, dtype=np.float64) for s in shapes]


def directional_grad_check(fn, inputs, groups=None, directions=2, eps=1e-5, seed=0, name=None):
    """Check directional derivatives along random directions.

    For each group of inputs (default: each input alone) and each of
    ``directions`` random unit-variance directions ``d`` the analytic
    ``<grad, d>`` is compared with ``(f(x + eps d) - f(x - eps d)) / 2 eps``.
    Costs two forward evaluations per direction regardless of tensor size,
    which makes whole-network checks affordable. Returns the maximum
    relative error.
    """
    label = name or getattr(fn, "__name__", "op")
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise GradCheckError(f"{label}: grad_check needs float64 inputs, got {t.dtype}")
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        raise GradCheckError(f"{label}: non-finite output at the base point")
    proj = rng.standard_normal(out.shape)
    out.backward(proj)
    grads = [np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64) for t in inputs]
    groups = groups if groups is not None else [[i] for i in range(len(inputs))]

    def evaluate():
        value = np.array(fn(*inputs).data, dtype=np.float64)  # copy: outputs may alias inputs
        if not np.all(np.isfinite(value)):
            raise GradCheckError(f"{label}: non-finite output while probing")
        return value

    worst = 0.0
    for group in groups:
        for _ in range(directions):
            dirs = {i: rng.standard_normal(inputs[i].shape) for i in group}
            analytic = sum(float(np.sum(grads[i] * d)) for i, d in dirs.items())
            base = {i: inputs[i].data.copy() for i in group}
            for i, d in dirs.items():
                inputs[i].data[...] = base[i] + eps * d
            plus = evaluate()
            for i, d in dirs.items():
                inputs[i].data[...] = base[i] - eps * d
            minus = evaluate()
            for i in group:
                inputs[i].data[...] = base[i]
            numeric = float(np.sum((plus - minus) * proj)) / (2.0 * eps)
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
