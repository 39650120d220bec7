"""Named, seeded network parameters with gradient and Adam-moment slots."""
import zlib

import numpy as np
from scipy.stats import truncnorm

from ..numerics.tensor import Tensor

ENCODER_PREFIXES = ("shallow.", "enc.")


def _param_rng(seed, name):
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def init_trunc_normal(shape, rng, std=0.02):
    return truncnorm.rvs(-2.0, 2.0, size=shape, random_state=rng) * std


def init_fan_in_uniform(shape, rng):
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


INITIALIZERS = {
    "trunc_normal": init_trunc_normal,
    "fan_in": init_fan_in_uniform,
    "zeros": lambda shape, rng: np.zeros(shape),
    "ones": lambda shape, rng: np.ones(shape),
}


class ParamStore:
    """Ordered mapping of parameter name -> :class:`Tensor`.

    Initial values depend only on ``(seed, name)``, never on registration
    order. Adam moments live in ``m`` / ``v`` keyed by the same names.
    """

    def __init__(self, seed=0, dtype=np.float32):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.kinds = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name, shape, kind):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        data = INITIALIZERS[kind](tuple(shape), _param_rng(self.seed, name)).astype(self.dtype)
        self.params[name] = Tensor(data, requires_grad=True, name=name)
        self.kinds[name] = kind
        return self.params[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self, prefix=""):
        return [n for n in self.params if n.startswith(prefix)]

    def count(self, prefixes=None):
        if prefixes is None:
            return sum(t.size for t in self.params.values())
        if isinstance(prefixes, str):
            prefixes = (prefixes,)
        return sum(t.size for n, t in self.params.items() if n.startswith(tuple(prefixes)))

    def encoder_names(self):
        return [n for n in self.params if n.startswith(ENCODER_PREFIXES)]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def astype(self, dtype):
        """Copy of the store with every tensor cast to ``dtype`` (moments dropped)."""
        other = ParamStore(self.seed, dtype)
        other.kinds = dict(self.kinds)
        other.step = self.step
        for n, t in self.params.items():
            other.params[n] = Tensor(t.data.astype(dtype), requires_grad=True, name=n)
        return other

    def copy(self):
        other = self.astype(self.dtype)
        other.m = {k: v.copy() for k, v in self.m.items()}
        other.v = {k: v.copy() for k, v in self.v.items()}
        return other
