"""Hot inner loops: counter-based random numbers, Poisson sampling, bilinear gather/scatter.

Every kernel has a pure-numpy implementation (``*_np``). When numba is
available and not disabled through ``SVHDR_DISABLE_NUMBA`` a compiled
twin (``*_nb``) is used instead. Both follow the same arithmetic so that
random draws agree element for element; the bilinear scatter may differ
in summation order only.

Random draws are addressed by ``(key, element index, draw number)``. The
output for an element never depends on how many other elements exist or
in which order they are visited.
"""
import math

import numpy as np
from scipy.special import gammaln

from ._accel import HAS_NUMBA, njit

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

# inversion below this mean, transformed rejection above
POISSON_SWITCH = 10.0


def _mix64_int(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _M1) & _MASK64
    z = ((z ^ (z >> 27)) * _M2) & _MASK64
    return z ^ (z >> 31)


def stream_key(seed, *stream):
    """Fold a seed and any number of integer stream ids into a 64-bit key."""
    k = _mix64_int(int(seed) + _GOLDEN)
    for s in stream:
        k = _mix64_int(k ^ _mix64_int(int(s) + _GOLDEN))
    return np.uint64(k)


# --------------------------------------------------------------------------
# numpy reference path

def _mix64_np(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def random_bits_np(key, index, draw):
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix64_np(np.uint64(key) ^ index)
        return _mix64_np(h + np.uint64(draw) * np.uint64(_GOLDEN))


def uniform_np(key, index, draw):
    """Uniform doubles in the open interval (0, 1)."""
    bits = random_bits_np(key, index, draw)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53


def normal_np(key, index):
    u1 = uniform_np(key, index, 0)
    u2 = uniform_np(key, index, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def poisson_np(lam, key):
    lam = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    out = np.zeros(lam.size, dtype=np.int64)
    index = np.arange(lam.size, dtype=np.uint64)

    small = np.flatnonzero((lam > 0) & (lam < POISSON_SWITCH))
    if small.size:
        lam_s = lam[small]
        u = uniform_np(key, index[small], 0)
        p = np.exp(-lam_s)
        cdf = p.copy()
        k = np.zeros(small.size, dtype=np.int64)
        active = np.flatnonzero(u > cdf)
        kk = 0
        while active.size and kk < 400:
            kk += 1
            p[active] = p[active] * (lam_s[active] / kk)
            cdf[active] = cdf[active] + p[active]
            k[active] = kk
            active = active[u[active] > cdf[active]]
        out[small] = k

    large = np.flatnonzero(lam >= POISSON_SWITCH)
    if large.size:
        lam_l = lam[large]
        slam = np.sqrt(lam_l)
        loglam = np.log(lam_l)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        invalpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2.0)
        pending = np.arange(large.size)
        draw = 0
        while pending.size:
            idx = index[large[pending]]
            U = uniform_np(key, idx, draw) - 0.5
            V = uniform_np(key, idx, draw + 1)
            draw += 2
            aa, bb, ll = a[pending], b[pending], lam_l[pending]
            us = 0.5 - np.abs(U)
            k = np.floor((2.0 * aa / us + bb) * U + ll + 0.43)
            fast = (us >= 0.07) & (V <= vr[pending])
            retry = (k < 0) | ((us < 0.013) & (V > us))
            slow = ~fast & ~retry
            accept = fast.copy()
            if slow.any():
                s = np.flatnonzero(slow)
                ps = pending[s]
                lhs = np.log(V[s]) + np.log(invalpha[ps]) - np.log(aa[s] / (us[s] * us[s]) + bb[s])
                rhs = -ll[s] + k[s] * loglam[ps] - gammaln(k[s] + 1.0)
                accept[s] = lhs <= rhs
            done = pending[accept]
            out[large[done]] = k[accept].astype(np.int64)
            pending = pending[~accept]
    return out


def bilinear_gather_np(fmap, ys, xs):
    n, h, w, c = fmap.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = ys - y0
    wx = xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    batch = np.arange(n)[:, None]
    out = np.zeros(ys.shape + (c,), dtype=fmap.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            wgt = (wy if dy else 1.0 - wy) * (wx if dx else 1.0 - wx) * valid
            v = fmap[batch, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += wgt[..., None].astype(fmap.dtype) * v
    return out


def bilinear_scatter_np(fmap, ys, xs, gout):
    """Gradients of :func:`bilinear_gather_np` w.r.t. the map and both coordinates."""
    n, h, w, c = fmap.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = ys - y0
    wx = xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    batch = np.arange(n)[:, None]
    gmap = np.zeros(n * h * w * c, dtype=np.float64)
    gy = np.zeros(ys.shape, dtype=np.float64)
    gx = np.zeros(xs.shape, dtype=np.float64)
    chan = np.arange(c)
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            fy = wy if dy else 1.0 - wy
            fx = wx if dx else 1.0 - wx
            sy = 1.0 if dy else -1.0
            sx = 1.0 if dx else -1.0
            v = fmap[batch, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            dot = np.einsum("npc,npc->np", gout, v) * valid
            gy += sy * fx * dot
            gx += sx * fy * dot
            wgt = fy * fx * valid
            flat = ((batch * h + np.clip(yy, 0, h - 1)) * w + np.clip(xx, 0, w - 1)) * c
            idx = (flat[..., None] + chan).ravel()
            gmap += np.bincount(idx, weights=(wgt[..., None] * gout).ravel(), minlength=gmap.size)
    return gmap.reshape(fmap.shape).astype(fmap.dtype), gy.astype(ys.dtype), gx.astype(xs.dtype)


# --------------------------------------------------------------------------
# numba path

if HAS_NUMBA:

    @njit(cache=True)
    def _mix64_nb(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def _uniform_nb(key, index, draw):
        h = _mix64_nb(key ^ index)
        h = _mix64_nb(h + np.uint64(draw) * np.uint64(_GOLDEN))
        return (float(h >> np.uint64(11)) + 0.5) * _INV53

    @njit(cache=True)
    def _poisson_one_nb(lam, key, index):
        if lam <= 0.0:
            return 0
        if lam < POISSON_SWITCH:
            u = _uniform_nb(key, index, 0)
            p = math.exp(-lam)
            cdf = p
            k = 0
            while u > cdf and k < 400:
                k += 1
                p = p * (lam / k)
                cdf = cdf + p
            return k
        slam = math.sqrt(lam)
        loglam = math.log(lam)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        invalpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2.0)
        draw = 0
        while True:
            U = _uniform_nb(key, index, draw) - 0.5
            V = _uniform_nb(key, index, draw + 1)
            draw += 2
            us = 0.5 - abs(U)
            k = math.floor((2.0 * a / us + b) * U + lam + 0.43)
            if us >= 0.07 and V <= vr:
                return int(k)
            if k < 0 or (us < 0.013 and V > us):
                continue
            lhs = math.log(V) + math.log(invalpha) - math.log(a / (us * us) + b)
            rhs = -lam + k * loglam - math.lgamma(k + 1.0)
            if lhs <= rhs:
                return int(k)

    @njit(cache=True)
    def _poisson_loop_nb(lam, key, out):
        for i in range(lam.size):
            out[i] = _poisson_one_nb(lam[i], key, np.uint64(i))

    def poisson_nb(lam, key):
        lam = np.ascontiguousarray(lam, dtype=np.float64).ravel()
        out = np.empty(lam.size, dtype=np.int64)
        _poisson_loop_nb(lam, np.uint64(key), out)
        return out

    @njit(cache=True)
    def _gather_loop_nb(fmap, ys, xs, out):
        n, h, w, c = fmap.shape
        for b in range(n):
            for p in range(ys.shape[1]):
                y = ys[b, p]
                x = xs[b, p]
                fy0 = math.floor(y)
                fx0 = math.floor(x)
                wy = y - fy0
                wx = x - fx0
                y0 = int(fy0)
                x0 = int(fx0)
                for dy in range(2):
                    yy = y0 + dy
                    if yy < 0 or yy >= h:
                        continue
                    fy = wy if dy else 1.0 - wy
                    for dx in range(2):
                        xx = x0 + dx
                        if xx < 0 or xx >= w:
                            continue
                        wgt = fy * (wx if dx else 1.0 - wx)
                        for ch in range(c):
                            out[b, p, ch] += wgt * fmap[b, yy, xx, ch]

    @njit(cache=True)
    def _scatter_loop_nb(fmap, ys, xs, gout, gmap, gy, gx):
        n, h, w, c = fmap.shape
        for b in range(n):
            for p in range(ys.shape[1]):
                y = ys[b, p]
                x = xs[b, p]
                fy0 = math.floor(y)
                fx0 = math.floor(x)
                wy = y - fy0
                wx = x - fx0
                y0 = int(fy0)
                x0 = int(fx0)
                for dy in range(2):
                    yy = y0 + dy
                    if yy < 0 or yy >= h:
                        continue
                    fy = wy if dy else 1.0 - wy
                    sy = 1.0 if dy else -1.0
                    for dx in range(2):
                        xx = x0 + dx
                        if xx < 0 or xx >= w:
                            continue
                        fx = wx if dx else 1.0 - wx
                        sx = 1.0 if dx else -1.0
                        wgt = fy * fx
                        dot = 0.0
                        for ch in range(c):
                            g = gout[b, p, ch]
                            dot += g * fmap[b, yy, xx, ch]
                            gmap[b, yy, xx, ch] += wgt * g
                        gy[b, p] += sy * fx * dot
                        gx[b, p] += sx * fy * dot

    def bilinear_gather_nb(fmap, ys, xs):
        fmap = np.ascontiguousarray(fmap)
        out = np.zeros(ys.shape + (fmap.shape[-1],), dtype=fmap.dtype)
        _gather_loop_nb(fmap, np.ascontiguousarray(ys), np.ascontiguousarray(xs), out)
        return out

    def bilinear_scatter_nb(fmap, ys, xs, gout):
        fmap = np.ascontiguousarray(fmap)
        gmap = np.zeros(fmap.shape, dtype=np.float64)
        gy = np.zeros(ys.shape, dtype=np.float64)
        gx = np.zeros(xs.shape, dtype=np.float64)
        _scatter_loop_nb(fmap, np.ascontiguousarray(ys), np.ascontiguousarray(xs),
                         np.ascontiguousarray(gout), gmap, gy, gx)
        return gmap.astype(fmap.dtype), gy.astype(ys.dtype), gx.astype(xs.dtype)

    poisson = poisson_nb
    bilinear_gather = bilinear_gather_nb
    bilinear_scatter = bilinear_scatter_nb
else:
    poisson = poisson_np
    bilinear_gather = bilinear_gather_np
    bilinear_scatter = bilinear_scatter_np

uniform = uniform_np
normal = normal_np
