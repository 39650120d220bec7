"""Differentiable primitives used by the fusion network.

Images are channels-last. Spatial ops accept ``H x W x C`` or a batched
``N x H x W x C`` tensor; the unbatched form is returned unbatched.
"""
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .. import kernels
from .tensor import ShapeError, Tensor, as_tensor, concat, make, matmul, reshape, split, transpose

LN_EPS = 1e-6
_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected H x W x C or N x H x W x C, got shape {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return reshape(y, y.shape[1:]) if squeeze else y


# ---------------------------------------------------------------------------
# convolution

def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation with a ``Cout x Cin x k x k`` kernel and zero padding."""
    x, squeeze = _batched(x)
    weight = as_tensor(weight)
    cout, cin, kh, kw = weight.shape
    n, h, w, c = x.shape
    if c != cin:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {cin}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {h}x{w} too small for kernel {kh}x{kw} with padding {padding}")

    xd, wd = x.data, weight.data
    if kh == 1 and kw == 1 and padding == 0 and stride == 1:
        wmat = wd[:, :, 0, 0]
        out = xd @ wmat.T

        def backward(g):
            gx = g @ wmat if x.requires_grad else None
            gw = np.tensordot(g, xd, axes=([0, 1, 2], [0, 1, 2]))[:, :, None, None]
            return gx, gw
    else:
        xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xd
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
        out = np.tensordot(win, wd, axes=([3, 4, 5], [1, 2, 3]))

        def backward(g):
            gw = np.tensordot(g, win, axes=([0, 1, 2], [0, 1, 2]))
            gx = None
            if x.requires_grad:
                gcols = np.tensordot(g, wd, axes=([3], [0]))  # n, ho, wo, cin, kh, kw
                gxp = np.zeros(xp.shape, dtype=xd.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += gcols[..., i, j]
                gx = gxp[:, padding:padding + h, padding:padding + w] if padding else gxp
            return gx, gw

    y = make(out.astype(xd.dtype, copy=False), (x, weight), backward)
    if bias is not None:
        y = y + as_tensor(bias)
    return _unbatch(y, squeeze)


# ---------------------------------------------------------------------------
# permutations

def pixel_shuffle(x, r, direction):
    """Space-to-depth (``"down"``) or depth-to-space (``"up"``) by factor ``r``.

    Channel ``c * r*r + dy * r + dx`` of the low-resolution tensor holds
    sub-position ``(dy, dx)`` of input channel ``c``.
    """
    x, squeeze = _batched(x)
    n, h, w, c = x.shape
    if direction == "down":
        if h % r or w % r:
            raise ShapeError(f"pixel_shuffle down: {h}x{w} not divisible by {r}")
        y = reshape(x, (n, h // r, r, w // r, r, c))
        y = transpose(y, (0, 1, 3, 5, 2, 4))
        y = reshape(y, (n, h // r, w // r, c * r * r))
    elif direction == "up":
        if c % (r * r):
            raise ShapeError(f"pixel_shuffle up: {c} channels not divisible by {r * r}")
        co = c // (r * r)
        y = reshape(x, (n, h, w, co, r, r))
        y = transpose(y, (0, 1, 4, 2, 5, 3))
        y = reshape(y, (n, h * r, w * r, co))
    else:
        raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")
    return _unbatch(y, squeeze)


def roll(x, shift, axis):
    x = as_tensor(x)
    return make(np.roll(x.data, shift, axis=axis), (x,),
                lambda g: (np.roll(g, tuple(-s for s in shift), axis=axis),))


def window_partition(x, window, shift=0):
    """Cut into non-overlapping ``window x window`` tiles after a cyclic shift.

    Returns ``(windows, layout)`` where windows is ``num_windows x window**2 x C``
    ordered batch-major, then row-major over tiles.
    """
    x, squeeze = _batched(x)
    n, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"window_partition: {h}x{w} not divisible by window {window}")
    if not 0 <= shift < window:
        raise ShapeError(f"window_partition: shift {shift} outside [0, {window})")
    if shift:
        x = roll(x, (-shift, -shift), axis=(1, 2))
    y = reshape(x, (n, h // window, window, w // window, window, c))
    y = transpose(y, (0, 1, 3, 2, 4, 5))
    y = reshape(y, (n * (h // window) * (w // window), window * window, c))
    return y, (n, h, w, c, window, shift, squeeze)


def window_merge(windows, layout):
    n, h, w, c, window, shift, squeeze = layout
    y = reshape(windows, (n, h // window, w // window, window, window, c))
    y = transpose(y, (0, 1, 3, 2, 4, 5))
    y = reshape(y, (n, h, w, c))
    if shift:
        y = roll(y, (shift, shift), axis=(1, 2))
    return _unbatch(y, squeeze)


def pad_spatial(x, bottom, right, mode="reflect"):
    """Pad at the bottom and right edges (``reflect`` or ``zeros``)."""
    x, squeeze = _batched(x)
    n, h, w, c = x.shape
    if not bottom and not right:
        return _unbatch(x, squeeze)
    if mode == "zeros":
        out = np.pad(x.data, ((0, 0), (0, bottom), (0, right), (0, 0)))
        y = make(out, (x,), lambda g: (g[:, :h, :w].copy(),))
        return _unbatch(y, squeeze)
    rows = np.pad(np.arange(h), (0, bottom), mode=mode)
    cols = np.pad(np.arange(w), (0, right), mode=mode)
    out = x.data[:, rows][:, :, cols]

    def backward(g):
        gr = np.zeros((n, h, g.shape[2], c), dtype=g.dtype)
        np.add.at(gr, (slice(None), rows), g)
        gx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), cols), gr)
        return (gx,)

    return _unbatch(make(out, (x,), backward), squeeze)


def crop(x, h, w):
    x, squeeze = _batched(x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, :h, :w] = g
        return (full,)

    return _unbatch(make(x.data[:, :h, :w], (x,), backward), squeeze)


# ---------------------------------------------------------------------------
# dense / normalization / activations

def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` stored ``out x in``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input width {x.shape[-1]} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd).reshape(xd.shape) if x.requires_grad else None
        return gx, g2.T @ x2

    y = make((x2 @ wd.T).reshape(lead + (wd.shape[0],)), (x, weight), backward)
    if bias is not None:
        y = y + as_tensor(bias)
    return y


def layer_norm(x, weight, bias, eps=LN_EPS):
    """Normalize over the last (channel) axis, then scale and shift."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    wd = weight.data
    red = tuple(range(xd.ndim - 1))

    def backward(g):
        gxhat = g * wd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(xhat * wd + bias.data, (x, weight, bias), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def gelu(x):
    """Exact (erf) GELU."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT1_2))
    pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
    return make((xd * cdf).astype(xd.dtype, copy=False), (x,),
                lambda g: ((g * (cdf + xd * pdf)).astype(xd.dtype, copy=False),))


def clamp_min(x, lo=0.0):
    x = as_tensor(x)
    keep = x.data > lo
    return make(np.where(keep, x.data, lo).astype(x.dtype), (x,), lambda g: (g * keep,))


def log1p(x):
    x = as_tensor(x)
    xd = x.data
    return make(np.log1p(xd), (x,), lambda g: (g / (1.0 + xd),))


def sqrt(x):
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return make(y, (x,), lambda g: (g * 0.5 / y,))


def square(x):
    x = as_tensor(x)
    xd = x.data
    return make(xd * xd, (x,), lambda g: (2.0 * g * xd,))


# ---------------------------------------------------------------------------
# sampling

def bilinear_sample(fmap, y, x):
    """Sample ``fmap`` at fractional ``(y, x)`` with zero padding outside.

    ``fmap`` is ``H x W x C`` with coordinates of any shape, or
    ``N x H x W x C`` with coordinates shaped ``N x ...``. The result has
    the coordinate shape plus a trailing channel axis.
    """
    fmap, y, x = as_tensor(fmap), as_tensor(y), as_tensor(x)
    if y.shape != x.shape:
        raise ShapeError("bilinear_sample: y and x must have the same shape")
    batched = fmap.ndim == 4
    fd = fmap.data if batched else fmap.data[None]
    n = fd.shape[0]
    coord_shape = y.shape
    if batched and coord_shape[0] != n:
        raise ShapeError("bilinear_sample: coordinate batch does not match feature map")
    ys = y.data.reshape(n, -1)
    xs = x.data.reshape(n, -1)
    out = kernels.bilinear_gather(fd, ys, xs)
    out_shape = coord_shape + (fd.shape[-1],)

    def backward(g):
        gm, gy, gx = kernels.bilinear_scatter(fd, ys, xs, g.reshape(n, ys.shape[1], -1))
        if not batched:
            gm = gm[0]
        return gm, gy.reshape(coord_shape), gx.reshape(coord_shape)

    return make(out.reshape(out_shape), (fmap, y, x), backward)


_GRID_CACHE = {}


def _tap_grid(h, w, k, dtype):
    key = (h, w, k, np.dtype(dtype).str)
    if key not in _GRID_CACHE:
        r = k // 2
        ky, kx = np.meshgrid(np.arange(k) - r, np.arange(k) - r, indexing="ij")
        gy = np.arange(h)[:, None, None] + ky.ravel()[None, None, :]
        gx = np.arange(w)[None, :, None] + kx.ravel()[None, None, :]
        gy = np.broadcast_to(gy, (h, w, k * k)).astype(dtype)
        gx = np.broadcast_to(gx, (h, w, k * k)).astype(dtype)
        _GRID_CACHE[key] = (gy, gx)
    return _GRID_CACHE[key]


def deform_conv2d(x, offsets, weight, bias=None):
    """Deformable convolution, stride 1, 'same' padding, no modulation.

    ``offsets`` is ``N x H x W x 2k^2`` holding ``(dy, dx)`` pairs per tap in
    row-major tap order.
    """
    x, squeeze = _batched(x)
    offsets, _ = _batched(offsets)
    weight = as_tensor(weight)
    cout, cin, k, _k = weight.shape
    n, h, w, c = x.shape
    if c != cin:
        raise ShapeError(f"deform_conv2d: input has {c} channels but weight expects {cin}")
    if offsets.shape != (n, h, w, 2 * k * k):
        raise ShapeError(f"deform_conv2d: offsets shape {offsets.shape} != {(n, h, w, 2 * k * k)}")
    gy, gx = _tap_grid(h, w, k, x.dtype)
    dy, dx = split(reshape(offsets, (n, h, w, k * k, 2)), 2, axis=-1)
    ys = reshape(dy, (n, h, w, k * k)) + gy
    xs = reshape(dx, (n, h, w, k * k)) + gx
    cols = bilinear_sample(x, reshape(ys, (n, h * w * k * k)), reshape(xs, (n, h * w * k * k)))
    cols = reshape(cols, (n, h, w, k * k * c))
    wmat = reshape(transpose(weight, (2, 3, 1, 0)), (k * k * cin, cout))
    y = matmul(cols, wmat)
    if bias is not None:
        y = y + as_tensor(bias)
    return _unbatch(y, squeeze)


__all__ = [
    "Tensor", "ShapeError", "conv2d", "pixel_shuffle", "roll", "window_partition", "window_merge",
    "pad_spatial", "crop", "linear", "layer_norm", "softmax", "gelu", "clamp_min", "log1p", "sqrt",
    "square", "bilinear_sample", "deform_conv2d", "concat", "split",
]
