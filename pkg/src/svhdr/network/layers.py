"""Building blocks: shifted-window attention, transformer block, deformable conv, Expo-Share."""
from functools import lru_cache

import numpy as np

from ..numerics import ops
from ..numerics.tensor import ShapeError, concat, matmul, reshape, split, transpose

MASK_VALUE = -1e4


@lru_cache(maxsize=None)
def relative_position_index(window):
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel.transpose(1, 2, 0) + (window - 1)
    return (rel[..., 0] * (2 * window - 1) + rel[..., 1]).reshape(-1)


@lru_cache(maxsize=None)
def shift_mask(h, w, window, shift):
    """Additive mask (num_windows x T x T) blocking attention across cyclic-shift seams."""
    labels = np.zeros((h, w), dtype=np.int64)
    cuts = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    cnt = 0
    for hs in cuts:
        for ws in cuts:
            labels[hs, ws] = cnt
            cnt += 1
    tiles = labels.reshape(h // window, window, w // window, window).transpose(0, 2, 1, 3)
    tiles = tiles.reshape(-1, window * window)
    mask = np.where(tiles[:, :, None] != tiles[:, None, :], MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


def effective_window(h, w, window, shift):
    """Window and shift actually used on an ``h x w`` map (no shift when one window covers it)."""
    if min(h, w) <= window:
        return min(h, w), 0
    return window, shift


def sw_msa(windows, P, prefix, heads, mask=None, return_attn=False):
    """Multi-head self-attention inside each window.

    ``windows`` is ``B x T x C`` with ``T = w*w``. ``mask`` (``nW x T x T``)
    is added to the logits of each group of ``nW`` consecutive windows.
    """
    b, t, c = windows.shape
    if c % heads:
        raise ShapeError(f"sw_msa: {c} channels not divisible by {heads} heads")
    d = c // heads
    window = int(round(np.sqrt(t)))
    qkv = ops.linear(windows, P[f"{prefix}.qkv.weight"], P[f"{prefix}.qkv.bias"])
    qkv = transpose(reshape(qkv, (b, t, 3, heads, d)), (2, 0, 3, 1, 4))
    q, k, v = (reshape(z, (b, heads, t, d)) for z in split(qkv, 3, axis=0))
    logits = matmul(q * (d ** -0.5), transpose(k, (0, 1, 3, 2)))
    table = P[f"{prefix}.rpb"]
    bias = table[relative_position_index(window)]
    logits = logits + transpose(reshape(bias, (t, t, heads)), (2, 0, 1))
    if mask is not None:
        nw = mask.shape[0]
        logits = reshape(logits, (b // nw, nw, heads, t, t)) + mask[None, :, None].astype(logits.dtype)
        logits = reshape(logits, (b, heads, t, t))
    attn = ops.softmax(logits, axis=-1)
    out = transpose(matmul(attn, v), (0, 2, 1, 3))
    out = ops.linear(reshape(out, (b, t, c)), P[f"{prefix}.proj.weight"], P[f"{prefix}.proj.bias"])
    return (out, attn) if return_attn else out


def attention_on_map(x, P, prefix, heads, window, shift):
    """Partition ``x`` (N x H x W x C) into windows, attend, and merge back."""
    _, h, w, _ = x.shape
    window, shift = effective_window(h, w, window, shift)
    wins, layout = ops.window_partition(x, window, shift)
    mask = shift_mask(h, w, window, shift) if shift else None
    return ops.window_merge(sw_msa(wins, P, prefix, heads, mask), layout)


def transformer_block(x, P, prefix, heads, window, shift):
    """Pre-norm SW-MSA and MLP, each wrapped in a residual connection."""
    h = ops.layer_norm(x, P[f"{prefix}.norm1.weight"], P[f"{prefix}.norm1.bias"])
    x = x + attention_on_map(h, P, f"{prefix}.attn", heads, window, shift)
    h = ops.layer_norm(x, P[f"{prefix}.norm2.weight"], P[f"{prefix}.norm2.bias"])
    h = ops.gelu(ops.linear(h, P[f"{prefix}.mlp.fc1.weight"], P[f"{prefix}.mlp.fc1.bias"]))
    return x + ops.linear(h, P[f"{prefix}.mlp.fc2.weight"], P[f"{prefix}.mlp.fc2.bias"])


def stage(x, P, prefix, count, heads, window, shift):
    """``count`` blocks alternating unshifted / shifted windows."""
    for i in range(count):
        x = transformer_block(x, P, f"{prefix}.{i}", heads, window, shift if i % 2 else 0)
    return x


def deformable_conv(x, P, prefix):
    """3x3 deformable conv whose offsets come from a plain 3x3 conv on ``x``."""
    offsets = ops.conv2d(x, P[f"{prefix}.offset.weight"], P[f"{prefix}.offset.bias"], padding=1)
    return ops.deform_conv2d(x, offsets, P[f"{prefix}.weight"], P[f"{prefix}.bias"])


def expo_share(features, P, prefix):
    """Joint processing of all exposures' features (``n x h x w x C``).

    The exposures are concatenated along channels, passed through three
    deformable 3x3 and three 1x1 convolutions with GELU between consecutive
    layers, and split back. The caller adds the result to its input.
    """
    n, h, w, c = features.shape
    z = reshape(transpose(features, (1, 2, 0, 3)), (1, h, w, n * c))
    for i in range(3):
        z = ops.gelu(deformable_conv(z, P, f"{prefix}.dconv.{i}"))
    for i in range(3):
        z = ops.conv2d(z, P[f"{prefix}.pw.{i}.weight"], P[f"{prefix}.pw.{i}.bias"])
        if i < 2:
            z = ops.gelu(z)
    return transpose(reshape(z, (h, w, n, c)), (2, 0, 1, 3))


def exposure_concat(features):
    """``n x h x w x C`` -> ``1 x h x w x nC`` (exposure-major channels)."""
    n, h, w, c = features.shape
    return reshape(transpose(features, (1, 2, 0, 3)), (1, h, w, n * c))


def concat_channels(*tensors):
    return concat(tensors, axis=-1)
