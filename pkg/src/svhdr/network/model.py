"""Fusion network: parameter layout and forward pass."""
import numpy as np

from ..errors import ContractError
from ..numerics import ops
from ..numerics.tensor import ShapeError, Tensor, concat, reshape
from . import layers
from .config import NetworkConfig
from .params import ParamStore


def _add_block(P, prefix, width, heads, hidden, window):
    P.add(f"{prefix}.norm1.weight", (width,), "ones")
    P.add(f"{prefix}.norm1.bias", (width,), "zeros")
    P.add(f"{prefix}.attn.qkv.weight", (3 * width, width), "trunc_normal")
    P.add(f"{prefix}.attn.qkv.bias", (3 * width,), "zeros")
    P.add(f"{prefix}.attn.rpb", ((2 * window - 1) ** 2, heads), "trunc_normal")
    P.add(f"{prefix}.attn.proj.weight", (width, width), "trunc_normal")
    P.add(f"{prefix}.attn.proj.bias", (width,), "zeros")
    P.add(f"{prefix}.norm2.weight", (width,), "ones")
    P.add(f"{prefix}.norm2.bias", (width,), "zeros")
    P.add(f"{prefix}.mlp.fc1.weight", (hidden, width), "trunc_normal")
    P.add(f"{prefix}.mlp.fc1.bias", (hidden,), "zeros")
    P.add(f"{prefix}.mlp.fc2.weight", (width, hidden), "trunc_normal")
    P.add(f"{prefix}.mlp.fc2.bias", (width,), "zeros")


def _add_conv(P, prefix, cout, cin, k, kind="fan_in"):
    P.add(f"{prefix}.weight", (cout, cin, k, k), kind)
    P.add(f"{prefix}.bias", (cout,), "zeros")


def build_network(cfg=None, seed=0, dtype=np.float32):
    """Register every parameter of the network described by ``cfg``."""
    cfg = cfg or NetworkConfig()
    if not isinstance(cfg, NetworkConfig):
        raise ContractError("cfg must be a NetworkConfig")
    P = ParamStore(seed, dtype)
    n, L, win = cfg.num_exposures, cfg.levels, cfg.window

    # shared per-exposure encoder
    _add_conv(P, "shallow", cfg.base_channels, 6, 3)
    for lvl in range(L):
        c = cfg.channels(lvl)
        for b in range(cfg.blocks_per_level[lvl]):
            _add_block(P, f"enc.{lvl}.blocks.{b}", c, cfg.heads_per_level[lvl], cfg.hidden(lvl), win)
        if lvl < L - 1:
            _add_conv(P, f"enc.{lvl}.down", c // 2, c, 3)

    # cross-exposure blocks
    for lvl in range(L):
        width = n * cfg.channels(lvl)
        for i in range(3):
            _add_conv(P, f"share.{lvl}.dconv.{i}", width, width, 3)
            _add_conv(P, f"share.{lvl}.dconv.{i}.offset", 18, width, 3, kind="zeros")
        for i in range(3):
            _add_conv(P, f"share.{lvl}.pw.{i}", width, width, 1)
    _add_conv(P, "merge", cfg.channels(L - 1), n * cfg.channels(L - 1), 1)

    # decoder
    for lvl in range(L - 2, -1, -1):
        c = cfg.channels(lvl)
        _add_conv(P, f"dec.{lvl}.up", 4 * c, 2 * c, 3)
        _add_conv(P, f"dec.{lvl}.fuse", c, c + n * c, 1)
        for b in range(cfg.blocks_per_level[lvl]):
            _add_block(P, f"dec.{lvl}.blocks.{b}", c, cfg.heads_per_level[lvl], cfg.hidden(lvl), win)
    for b in range(cfg.refinement_blocks):
        _add_block(P, f"refine.blocks.{b}", cfg.base_channels, cfg.heads_per_level[0], cfg.hidden(0), win)
    _add_conv(P, "head", 3, cfg.base_channels, 3)
    return P


def _stack_inputs(inputs, cfg, dtype):
    if isinstance(inputs, Tensor):
        arr = inputs.data
    elif isinstance(inputs, np.ndarray):
        arr = inputs
    else:
        shapes = {np.shape(j) for j in inputs}
        if len(shapes) != 1:
            raise ShapeError(f"exposures have inconsistent shapes: {sorted(shapes)}")
        arr = np.stack([np.asarray(j) for j in inputs])
    if arr.ndim != 4 or arr.shape[-1] != 6:
        raise ShapeError(f"expected n x H x W x 6 network inputs, got {arr.shape}")
    if arr.shape[0] != cfg.num_exposures:
        raise ShapeError(f"expected {cfg.num_exposures} exposures, got {arr.shape[0]}")
    return Tensor(arr.astype(dtype, copy=False))


def forward(inputs, P, cfg, return_features=False):
    """Fuse the exposures' network inputs (each H x W x 6) into an H x W x 3 HDR estimate."""
    x = _stack_inputs(inputs, cfg, P.dtype)
    n, h, w, _ = x.shape
    m = cfg.pad_multiple
    x = ops.pad_spatial(x, (-h) % m, (-w) % m, mode="reflect")
    L, win, shift = cfg.levels, cfg.window, cfg.shift

    f = ops.conv2d(x, P["shallow.weight"], P["shallow.bias"], padding=1)
    skips = []
    for lvl in range(L):
        f = layers.stage(f, P, f"enc.{lvl}.blocks", cfg.blocks_per_level[lvl], cfg.heads_per_level[lvl], win, shift)
        f = f + layers.expo_share(f, P, f"share.{lvl}")
        if lvl < L - 1:
            skips.append(f)
            f = ops.conv2d(f, P[f"enc.{lvl}.down.weight"], P[f"enc.{lvl}.down.bias"], padding=1)
            f = ops.pixel_shuffle(f, 2, "down")

    z = ops.conv2d(layers.exposure_concat(f), P["merge.weight"], P["merge.bias"])
    for lvl in range(L - 2, -1, -1):
        z = ops.conv2d(z, P[f"dec.{lvl}.up.weight"], P[f"dec.{lvl}.up.bias"], padding=1)
        z = ops.pixel_shuffle(z, 2, "up")
        z = concat([z, layers.exposure_concat(skips[lvl])], axis=-1)
        z = ops.conv2d(z, P[f"dec.{lvl}.fuse.weight"], P[f"dec.{lvl}.fuse.bias"])
        z = layers.stage(z, P, f"dec.{lvl}.blocks", cfg.blocks_per_level[lvl], cfg.heads_per_level[lvl], win, shift)
    features = layers.stage(z, P, "refine.blocks", cfg.refinement_blocks, cfg.heads_per_level[0], win, shift)
    out = ops.conv2d(features, P["head.weight"], P["head.bias"], padding=1)
    out = ops.clamp_min(ops.crop(out, h, w), 0.0)
    out = reshape(out, (h, w, 3))
    return (out, features) if return_features else out


def parameter_count(P):
    return P.count()
