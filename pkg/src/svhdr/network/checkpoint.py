"""Checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"SVHDRCK\\0"
    4 bytes   format version (uint32)
    8 bytes   header length N (uint64)
    N bytes   UTF-8 JSON header: config echo, step, seed, optimizer, tensor table
    ...       tensor payload, each tensor little-endian and C-ordered at its
              recorded offset from the start of the payload
"""
import json
import os
import struct

import numpy as np

from ..errors import DataError
from ..numerics.tensor import Tensor
from .config import NetworkConfig
from .params import ParamStore

MAGIC = b"SVHDRCK\0"
VERSION = 1


def save_checkpoint(path, P, cfg, opt=None, extra=None):
    tensors = []
    blobs = []
    offset = 0
    groups = (("param", {n: t.data for n, t in P.items()}), ("m", P.m), ("v", P.v))
    for group, table in groups:
        for name, arr in table.items():
            le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
            raw = le.tobytes()
            tensors.append({"group": group, "name": name, "shape": list(arr.shape),
                            "dtype": le.dtype.str, "offset": offset, "nbytes": len(raw),
                            "init": P.kinds.get(name) if group == "param" else None})
            blobs.append(raw)
            offset += len(raw)
    header = {
        "format": "svhdr-checkpoint",
        "version": VERSION,
        "byte_order": "little",
        "step": int(P.step),
        "seed": int(P.seed),
        "dtype": P.dtype.str,
        "config": cfg.to_dict(),
        "optimizer": opt.to_dict() if opt is not None else None,
        "extra": extra or {},
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def read_header(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic at byte 0)")
        version, n = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(n).decode("utf-8"))
        return header, 20 + n


def load_checkpoint(path):
    """Returns ``(params, config, header)``; Adam moments and step are restored."""
    header, start = read_header(path)
    cfg = NetworkConfig(**header["config"])
    P = ParamStore(header["seed"], np.dtype(header["dtype"]))
    P.step = header["step"]
    with open(path, "rb") as fh:
        fh.seek(start)
        payload = fh.read()
    for entry in header["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise DataError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arr = arr.astype(arr.dtype.newbyteorder("="))
        name = entry["name"]
        if entry["group"] == "param":
            P.params[name] = Tensor(arr, requires_grad=True, name=name)
            P.kinds[name] = entry.get("init")
        elif entry["group"] == "m":
            P.m[name] = arr
        else:
            P.v[name] = arr
    return P, cfg, header
