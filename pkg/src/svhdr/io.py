"""Image files: PFM, Radiance RGBE (.hdr) and 8/16-bit PNG.

Arrays are H x W x C (C = 1 or 3) in RGB order, top row first.
"""
import logging
import os
import re

import cv2
import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)


class ParseError(DataError):
    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = path
        self.offset = offset


def _as_image(img):
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise DataError(f"expected an H x W x 1|3 image, got shape {img.shape}")
    return img


# ---------------------------------------------------------------------------
# PFM

def write_pfm(path, img):
    img = _as_image(img).astype(np.float32)
    h, w, c = img.shape
    tag = b"PF" if c == 3 else b"Pf"
    with open(path, "wb") as fh:
        fh.write(tag + b"\n%d %d\n-1.0\n" % (w, h))
        fh.write(np.ascontiguousarray(img[::-1]).astype("<f4").tobytes())


def _read_token(data, pos, path):
    """Next whitespace-delimited header token and the offset just past its terminator."""
    while pos < len(data) and data[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ParseError(path, start, "unexpected end of header")
    return data[start:pos], start, pos + 1


def read_pfm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tag, at, pos = _read_token(data, 0, path)
    if tag not in (b"PF", b"Pf"):
        raise ParseError(path, at, f"bad PFM magic {tag!r}")
    c = 3 if tag == b"PF" else 1
    dims = []
    for _ in range(2):
        tok, at, pos = _read_token(data, pos, path)
        if not tok.isdigit() or int(tok) == 0:
            raise ParseError(path, at, f"bad image dimension {tok!r}")
        dims.append(int(tok))
    w, h = dims
    tok, at, pos = _read_token(data, pos, path)
    try:
        scale = float(tok)
    except ValueError:
        raise ParseError(path, at, f"bad scale {tok!r}") from None
    if scale == 0:
        raise ParseError(path, at, "scale must be nonzero")
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * c * 4
    if len(data) - pos < need:
        raise ParseError(path, pos, f"expected {need} bytes of pixel data, found {len(data) - pos}")
    img = np.frombuffer(data, dtype=dtype, count=w * h * c, offset=pos).reshape(h, w, c)
    return img[::-1].astype(np.float32)


# ---------------------------------------------------------------------------
# Radiance RGBE

RGBE_MAX = np.ldexp(255.0 / 256.0, 127)


def rgbe_encode(img):
    """Float RGB -> uint8 RGBE. Negative or overflowing values are clamped with a warning."""
    img = _as_image(img).astype(np.float64)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    if np.any(img < 0) or np.any(img > RGBE_MAX) or not np.all(np.isfinite(img)):
        log.warning("RGBE write: clamping values outside [0, %.3g]", RGBE_MAX)
        img = np.clip(np.nan_to_num(img, nan=0.0, posinf=RGBE_MAX), 0.0, RGBE_MAX)
    v = img.max(axis=2)
    mant, exp = np.frexp(v)
    out = np.zeros(img.shape[:2] + (4,), dtype=np.uint8)
    ok = v >= 1e-32
    scale = np.where(ok, mant * 256.0 / np.where(ok, v, 1.0), 0.0)
    out[..., :3] = np.minimum(np.floor(img * scale[..., None]), 255).astype(np.uint8)
    out[..., 3] = np.where(ok, exp + 128, 0).astype(np.uint8)
    return out


def rgbe_decode(rgbe):
    """uint8 RGBE -> float32 RGB using the mantissa-centred rule ``(m + 0.5) * 2**(e - 136)``."""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    e = rgbe[..., 3].astype(np.int32)
    f = np.where(e > 0, np.ldexp(1.0, e - 136), 0.0)
    return ((rgbe[..., :3].astype(np.float64) + 0.5) * f[..., None]).astype(np.float32)


def write_hdr(path, img):
    rgbe = rgbe_encode(img)
    h, w = rgbe.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        fh.write(b"-Y %d +X %d\n" % (h, w))
        fh.write(rgbe.tobytes())


_RES = re.compile(rb"^-Y (\d+) \+X (\d+)$")


def _read_rle_scanline(data, pos, w, path):
    line = np.empty((4, w), dtype=np.uint8)
    for ch in range(4):
        x = 0
        while x < w:
            if pos >= len(data):
                raise ParseError(path, pos, "truncated run-length scanline")
            count = data[pos]
            pos += 1
            if count > 128:
                count -= 128
                if x + count > w or pos >= len(data):
                    raise ParseError(path, pos - 1, "bad run length")
                line[ch, x:x + count] = data[pos]
                pos += 1
            else:
                if count == 0 or x + count > w or pos + count > len(data):
                    raise ParseError(path, pos - 1, "bad literal length")
                line[ch, x:x + count] = np.frombuffer(data, np.uint8, count, pos)
                pos += count
            x += count
    return line.T, pos


def read_hdr(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not (data.startswith(b"#?RADIANCE") or data.startswith(b"#?RGBE")):
        raise ParseError(path, 0, "missing #?RADIANCE signature")
    pos = 0
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise ParseError(path, pos, "header not terminated by a blank line")
        line = data[pos:end]
        if line.startswith(b"FORMAT=") and line != b"FORMAT=32-bit_rle_rgbe":
            raise ParseError(path, pos, f"unsupported {line.decode(errors='replace')}")
        pos = end + 1
        if not line.strip():
            break
    end = data.find(b"\n", pos)
    m = _RES.match(data[pos:end if end >= 0 else len(data)].strip())
    if not m:
        raise ParseError(path, pos, "unsupported resolution line (need '-Y H +X W')")
    h, w = int(m.group(1)), int(m.group(2))
    pos = end + 1
    out = np.empty((h, w, 4), dtype=np.uint8)
    for y in range(h):
        head = data[pos:pos + 4]
        if 8 <= w < 32768 and len(head) == 4 and head[0] == 2 and head[1] == 2 and head[2] < 128:
            if (head[2] << 8 | head[3]) != w:
                raise ParseError(path, pos, "scanline width mismatch")
            out[y], pos = _read_rle_scanline(data, pos + 4, w, path)
        else:
            if pos + 4 * w > len(data):
                raise ParseError(path, pos, "truncated flat scanline")
            out[y] = np.frombuffer(data, np.uint8, 4 * w, pos).reshape(w, 4)
            pos += 4 * w
    return rgbe_decode(out)


# ---------------------------------------------------------------------------
# PNG

def write_png(path, img, bits=16):
    """Write an integer image, or a float image in [0, 1] scaled to ``2**bits - 1``."""
    if bits not in (8, 16):
        raise DataError(f"PNG bit depth must be 8 or 16, got {bits}")
    img = _as_image(img)
    top = 2 ** bits - 1
    dtype = np.uint8 if bits == 8 else np.uint16
    if np.issubdtype(img.dtype, np.floating):
        img = np.rint(img.astype(np.float64) * top)
    if np.any(img < 0) or np.any(img > top):
        log.warning("PNG write: clamping values outside [0, %d]", top)
        img = np.clip(img, 0, top)
    img = img.astype(dtype)
    if img.shape[2] == 3:
        img = img[..., ::-1]
    if not cv2.imwrite(os.fspath(path), np.ascontiguousarray(img)):
        raise DataError(f"{path}: PNG write failed")


def read_png(path):
    """Integer image (uint8 or uint16), H x W x C in RGB order."""
    img = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError(f"{path}: unreadable PNG")
    img = _as_image(img)
    if img.shape[2] == 3:
        img = img[..., ::-1]
    return np.ascontiguousarray(img)


def png_to_unit(img):
    top = np.iinfo(img.dtype).max
    return (img.astype(np.float64) / top).astype(np.float32)


# ---------------------------------------------------------------------------

def write_radiance(path, img):
    """Dispatch on extension: ``.pfm`` or ``.hdr``."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".pfm":
        return write_pfm(path, img)
    if ext in (".hdr", ".rgbe", ".pic"):
        return write_hdr(path, img)
    raise DataError(f"{path}: unknown radiance format {ext!r}")


def read_image(path):
    """Read any supported file as float32 H x W x C (PNG scaled to [0, 1])."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    if ext == ".pfm":
        return read_pfm(path)
    if ext in (".hdr", ".rgbe", ".pic"):
        return read_hdr(path)
    if ext == ".png":
        return png_to_unit(read_png(path))
    raise DataError(f"{path}: unknown image format {ext!r}")
