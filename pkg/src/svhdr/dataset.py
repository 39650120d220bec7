"""Dataset manifests and bracket synthesis from radiance maps.

A manifest is JSON::

    {"version": 1, "samples": [
        {"id": "...", "radiance": "a.pfm", "ldr": ["0.png", "1.png", "2.png"] | null,
         "exposure_factors": [1, 8, 64], "split": "train" | "test", "meta": {...}}]}

Paths are relative to the manifest's directory.
"""
import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import io
from .errors import DataError
from .scenes import synthetic_scene
from .sensor import derive_seed, normalized_ground_truth, photons_to_lux, sample_peak_photons, simulate_bracket

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "test")


@dataclass
class Sample:
    id: str
    radiance: str
    ldr: list = None
    exposure_factors: tuple = (1.0, 8.0, 64.0)
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def load_radiance(self):
        return io.read_image(self.radiance)

    def load_bracket(self):
        if not self.ldr:
            raise DataError(f"sample {self.id} has no LDR bracket")
        return [io.read_image(p) for p in self.ldr]


@dataclass
class DatasetManifest:
    samples: list
    root: str = "."

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from None
        if doc.get("version") != MANIFEST_VERSION:
            raise DataError(f"{path}: unsupported manifest version {doc.get('version')!r}")
        root = os.path.dirname(os.path.abspath(path))
        samples = []
        for i, entry in enumerate(doc.get("samples", [])):
            try:
                s = Sample(
                    id=str(entry.get("id", i)),
                    radiance=os.path.join(root, entry["radiance"]),
                    ldr=[os.path.join(root, p) for p in entry["ldr"]] if entry.get("ldr") else None,
                    exposure_factors=tuple(float(t) for t in entry.get("exposure_factors", (1, 8, 64))),
                    split=entry.get("split", "train"),
                    meta=entry.get("meta", {}),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: sample {i} is malformed ({exc})") from None
            _check_sample(s, path)
            samples.append(s)
        return cls(samples, root)

    def save(self, path):
        root = os.path.dirname(os.path.abspath(path))
        rel = lambda p: os.path.relpath(p, root)  # noqa: E731
        doc = {"version": MANIFEST_VERSION, "samples": [
            {"id": s.id, "radiance": rel(s.radiance), "ldr": [rel(p) for p in s.ldr] if s.ldr else None,
             "exposure_factors": list(s.exposure_factors), "split": s.split, "meta": s.meta}
            for s in self.samples]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _check_sample(s, path):
    missing = [p for p in [s.radiance] + list(s.ldr or []) if not os.path.exists(p)]
    if missing:
        raise DataError(f"{path}: sample {s.id} references missing files: {missing}")
    t = s.exposure_factors
    if any(b <= a for a, b in zip(t, t[1:])):
        raise DataError(f"{path}: sample {s.id} exposure factors not ascending: {t}")
    if s.ldr and len(s.ldr) != len(t):
        raise DataError(f"{path}: sample {s.id} has {len(s.ldr)} LDR images for {len(t)} exposures")
    if s.split not in SPLITS:
        raise DataError(f"{path}: sample {s.id} has unknown split {s.split!r}")


# ---------------------------------------------------------------------------
# augmentation and cropping

def augmentations(img):
    """The 8 rotations/flips of an H x W x C image, identity first."""
    out = []
    for flip in (False, True):
        base = img[:, ::-1] if flip else img
        for k in range(4):
            out.append(np.ascontiguousarray(np.rot90(base, k, axes=(0, 1))))
    return out


def box_downsample(img, factor=2):
    h, w = img.shape[0] // factor * factor, img.shape[1] // factor * factor
    img = img[:h, :w]
    return img.reshape(h // factor, factor, w // factor, factor, -1).mean(axis=(1, 3))


def center_crop_origin(rng, size, crop):
    """Top-left offset along one axis so the crop's centre lies in the middle half."""
    if size < crop:
        raise DataError(f"image side {size} smaller than crop {crop}")
    lo = max(0, int(np.ceil(size / 4 - crop / 2)))
    hi = min(size - crop, int(np.floor(3 * size / 4 - crop / 2)))
    if hi < lo:
        lo = hi = (size - crop) // 2
    return int(rng.integers(lo, hi + 1))


def random_center_crop(img, rng, crop=128):
    y0 = center_crop_origin(rng, img.shape[0], crop)
    x0 = center_crop_origin(rng, img.shape[1], crop)
    return img[y0:y0 + crop, x0:x0 + crop]


def _rng(seed, *stream):
    key = derive_seed(seed, *stream)
    return np.random.default_rng([key & 0xFFFFFFFF, key >> 32])


# ---------------------------------------------------------------------------

def synthetic_sources(out_dir, count, seed, size=320, test_fraction=0.25):
    """Write procedural radiance maps plus a manifest; stand-in when no captured data is at hand."""
    os.makedirs(out_dir, exist_ok=True)
    n_test = min(count - 1, max(1, int(round(count * test_fraction)))) if test_fraction > 0 and count > 1 else 0
    samples = []
    for i in range(count):
        path = os.path.join(out_dir, f"source_{i:03d}.pfm")
        io.write_pfm(path, synthetic_scene(derive_seed(seed, 7, i) & 0x7FFFFFFF, size))
        samples.append(Sample(f"source_{i:03d}", path, split="test" if i >= count - n_test else "train"))
    manifest = DatasetManifest(samples, out_dir)
    manifest.save(os.path.join(out_dir, "sources.json"))
    return manifest


def synthesize(manifest, out_dir, cfg, base, seed, crop=128, downsample=2, augment=True):
    """Turn radiance maps into (bracket, ground truth) samples on disk.

    Returns ``(manifest, failures)``. Sources that cannot be read are skipped
    with a warning.
    """
    os.makedirs(out_dir, exist_ok=True)
    samples, failures = [], 0
    for si, src in enumerate(manifest.samples):
        try:
            flux = np.asarray(src.load_radiance(), dtype=np.float64)
            if flux.shape[2] == 1:
                flux = np.repeat(flux, 3, axis=2)
            if not np.all(np.isfinite(flux)) or np.any(flux < 0) or flux.max() <= 0:
                raise DataError(f"{src.radiance}: radiance must be finite, nonnegative and not all zero")
        except DataError as exc:
            log.warning("skipping source %s: %s", src.id, exc)
            failures += 1
            continue
        variants = augmentations(flux) if augment else [flux]
        for vi, img in enumerate(variants):
            rng = _rng(seed, si, vi)
            img = box_downsample(img, downsample) if downsample > 1 else img
            try:
                patch = random_center_crop(img, rng, crop)
            except DataError as exc:
                log.warning("skipping source %s: %s", src.id, exc)
                failures += 1
                break
            if patch.max() <= 0:
                log.warning("skipping %s variant %d: black crop", src.id, vi)
                continue
            photons = float(sample_peak_photons(rng))
            sample_seed = derive_seed(seed, si, vi, 1)
            bracket = simulate_bracket(patch, replace(cfg, peak_photons=photons), base, sample_seed)
            sid = f"{src.id}_v{vi}"
            d = os.path.join(out_dir, sid)
            os.makedirs(d, exist_ok=True)
            gt = os.path.join(d, "gt.pfm")
            io.write_pfm(gt, normalized_ground_truth(patch))
            ldr = []
            for i, b in enumerate(bracket):
                p = os.path.join(d, f"ldr_{i}.png")
                io.write_png(p, b, bits=16)
                ldr.append(p)
            meta = {"seed": sample_seed, "peak_photons": photons, "lux": photons_to_lux(photons),
                    "source": src.id, "variant": vi}
            with open(os.path.join(d, "meta.json"), "w", encoding="utf-8") as fh:
                json.dump(meta, fh, indent=1, sort_keys=True)
                fh.write("\n")
            samples.append(Sample(sid, gt, ldr, cfg.exposure_factors, src.split, meta))
    out = DatasetManifest(samples, out_dir)
    out.save(os.path.join(out_dir, "manifest.json"))
    return out, failures
