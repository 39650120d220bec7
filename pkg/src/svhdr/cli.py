"""``svhdr`` command line: synthesize, fuse, eval, train, grad-check.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""
import argparse
import contextlib
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .baseline import fuse_ml
from .config import ConfigError, RunConfig
from .dataset import DatasetManifest, synthesize, synthetic_sources
from .errors import ContractError, DataError, NumericalError
from .metrics import curve_csv, log_spaced_lux, psnr_curve
from .network.checkpoint import load_checkpoint, save_checkpoint
from .network.diagnostics import network_grad_check
from .network.model import build_network, forward
from .network.train import OptimizerState, train
from .numerics.gradcheck import GradCheckError
from .numerics.tensor import no_grad
from .scenes import scene_set, synthetic_scene
from .sensor import derive_seed, simulate_bracket
from .transforms import network_inputs, tonemap

log = logging.getLogger("svhdr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
VERBS = ("synthesize", "fuse", "eval", "train", "grad-check")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="svhdr", description="Exposure-bracket HDR fusion toolkit.")
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("inputs", nargs="*", help="LDR images for 'fuse' (shortest exposure first)")
    parser.add_argument("--config", metavar="PATH", help="key = value config file")
    parser.add_argument("--seed", type=int, metavar="N")
    parser.add_argument("--out", metavar="DIR")
    parser.add_argument("--method", choices=("baseline", "network"))
    parser.add_argument("--checkpoint", metavar="PATH")
    parser.add_argument("--dataset", metavar="PATH", help="dataset manifest (JSON)")
    parser.add_argument("--deterministic", action="store_true", default=None,
                        help="single-threaded BLAS for bit-reproducible runs")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    return parser


def _flags(args):
    flags = {"seed": args.seed, "out": args.out, "method": args.method, "checkpoint": args.checkpoint,
             "dataset": args.dataset, "deterministic": args.deterministic}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key.strip()] = value.strip()
    if args.inputs:
        flags["fuse.inputs"] = ", ".join(args.inputs)
    return flags


def _setup_logging(cfg):
    root = logging.getLogger("svhdr")
    root.setLevel(getattr(logging, cfg["log_level"].upper(), logging.INFO))
    root.handlers.clear()
    stderr = logging.StreamHandler(sys.stderr)
    stderr.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root.addHandler(stderr)
    os.makedirs(cfg["out"], exist_ok=True)
    # timestamps live only in the log file so other artifacts stay reproducible
    fileh = logging.FileHandler(os.path.join(cfg["out"], "run.log"), mode="a", encoding="utf-8")
    fileh.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    root.addHandler(fileh)
    return [stderr, fileh]


@contextlib.contextmanager
def _threads(deterministic):
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


# ---------------------------------------------------------------------------
# fusers

def baseline_fuser(bracket, cfg, base):
    return fuse_ml(bracket, cfg, base)


def network_fuser(P, ncfg):
    def fuse(bracket, cfg, base):
        with no_grad():
            out = forward(network_inputs(bracket, cfg.exposure_factors, cfg.gamma), P, ncfg)
        return out.data.astype(np.float32)
    return fuse


def _load_model(cfg):
    path = cfg["checkpoint"]
    if not path:
        raise ConfigError("method=network needs --checkpoint PATH")
    if not os.path.exists(path):
        raise DataError(f"checkpoint {path} does not exist")
    P, ncfg, _ = load_checkpoint(path)
    return P, ncfg


def _fuser(cfg):
    if cfg["method"] == "baseline":
        return baseline_fuser
    return network_fuser(*_load_model(cfg))


def _manifest(cfg):
    return DatasetManifest.load(cfg["dataset"]) if cfg["dataset"] else None


# ---------------------------------------------------------------------------
# verbs

def cmd_synthesize(cfg):
    out = cfg["out"]
    manifest = _manifest(cfg)
    if manifest is None:
        log.info("no dataset given; writing %d procedural sources", cfg["synth.sources"])
        manifest = synthetic_sources(os.path.join(out, "sources"), cfg["synth.sources"], cfg["seed"],
                                     cfg["synth.source_size"], cfg["synth.test_fraction"])
    result, failures = synthesize(manifest, os.path.join(out, "data"), cfg.bracket, cfg.sensor, cfg["seed"],
                                  cfg["synth.crop"], cfg["synth.downsample"], cfg["synth.augment"])
    log.info("wrote %d samples to %s", len(result.samples), os.path.join(out, "data", "manifest.json"))
    if not result.samples:
        raise DataError(f"all {failures} sources failed")
    return EXIT_DATA if failures else EXIT_OK


def preview(hdr, gamma=2.2):
    """8-bit display image: gamma-encoded tonemap of the clamped HDR."""
    v = tonemap(np.clip(np.asarray(hdr, dtype=np.float64), 0.0, None))
    return np.rint(np.clip(v, 0.0, 1.0) ** (1.0 / gamma) * 255.0).astype(np.uint8)


def cmd_fuse(cfg):
    paths = cfg["fuse.inputs"]
    bcfg = cfg.bracket
    if len(paths) != len(bcfg.exposure_factors):
        raise ConfigError(f"fuse needs {len(bcfg.exposure_factors)} LDR inputs, got {len(paths)}")
    bracket = [io.read_image(p) for p in paths]
    shapes = {b.shape for b in bracket}
    if len(shapes) != 1:
        raise DataError(f"input images differ in size: {sorted(shapes)}")
    if cfg["fuse.peak_photons"] > 0:
        bcfg = replace(bcfg, peak_photons=cfg["fuse.peak_photons"])
    hdr = _fuser(cfg)(bracket, bcfg, cfg.sensor)
    if not np.all(np.isfinite(hdr)):
        raise NumericalError("fused image contains non-finite values")
    out = cfg["out"]
    target = os.path.join(out, cfg["fuse.output"])
    io.write_radiance(target, hdr)
    io.write_png(os.path.join(out, "preview.png"), preview(hdr, bcfg.gamma), bits=8)
    log.info("wrote %s and preview.png", target)
    return EXIT_OK


def _eval_images(cfg):
    manifest = _manifest(cfg)
    if manifest is None:
        return list(scene_set(derive_seed(cfg["seed"], 11) & 0x7FFFFFFF, 4, 64))
    samples = manifest.split(cfg["eval.split"])
    if not samples:
        raise DataError(f"no '{cfg['eval.split']}' samples in {cfg['dataset']}")
    return [s.load_radiance() for s in samples]


def write_svg(path, series):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "svhdr"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, rows in series:
        rows = sorted(rows, key=lambda r: r["lux"])
        ax.plot([r["lux"] for r in rows], [r["psnr_mu"] for r in rows], marker="o", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("illuminance (lux)")
    ax.set_ylabel("PSNR-mu (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_eval(cfg):
    images = _eval_images(cfg)
    fuser = _fuser(cfg)
    kw = dict(seed=cfg["seed"], repeats=cfg["eval.repeats"], cfg=cfg.bracket, base=cfg.sensor)
    out = cfg["out"]
    rows = psnr_curve(fuser, images, cfg["lux_levels"], **kw)
    with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(curve_csv(rows))
    series = [("levels", rows)]
    if cfg["eval.curve_points"] > 0:
        curve = psnr_curve(fuser, images, log_spaced_lux(cfg["eval.curve_points"]), **kw)
        with open(os.path.join(out, "curve.csv"), "w", encoding="utf-8") as fh:
            fh.write(curve_csv(curve))
        series.append(("sweep", curve))
    write_svg(os.path.join(out, "curve.svg"), series)
    for r in rows:
        log.info("%.4g lux: PSNR %.2f  PSNR-mu %.2f  MS-SSIM %.4f", r["lux"], r["psnr"], r["psnr_mu"], r["ms_ssim"])
    return EXIT_OK


def training_samples(cfg):
    """``(inputs, target)`` pairs from the manifest, or one procedural scene."""
    bcfg = cfg.bracket
    manifest = _manifest(cfg)
    if manifest is None:
        flux = synthetic_scene(derive_seed(cfg["seed"], 13) & 0x7FFFFFFF, 64)
        bcfg = replace(bcfg, peak_photons=cfg["train.peak_photons"])
        bracket = simulate_bracket(flux, bcfg, cfg.sensor, derive_seed(cfg["seed"], 14))
        return [(np.stack(network_inputs(bracket, bcfg.exposure_factors, bcfg.gamma)), flux / flux.max())]
    samples = [s for s in manifest.split(cfg["train.split"]) if s.ldr]
    if cfg["train.samples"]:
        samples = samples[:cfg["train.samples"]]
    if not samples:
        raise DataError(f"no '{cfg['train.split']}' samples with LDR brackets in {cfg['dataset']}")
    out = []
    for s in samples:
        bracket = s.load_bracket()
        out.append((np.stack(network_inputs(bracket, s.exposure_factors, bcfg.gamma)), s.load_radiance()))
    return out


def cmd_train(cfg):
    out = cfg["out"]
    ckdir = os.path.join(out, "checkpoints")
    os.makedirs(ckdir, exist_ok=True)
    samples = training_samples(cfg)
    steps = cfg["train.steps"]
    opt = OptimizerState(lr=cfg["train.lr"], total_steps=steps)
    resume = cfg["train.resume"] or (cfg["checkpoint"] if cfg["method"] == "network" else "")
    if resume:
        if not os.path.exists(resume):
            raise DataError(f"checkpoint {resume} does not exist")
        P, ncfg, header = load_checkpoint(resume)
        if ncfg != cfg.network:
            log.warning("checkpoint network config differs from the run config; using the checkpoint's")
        log.info("resuming from %s at step %d", resume, P.step)
    else:
        ncfg = cfg.network
        P = build_network(ncfg, cfg["seed"])
    log.info("training %d parameters for %d steps", P.count(), steps)

    n_pix = samples[0][1].size
    mean = cfg["train.loss_reduction"] == "mean"
    to_mse = (lambda v: v * v) if mean else (lambda v: v * v / n_pix)
    loss_path = os.path.join(out, "loss.csv")
    fh = open(loss_path, "a" if resume else "w", newline="", encoding="utf-8")
    writer = csv.writer(fh, lineterminator="\n")
    if not resume or fh.tell() == 0:
        writer.writerow(["step", "loss", "tonemapped_mse", "lr"])

    def on_log(step, value):
        writer.writerow([step, f"{value:.9g}", f"{to_mse(value):.6g}", f"{opt.lr_at(step):.6g}"])
        fh.flush()

    def on_checkpoint(P):
        extra = {"seed": cfg["seed"], "batch_size": cfg["train.batch_size"]}
        save_checkpoint(os.path.join(ckdir, f"step_{P.step:06d}.ckpt"), P, ncfg, opt, extra)
        save_checkpoint(os.path.join(out, "model.ckpt"), P, ncfg, opt, extra)

    stop_mse = cfg["train.stop_mse"]
    stop_when = (lambda step, value: to_mse(value) < stop_mse) if stop_mse > 0 else None
    try:
        trace = train(samples, P, ncfg, opt, steps=steps, batch_size=cfg["train.batch_size"],
                      seed=cfg["seed"], log_every=cfg["train.log_every"], on_log=on_log,
                      stop_when=stop_when, on_checkpoint=on_checkpoint,
                      checkpoint_every=cfg["train.checkpoint_every"], reduction=cfg["train.loss_reduction"])
    except NumericalError:
        save_checkpoint(os.path.join(out, "last-good.ckpt"), P, ncfg, opt)
        raise
    finally:
        fh.close()
    if trace:
        log.info("finished at step %d, loss %.6g (tonemapped MSE %.3g)", P.step, trace[-1], to_mse(trace[-1]))
    return EXIT_OK


def cmd_grad_check(cfg):
    tol = cfg["gradcheck.tolerance"]
    err = network_grad_check(cfg.network, cfg["gradcheck.size"], cfg["gradcheck.probes"], seed=cfg["seed"] & 0xFFFF)
    print(f"network forward+loss max relative error {err:.3e} (tolerance {tol:g})")
    if not err < tol:
        raise NumericalError(f"gradient check failed: {err:.3e} >= {tol:g}")
    return EXIT_OK


COMMANDS = {"synthesize": cmd_synthesize, "fuse": cmd_fuse, "eval": cmd_eval,
            "train": cmd_train, "grad-check": cmd_grad_check}


def main(argv=None):
    handlers = []
    try:
        args = build_parser().parse_intermixed_args(argv)
        cfg = RunConfig.from_file(args.config, flags=_flags(args))
        handlers = _setup_logging(cfg)
        cfg.write_resolved(cfg["out"])
        with _threads(cfg["deterministic"]):
            return COMMANDS[args.verb](cfg)
    except (UsageError, ConfigError) as exc:
        print(f"svhdr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"svhdr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, GradCheckError) as exc:
        print(f"svhdr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as exc:
        print(f"svhdr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        for h in handlers:
            h.close()
            logging.getLogger("svhdr").removeHandler(h)


if __name__ == "__main__":
    sys.exit(main())
