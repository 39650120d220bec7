"""Run configuration: ``key = value`` files, environment and flag overrides.

Precedence, lowest first: built-in defaults, presets (``train.preset`` then
``network.preset``), config file, ``SVHDR_*`` environment variables,
command-line flags. Environment names are the key upper-cased with ``.``
replaced by ``__`` (``train.steps`` -> ``SVHDR_TRAIN__STEPS``).

Every run writes the fully resolved values back out in the same format, so
the echo alone reproduces the run.
"""
import math
import os
from dataclasses import fields

from .errors import ContractError
from .metrics import REPORT_LUX
from .network.config import NetworkConfig
from .network.train import FULL_BATCH_SIZE, FULL_EPOCHS, FULL_ITERS_PER_EPOCH
from .sensor import BracketConfig, SensorParams

ENV_PREFIX = "SVHDR_"
RESOLVED_NAME = "resolved-config.txt"
SEED_MAX = 2 ** 64 - 1


class ConfigError(ContractError):
    pass


def _tuple_of(kind):
    def parse(text):
        text = text.strip().strip("()[]")
        return tuple(kind(v) for v in text.split(",") if v.strip())
    parse.__name__ = f"tuple[{kind.__name__}]"
    return parse


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text):
    return int(text.strip(), 0)


def _str(text):
    return text.strip()


_floats = _tuple_of(float)
_ints = _tuple_of(int)
_strs = _tuple_of(str.strip)

# key -> (default, parser)
SCHEMA = {
    "seed": (0, _int),
    "out": ("out", _str),
    "dataset": ("", _str),
    "method": ("baseline", _str),
    "checkpoint": ("", _str),
    "deterministic": (False, _bool),
    "log_level": ("info", _str),

    "lux_levels": (REPORT_LUX, _floats),
    "eval.curve_points": (10, _int),
    "eval.repeats": (1, _int),
    "eval.split": ("test", _str),

    "network.preset": ("default", _str),
    "network.levels": (4, _int),
    "network.blocks_per_level": ((4, 6, 6, 8), _ints),
    "network.heads_per_level": ((1, 2, 4, 8), _ints),
    "network.base_channels": (48, _int),
    "network.window": (8, _int),
    "network.shift": (4, _int),
    "network.mlp_ratio": (2.0, float),
    "network.refinement_blocks": (4, _int),
    "network.num_exposures": (3, _int),

    "bracket.exposure_factors": ((1.0, 8.0, 64.0), _floats),
    "bracket.read_sigmas": ((0.0292, 0.1798, 1.4384), _floats),
    "bracket.gamma": (2.2, float),
    "bracket.peak_photons": (8.0, float),

    "sensor.adc_bits": (14, _int),
    "sensor.full_well_e": (5000.0, float),
    "sensor.qe": (0.5, float),
    "sensor.dark_current": (0.0, float),
    "sensor.gain_alpha": (1.0, float),
    "sensor.read_noise_stage": ("adu", _str),
    "sensor.shot_noise": (True, _bool),

    "train.preset": ("desk", _str),
    "train.iters_per_epoch": (2000, _int),
    "train.epochs": (1, _int),
    "train.steps": (0, _int),
    "train.batch_size": (1, _int),
    "train.lr": (1e-4, float),
    "train.log_every": (50, _int),
    "train.checkpoint_every": (500, _int),
    "train.stop_mse": (0.0, float),
    "train.loss_reduction": ("norm", _str),
    "train.split": ("train", _str),
    "train.resume": ("", _str),
    "train.samples": (0, _int),
    "train.peak_photons": (64.0, float),

    "synth.crop": (128, _int),
    "synth.downsample": (2, _int),
    "synth.augment": (True, _bool),
    "synth.sources": (4, _int),
    "synth.source_size": (320, _int),
    "synth.test_fraction": (0.25, float),

    "fuse.inputs": ((), _strs),
    "fuse.output": ("fused.pfm", _str),
    "fuse.peak_photons": (0.0, float),

    "gradcheck.size": (16, _int),
    "gradcheck.probes": (3, _int),
    "gradcheck.tolerance": (1e-3, float),
}

TRAIN_PRESETS = {
    "desk": {"network.preset": "tiny", "train.iters_per_epoch": 2000, "train.epochs": 1,
             "train.batch_size": 1, "train.stop_mse": 1e-3},
    "full": {"network.preset": "default", "train.iters_per_epoch": FULL_ITERS_PER_EPOCH,
              "train.epochs": FULL_EPOCHS, "train.batch_size": FULL_BATCH_SIZE, "train.stop_mse": 0.0},
}

NETWORK_PRESETS = {
    "default": {},
    "tiny": {"network.base_channels": 8, "network.blocks_per_level": (1, 1, 1, 1)},
}

DESK_STEP_LIMIT = 5000


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_lines(text, source="<config>"):
    """``key = value`` pairs from config text; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for key in SCHEMA:
        name = ENV_PREFIX + key.upper().replace(".", "__")
        if name in environ:
            out[key] = environ[name]
    return out


def _convert(key, value):
    if not isinstance(value, str):
        return value
    default, parse = SCHEMA[key]
    try:
        return parse(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} ({exc})") from None


class RunConfig:
    """Resolved settings. Look values up with ``cfg["train.steps"]``."""

    def __init__(self, values):
        self.values = dict(values)
        self._validate()

    @classmethod
    def resolve(cls, file_text=None, environ=None, flags=None, source="<config>"):
        layers = []
        if file_text is not None:
            layers.append(parse_lines(file_text, source))
        layers.append(env_overrides(environ))
        layers.append({k: v for k, v in (flags or {}).items() if v is not None})
        explicit = {}
        for layer in layers:
            for key, value in layer.items():
                if key not in SCHEMA:
                    raise ConfigError(f"unknown key {key!r}")
                explicit[key] = _convert(key, value)

        values = {k: d for k, (d, _) in SCHEMA.items()}
        train_preset = explicit.get("train.preset", values["train.preset"])
        if train_preset not in TRAIN_PRESETS:
            raise ConfigError(f"train.preset must be one of {sorted(TRAIN_PRESETS)}, got {train_preset!r}")
        values.update(TRAIN_PRESETS[train_preset])
        net_preset = explicit.get("network.preset", values["network.preset"])
        if net_preset not in NETWORK_PRESETS:
            raise ConfigError(f"network.preset must be one of {sorted(NETWORK_PRESETS)}, got {net_preset!r}")
        values.update(NETWORK_PRESETS[net_preset])
        values.update(explicit)
        if not explicit.get("train.steps"):
            values["train.steps"] = values["train.iters_per_epoch"] * values["train.epochs"]
        return cls(values)

    @classmethod
    def from_file(cls, path, environ=None, flags=None):
        if path is None:
            return cls.resolve(None, environ, flags)
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.resolve(text, environ, flags, source=str(path))

    def __getitem__(self, key):
        return self.values[key]

    def _validate(self):
        v = self.values
        if not 0 <= v["seed"] <= SEED_MAX:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {v['seed']}")
        if v["method"] not in ("baseline", "network"):
            raise ConfigError(f"method must be 'baseline' or 'network', got {v['method']!r}")
        if v["train.loss_reduction"] not in ("norm", "mean"):
            raise ConfigError("train.loss_reduction must be 'norm' or 'mean'")
        if not v["lux_levels"] or any(not (x > 0 and math.isfinite(x)) for x in v["lux_levels"]):
            raise ConfigError(f"lux_levels must be positive, got {v['lux_levels']}")
        for key in ("train.steps", "train.batch_size", "eval.repeats", "synth.crop", "synth.downsample"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be positive, got {v[key]}")
        if v["train.preset"] == "desk" and v["train.steps"] > DESK_STEP_LIMIT:
            raise ConfigError(f"desk preset allows at most {DESK_STEP_LIMIT} steps, got {v['train.steps']}")
        # construct the typed views once so invalid combinations surface as config errors
        self.network, self.bracket, self.sensor

    def _section(self, cls, prefix, **extra):
        kwargs = {f.name: self.values[f"{prefix}.{f.name}"] for f in fields(cls) if f"{prefix}.{f.name}" in self.values}
        kwargs.update(extra)
        try:
            return cls(**kwargs)
        except ContractError as exc:
            raise ConfigError(f"[{prefix}] {exc}") from None

    @property
    def network(self):
        return self._section(NetworkConfig, "network")

    @property
    def bracket(self):
        return self._section(BracketConfig, "bracket")

    @property
    def sensor(self):
        return self._section(SensorParams, "sensor")

    def dumps(self):
        lines = ["# resolved configuration; pass back with --config to rerun"]
        lines += [f"{k} = {_format(self.values[k])}" for k in SCHEMA]
        return "\n".join(lines) + "\n"

    def write_resolved(self, directory):
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, RESOLVED_NAME)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())
        return path
