"""Experiment configuration: flat `section.key = value` text with overrides.

Every known key appears in SCHEMA with its type and default; parsing starts
from the defaults, applies the file, then applies `--set key=value`
overrides. The canonical text (sorted keys, one per line) is what gets
snapshotted into run directories and echoed into checkpoints, and its hash
identifies the configuration.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .dataio import SyntheticSpec
from .errors import ConfigError, ValidationError
from .frontend import FrontendParams
from .training import TrainingPlan


@dataclass(frozen=True)
class ReprogrammerSettings:
    kind: str = "noise"
    cnn_channels: int = 96
    cnn_relu: bool = True
    unet_widths: tuple[int, ...] = (4, 8, 16)


@dataclass(frozen=True)
class MapperSettings:
    kind: str = "fcl"
    assignment_file: str = ""


@dataclass(frozen=True)
class BackboneSettings:
    kind: str = "toy"
    frames: int = 1024
    mels: int = 128
    k_src: int = 527
    seed: int = 3
    input_gain: float = 1.0
    bias_span: float = 2.0
    mix_gain: float = 1.0
    weights: str = ""


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 8
    epochs: int = 50
    lr0: float = 5e-5
    warm_epochs: int = 10
    halve_every: int = 5


@dataclass(frozen=True)
class DataSettings:
    kind: str = "synthetic"
    root: str = ""
    pos_threshold: float = 0.5
    val_fraction: float = 0.15
    cache_dir: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    frontend: FrontendParams
    reprogrammer: ReprogrammerSettings
    mapper: MapperSettings
    backbone: BackboneSettings
    train: TrainSettings
    data: DataSettings
    synth: SyntheticSpec
    eval_threshold: float
    seed: int
    repeats: int

    def plan_for_seed(self, seed: int) -> TrainingPlan:
        t = self.train
        return TrainingPlan(
            batch_size=t.batch_size, total_epochs=t.epochs, lr0=t.lr0,
            warm_epochs=t.warm_epochs, halve_every=t.halve_every,
            seed=seed, repeats=self.repeats,
        )

    @property
    def model_dims(self) -> tuple[int, int]:
        return (self.backbone.frames, self.backbone.mels)


# key -> (attribute path, type tag). Type tags: int, float, bool, str, ints.
SCHEMA: dict[str, tuple[tuple[str, ...], str]] = {
    "frontend.n_mels": (("frontend", "n_mels"), "int"),
    "frontend.win_ms": (("frontend", "win_ms"), "float"),
    "frontend.hop_ms": (("frontend", "hop_ms"), "float"),
    "frontend.target_frames": (("frontend", "target_frames"), "int"),
    "frontend.norm_mean": (("frontend", "norm_mean"), "float"),
    "frontend.norm_std": (("frontend", "norm_std"), "float"),
    "reprogrammer.kind": (("reprogrammer", "kind"), "str"),
    "reprogrammer.cnn_channels": (("reprogrammer", "cnn_channels"), "int"),
    "reprogrammer.cnn_relu": (("reprogrammer", "cnn_relu"), "bool"),
    "reprogrammer.unet_widths": (("reprogrammer", "unet_widths"), "ints"),
    "mapper.kind": (("mapper", "kind"), "str"),
    "mapper.assignment_file": (("mapper", "assignment_file"), "str"),
    "backbone.kind": (("backbone", "kind"), "str"),
    "backbone.frames": (("backbone", "frames"), "int"),
    "backbone.mels": (("backbone", "mels"), "int"),
    "backbone.k_src": (("backbone", "k_src"), "int"),
    "backbone.seed": (("backbone", "seed"), "int"),
    "backbone.input_gain": (("backbone", "input_gain"), "float"),
    "backbone.bias_span": (("backbone", "bias_span"), "float"),
    "backbone.mix_gain": (("backbone", "mix_gain"), "float"),
    "backbone.weights": (("backbone", "weights"), "str"),
    "train.batch_size": (("train", "batch_size"), "int"),
    "train.epochs": (("train", "epochs"), "int"),
    "train.lr0": (("train", "lr0"), "float"),
    "train.warm_epochs": (("train", "warm_epochs"), "int"),
    "train.halve_every": (("train", "halve_every"), "int"),
    "eval.threshold": (("eval_threshold",), "float"),
    "run.seed": (("seed",), "int"),
    "run.repeats": (("repeats",), "int"),
    "data.kind": (("data", "kind"), "str"),
    "data.root": (("data", "root"), "str"),
    "data.pos_threshold": (("data", "pos_threshold"), "float"),
    "data.val_fraction": (("data", "val_fraction"), "float"),
    "data.cache_dir": (("data", "cache_dir"), "str"),
    "synth.n_clips": (("synth", "n_clips"), "int"),
    "synth.n_classes": (("synth", "n_classes"), "int"),
    "synth.frames": (("synth", "frames"), "int"),
    "synth.mels": (("synth", "mels"), "int"),
    "synth.blob_frames": (("synth", "blob_frames"), "int"),
    "synth.blob_bins": (("synth", "blob_bins"), "int"),
    "synth.blob_amp": (("synth", "blob_amp"), "float"),
    "synth.background_level": (("synth", "background_level"), "float"),
    "synth.background_jitter": (("synth", "background_jitter"), "float"),
    "synth.pixel_noise": (("synth", "pixel_noise"), "float"),
    "synth.pos_rate": (("synth", "pos_rate"), "float"),
    "synth.missing_rate": (("synth", "missing_rate"), "float"),
    "synth.label_noise": (("synth", "label_noise"), "float"),
    "synth.test_fraction": (("synth", "test_fraction"), "float"),
    "synth.seed": (("synth", "seed"), "int"),
}

_SECTION_TYPES = {
    "frontend": FrontendParams,
    "reprogrammer": ReprogrammerSettings,
    "mapper": MapperSettings,
    "backbone": BackboneSettings,
    "train": TrainSettings,
    "data": DataSettings,
    "synth": SyntheticSpec,
}

REPROGRAMMER_KINDS = ("none", "noise", "cnn", "unet")
MAPPER_KINDS = ("fcl", "many_to_one")
BACKBONE_KINDS = ("toy", "ast")
DATA_KINDS = ("synthetic", "openmic", "matrix_dir")


def _defaults() -> dict[str, object]:
    out = {}
    instances = {name: cls() for name, cls in _SECTION_TYPES.items()}
    top = {"eval_threshold": 0.5, "seed": 1, "repeats": 1}
    for key, (path, _) in SCHEMA.items():
        if len(path) == 1:
            out[key] = top[path[0]]
        else:
            out[key] = getattr(instances[path[0]], path[1])
    return out


def _parse_value(key: str, tag: str, raw: str):
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if tag == "ints":
            return tuple(int(tok) for tok in raw.split("/") if tok)
        return raw
    except ValueError:
        raise ConfigError(f"key '{key}': cannot parse '{raw}' as {tag}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return "/".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, values: dict | None = None) -> dict[str, object]:
    """Parse `key = value` lines (comments with #) on top of the defaults."""
    values = dict(values) if values is not None else _defaults()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{line}'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        values[key] = _parse_value(key, SCHEMA[key][1], val)
    return values


def apply_overrides(values: dict[str, object], overrides) -> dict[str, object]:
    values = dict(values)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like key=value")
        key, _, val = item.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"override names unknown key '{key}'")
        values[key] = _parse_value(key, SCHEMA[key][1], val)
    return values


def build_config(values: dict[str, object]) -> ExperimentConfig:
    section_kwargs: dict[str, dict] = {name: {} for name in _SECTION_TYPES}
    top: dict[str, object] = {}
    for key, (path, _) in SCHEMA.items():
        if len(path) == 1:
            top[path[0]] = values[key]
        else:
            section_kwargs[path[0]][path[1]] = values[key]
    try:
        sections = {name: cls(**section_kwargs[name]) for name, cls in _SECTION_TYPES.items()}
        cfg = ExperimentConfig(
            frontend=sections["frontend"], reprogrammer=sections["reprogrammer"],
            mapper=sections["mapper"], backbone=sections["backbone"],
            train=sections["train"], data=sections["data"], synth=sections["synth"],
            eval_threshold=float(top["eval_threshold"]),
            seed=int(top["seed"]), repeats=int(top["repeats"]),
        )
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    def bad(key, msg):
        raise ConfigError(f"key '{key}': {msg}")

    if cfg.reprogrammer.kind not in REPROGRAMMER_KINDS:
        bad("reprogrammer.kind", f"'{cfg.reprogrammer.kind}' not in {REPROGRAMMER_KINDS}")
    if cfg.mapper.kind not in MAPPER_KINDS:
        bad("mapper.kind", f"'{cfg.mapper.kind}' not in {MAPPER_KINDS}")
    if cfg.backbone.kind not in BACKBONE_KINDS:
        bad("backbone.kind", f"'{cfg.backbone.kind}' not in {BACKBONE_KINDS}")
    if cfg.data.kind not in DATA_KINDS:
        bad("data.kind", f"'{cfg.data.kind}' not in {DATA_KINDS}")
    frames, mels = cfg.model_dims
    if frames < 1 or mels < 1:
        bad("backbone.frames", "model dims must be positive")
    if cfg.reprogrammer.kind == "unet" and (frames % 8 or mels % 8):
        bad("backbone.frames", f"u-net reprogrammer needs dims divisible by 8, got ({frames}, {mels})")
    if cfg.reprogrammer.kind == "cnn" and cfg.reprogrammer.cnn_channels < 1:
        bad("reprogrammer.cnn_channels", "must be positive")
    if cfg.backbone.kind == "toy" and (frames % 16 or mels % 16):
        bad("backbone.frames", f"toy backbone needs dims divisible by 16, got ({frames}, {mels})")
    if cfg.backbone.kind == "ast" and not cfg.backbone.weights:
        bad("backbone.weights", "ast backbone requires a weights locator")
    if cfg.mapper.kind == "many_to_one" and not cfg.mapper.assignment_file:
        bad("mapper.assignment_file", "many_to_one mapping requires an assignment file")
    if not 0.0 < cfg.eval_threshold < 1.0:
        bad("eval.threshold", f"must be in (0, 1), got {cfg.eval_threshold}")
    if not 0.0 < cfg.data.val_fraction < 1.0:
        bad("data.val_fraction", f"must be in (0, 1), got {cfg.data.val_fraction}")
    if cfg.repeats < 1:
        bad("run.repeats", "must be at least 1")
    if cfg.data.kind == "synthetic":
        if (cfg.synth.frames, cfg.synth.mels) != (frames, mels):
            bad("synth.frames",
                f"synthetic dims ({cfg.synth.frames}, {cfg.synth.mels}) must match "
                f"backbone dims ({frames}, {mels})")
    if cfg.data.kind == "openmic":
        if (cfg.frontend.target_frames, cfg.frontend.n_mels) != (frames, mels):
            bad("frontend.target_frames",
                "frontend output dims must match backbone dims")


def config_values(cfg: ExperimentConfig) -> dict[str, object]:
    out = {}
    for key, (path, _) in SCHEMA.items():
        obj = cfg
        for attr in path:
            obj = getattr(obj, attr)
        out[key] = obj
    return out


def canonical_text(cfg: ExperimentConfig) -> str:
    values = config_values(cfg)
    return "".join(f"{key} = {_format_value(values[key])}\n" for key in sorted(values))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()[:16]


def load_config(path=None, overrides=None, seed=None, repeats=None) -> ExperimentConfig:
    values = _defaults()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values = parse_config_text(path.read_text(), values)
    values = apply_overrides(values, overrides)
    if seed is not None:
        values["run.seed"] = int(seed)
    if repeats is not None:
        values["run.repeats"] = int(repeats)
    return build_config(values)


def default_config(**overrides) -> ExperimentConfig:
    """Config from defaults plus keyword overrides given as dotted keys."""
    values = _defaults()
    for key, val in overrides.items():
        dotted = key.replace("__", ".")
        if dotted not in SCHEMA:
            raise ConfigError(f"unknown key '{dotted}'")
        values[dotted] = val
    return build_config(values)


def schema_text() -> str:
    """Human-readable schema: key, type, default per line."""
    defaults = _defaults()
    lines = ["# Configuration keys: key  type  default"]
    for key in sorted(SCHEMA):
        lines.append(f"{key}  {SCHEMA[key][1]}  {_format_value(defaults[key])}")
    return "\n".join(lines) + "\n"
