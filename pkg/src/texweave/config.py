"""Run configuration: hyperparameters, ablation toggles, INI persistence.

A RunConfig bundles the training hyperparameters (TrainConfig) with
dataset paths and command options. Configs round-trip through a plain
INI file with a strict schema: unknown sections or keys are rejected so
a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class LossWeights:
    """Objective weights and the invisible-pattern constants.

    lambda_cyc and lambda_sp weight the cycle and scaled-pattern terms of
    the total generator objective; alpha and beta define the affine map
    that turns a normal image into its near-black target pattern.
    """

    lambda_cyc: float = 10.0
    lambda_sp: float = 0.4
    alpha: float = 0.005
    beta: float = 0.995

    def validate(self) -> None:
        for name in ("lambda_cyc", "lambda_sp", "alpha", "beta"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not value >= 0:
                raise ConfigError(f"{name} must be a non-negative number, got {value!r}")
        if self.alpha >= 1.0:
            raise ConfigError(f"alpha must be < 1, got {self.alpha}")
        if self.beta >= 1.0:
            raise ConfigError(f"beta must be < 1, got {self.beta}")


@dataclass(frozen=True)
class OpacityMode:
    """How defect opacity is drawn when the training pool is regenerated.

    kind "fixed" uses `value` for every sample; "random" draws uniformly
    from [lo, hi] for the whole run; "pos" walks a window from high to
    low opacity across regenerations (progressive opacity).
    """

    kind: str = "pos"
    value: float = 0.5
    lo: float = 0.1
    hi: float = 1.0

    KINDS = ("fixed", "random", "pos")

    @classmethod
    def fixed(cls, value: float) -> "OpacityMode":
        return cls(kind="fixed", value=value)

    @classmethod
    def random(cls, lo: float = 0.1, hi: float = 1.0) -> "OpacityMode":
        return cls(kind="random", lo=lo, hi=hi)

    @classmethod
    def pos(cls) -> "OpacityMode":
        return cls(kind="pos")

    @classmethod
    def parse(cls, text: str) -> "OpacityMode":
        """Parse "pos", "fixed:V", or "random:LO,HI"."""
        text = text.strip()
        if text.lower() == "pos":
            return cls.pos()
        head, sep, tail = text.partition(":")
        head = head.lower()
        try:
            if head == "fixed" and sep:
                return cls.fixed(float(tail))
            if head == "random" and sep:
                lo_s, hi_s = tail.split(",")
                return cls.random(float(lo_s), float(hi_s))
        except ValueError as exc:
            raise ConfigError(f"malformed opacity mode {text!r}: {exc}") from None
        raise ConfigError(
            f"unknown opacity mode {text!r}; expected 'pos', 'fixed:V', or 'random:LO,HI'"
        )

    def describe(self) -> str:
        """Inverse of parse."""
        if self.kind == "fixed":
            return f"fixed:{self.value:g}"
        if self.kind == "random":
            return f"random:{self.lo:g},{self.hi:g}"
        return "pos"

    def validate(self) -> None:
        if self.kind not in self.KINDS:
            raise ConfigError(f"opacity kind must be one of {self.KINDS}, got {self.kind!r}")
        if self.kind == "fixed" and not 0.0 < self.value <= 1.0:
            raise ConfigError(f"fixed opacity must be in (0, 1], got {self.value}")
        if self.kind == "random" and not 0.0 < self.lo <= self.hi <= 1.0:
            raise ConfigError(f"random opacity needs 0 < lo <= hi <= 1, got ({self.lo}, {self.hi})")


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run besides the dataset itself."""

    epochs: int = 1000
    batch_size: int = 1
    learning_rate: float = 2e-4
    adam_betas: tuple[float, float] = (0.5, 0.999)
    regen_interval_epochs: int = 50
    synth_count: int = 300
    resolution: int = 256
    weights: LossWeights = field(default_factory=LossWeights)
    enable_sp: bool = True
    enable_cycle: bool = True
    enable_dynamic_mask: bool = True
    opacity_mode: OpacityMode = field(default_factory=OpacityMode.pos)
    seed: int = 0
    gen_base_channels: int = 64
    gen_residual_blocks: int = 9
    disc_base_channels: int = 64
    disc_layers: int = 4

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size != 1:
            raise ConfigError(f"only batch_size 1 is supported, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.regen_interval_epochs < 1:
            raise ConfigError(
                f"regen_interval_epochs must be >= 1, got {self.regen_interval_epochs}"
            )
        if self.synth_count < 1:
            raise ConfigError(f"synth_count must be >= 1, got {self.synth_count}")
        if self.resolution < 8 or self.resolution % 4 != 0:
            # the generator downsamples twice, so the side must divide by 4
            raise ConfigError(f"resolution must be >= 8 and divisible by 4, got {self.resolution}")
        if self.enable_dynamic_mask and not self.enable_cycle:
            raise ConfigError("enable_dynamic_mask requires enable_cycle")
        if self.gen_base_channels < 1 or self.gen_residual_blocks < 0:
            raise ConfigError("generator spec fields must be positive")
        if self.disc_base_channels < 1 or self.disc_layers < 2:
            raise ConfigError("discriminator needs base_channels >= 1 and layers >= 2")
        self.weights.validate()
        self.opacity_mode.validate()

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Smoke-scale preset: 64 px, thin networks, 50-sample pool.

        Defaults give 40 epochs x 50 steps = 2000 steps with a pool
        regeneration every 10 epochs (4 regenerations).
        """
        base = dict(
            epochs=40,
            regen_interval_epochs=10,
            synth_count=50,
            resolution=64,
            gen_base_channels=16,
            gen_residual_blocks=4,
            disc_base_channels=16,
            disc_layers=4,
        )
        base.update(overrides)
        return cls(**base)

    def regen_count(self) -> int:
        """Number of pool regenerations over the whole run."""
        return max(1, self.epochs // self.regen_interval_epochs)

    def fingerprint(self) -> str:
        """Hash of the architecture-determining fields.

        Checkpoints refuse to load into a config whose fingerprint
        differs, since the parameter shapes would not line up.
        """
        arch = (
            self.resolution,
            self.gen_base_channels,
            self.gen_residual_blocks,
            self.disc_base_channels,
            self.disc_layers,
        )
        return hashlib.sha256(repr(arch).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RunConfig:
    """TrainConfig plus dataset paths and command options."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data_root: Path | None = None
    class_name: str = ""
    anomaly_dir: Path | None = None
    out_dir: Path = Path("runs/out")
    eval_setting: str = "none"
    eval_seed: int = 0

    EVAL_SETTINGS = ("none", "general", "hard")

    def validate(self) -> None:
        self.train.validate()
        if self.eval_setting not in self.EVAL_SETTINGS:
            raise ConfigError(
                f"eval setting must be one of {self.EVAL_SETTINGS}, got {self.eval_setting!r}"
            )


# INI schema: section -> key -> (getter from RunConfig, setter into kwargs).
# Paths are stored as strings; empty string encodes None.

_TRAIN_KEYS = {
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "regen_interval_epochs": int,
    "synth_count": int,
    "resolution": int,
    "enable_sp": bool,
    "enable_cycle": bool,
    "enable_dynamic_mask": bool,
    "seed": int,
    "gen_base_channels": int,
    "gen_residual_blocks": int,
    "disc_base_channels": int,
    "disc_layers": int,
}
_WEIGHT_KEYS = ("lambda_cyc", "lambda_sp", "alpha", "beta")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def serialize_config(cfg: RunConfig) -> str:
    """Render a RunConfig as INI text."""
    parser = configparser.ConfigParser()
    parser["train"] = {}
    section = parser["train"]
    for key in _TRAIN_KEYS:
        section[key] = str(getattr(cfg.train, key))
    section["adam_betas"] = f"{cfg.train.adam_betas[0]:g},{cfg.train.adam_betas[1]:g}"
    section["opacity_mode"] = cfg.train.opacity_mode.describe()
    for key in _WEIGHT_KEYS:
        section[key] = repr(getattr(cfg.train.weights, key))
    parser["data"] = {
        "data_root": "" if cfg.data_root is None else str(cfg.data_root),
        "class_name": cfg.class_name,
        "anomaly_dir": "" if cfg.anomaly_dir is None else str(cfg.anomaly_dir),
        "out_dir": str(cfg.out_dir),
    }
    parser["eval"] = {
        "setting": cfg.eval_setting,
        "seed": str(cfg.eval_seed),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a validated RunConfig.

    Unknown sections or keys raise ConfigError rather than being ignored.
    """
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    known_sections = {"train", "data", "eval"}
    unknown = set(parser.sections()) - known_sections
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")

    train_kwargs: dict = {}
    weight_kwargs: dict = {}
    if parser.has_section("train"):
        for key, raw in parser.items("train"):
            if key in _TRAIN_KEYS:
                caster = _TRAIN_KEYS[key]
                try:
                    train_kwargs[key] = _parse_bool(raw) if caster is bool else caster(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for train.{key}: {exc}") from None
            elif key == "adam_betas":
                try:
                    b1, b2 = (float(part) for part in raw.split(","))
                except ValueError:
                    raise ConfigError(f"bad value for train.adam_betas: {raw!r}") from None
                train_kwargs["adam_betas"] = (b1, b2)
            elif key == "opacity_mode":
                train_kwargs["opacity_mode"] = OpacityMode.parse(raw)
            elif key in _WEIGHT_KEYS:
                try:
                    weight_kwargs[key] = float(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for train.{key}: {exc}") from None
            else:
                raise ConfigError(f"unknown config key: train.{key}")
    if weight_kwargs:
        train_kwargs["weights"] = LossWeights(**weight_kwargs)

    run_kwargs: dict = {}
    if parser.has_section("data"):
        for key, raw in parser.items("data"):
            if key == "data_root":
                run_kwargs["data_root"] = Path(raw) if raw else None
            elif key == "class_name":
                run_kwargs["class_name"] = raw
            elif key == "anomaly_dir":
                run_kwargs["anomaly_dir"] = Path(raw) if raw else None
            elif key == "out_dir":
                run_kwargs["out_dir"] = Path(raw)
            else:
                raise ConfigError(f"unknown config key: data.{key}")
    if parser.has_section("eval"):
        for key, raw in parser.items("eval"):
            if key == "setting":
                run_kwargs["eval_setting"] = raw
            elif key == "seed":
                try:
                    run_kwargs["eval_seed"] = int(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for eval.seed: {exc}") from None
            else:
                raise ConfigError(f"unknown config key: eval.{key}")

    cfg = RunConfig(train=TrainConfig(**train_kwargs), **run_kwargs)
    cfg.validate()
    return cfg


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def save_config(cfg: RunConfig, path: Path | str) -> None:
    Path(path).write_text(serialize_config(cfg))


def with_updates(cfg: RunConfig, **updates) -> RunConfig:
    """Functional update helper for nested train fields and run fields."""
    train_updates = {k: v for k, v in updates.items() if k in {f.name for f in fields(TrainConfig)}}
    run_updates = {k: v for k, v in updates.items() if k not in train_updates}
    train = replace(cfg.train, **train_updates) if train_updates else cfg.train
    return replace(cfg, train=train, **run_updates)
