"""Experiment configuration: one JSON document holding every hyperparameter."""

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

from .data.phantom import PhantomSpec
from .exceptions import ConfigError
from .pipeline import FinalTrainConfig
from .registration import RegNetConfig
from .segmentation import SegLossConfig, UNetConfig
from .semi import SemiTrainConfig

PACKAGED = ("default", "desk")


@dataclass
class DataConfig:
    """Where volumes come from and the in-plane working resolution.

    ``source`` is ``"phantom"`` (synthesised from ``phantom``), ``"dataset"``
    (a directory with a manifest) or ``"promise12"`` (CaseXX.mhd files).
    ``evaluate_at`` is ``"native"`` (predictions resampled back to the stored
    resolution) or ``"working"``.
    """

    source: str = "phantom"
    path: str = ""
    phantom: dict = field(default_factory=lambda: _plain(PhantomSpec().to_dict()))
    input_size: list = field(default_factory=lambda: [128, 128])
    evaluate_at: str = "native"


@dataclass
class OptimConfig:
    batch_size: int = 4
    base_lr: float = 1e-4
    lr_step: int = 30
    lr_decay: float = 0.5


@dataclass
class FusionConfig:
    drop_disagreements: bool = False


@dataclass
class SemiSection:
    warmup_epochs: int = 50
    total_epochs: int = 100
    unlabeled_weight: float = 1.0
    ramp: bool = False


@dataclass
class RegSection:
    depth: int = 4
    base_channels: int = 16
    smooth_weight: float = 1.0
    similarity: str = "mse"
    epochs: int = 100


@dataclass
class FinalSection:
    epochs: int = 100
    warm_start: bool = False
    augment: bool = True
    # overrides optim.base_lr for the final and FS-LCS networks when set
    base_lr: Optional[float] = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    folds: int = 5
    output_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    loss: SegLossConfig = field(default_factory=SegLossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    semi: SemiSection = field(default_factory=SemiSection)
    reg: RegSection = field(default_factory=RegSection)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    final: FinalSection = field(default_factory=FinalSection)

    # -- derived stage configs ------------------------------------------------
    def phantom_spec(self):
        spec = PhantomSpec(**self.data.phantom)
        spec.validate()
        return spec

    def semi_config(self):
        return SemiTrainConfig(
            self.semi.warmup_epochs,
            self.semi.total_epochs,
            self.optim.batch_size,
            self.semi.unlabeled_weight,
            self.semi.ramp,
            self.seed,
        )

    def reg_config(self):
        return RegNetConfig(
            self.reg.depth,
            self.reg.base_channels,
            self.reg.smooth_weight,
            self.reg.similarity,
            self.reg.epochs,
            self.optim.batch_size,
            self.optim.base_lr,
            self.optim.lr_step,
            self.optim.lr_decay,
            self.seed + 1,
        )

    def final_config(self, seed_offset=2):
        return FinalTrainConfig(
            self.final.epochs,
            self.optim.batch_size,
            self.optim.base_lr if self.final.base_lr is None else self.final.base_lr,
            self.optim.lr_step,
            self.optim.lr_decay,
            self.seed + seed_offset,
            self.final.warm_start,
            self.final.augment,
        )

    def validate(self):
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.data.source not in ("phantom", "dataset", "promise12"):
            raise ConfigError(f"unknown data source {self.data.source!r}")
        if self.data.source != "phantom" and not self.data.path:
            raise ConfigError(f"data source {self.data.source!r} needs data.path")
        if self.data.evaluate_at not in ("native", "working"):
            raise ConfigError("data.evaluate_at must be 'native' or 'working'")
        size = self.data.input_size
        if len(size) != 2 or min(size) < 8:
            raise ConfigError(f"data.input_size must be two sizes >= 8, got {size}")
        for depth in (self.unet.depth, self.reg.depth):
            factor = 2 ** (depth - 1)
            if size[0] % factor or size[1] % factor:
                raise ConfigError(f"input_size {size} not divisible by {factor} (network depth {depth})")
        if self.data.source == "phantom":
            try:
                self.phantom_spec()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"data.phantom: {exc}") from exc
        if self.optim.base_lr <= 0 or self.optim.lr_step < 1 or not 0 < self.optim.lr_decay <= 1:
            raise ConfigError("optim needs base_lr > 0, lr_step >= 1 and 0 < lr_decay <= 1")
        if self.final.base_lr is not None and not self.final.base_lr > 0:
            raise ConfigError("final.base_lr must be positive when set")
        self.unet.validate()
        self.loss.validate()
        self.semi_config().validate()
        self.reg_config().validate()
        self.final_config().validate()
        return self

    # -- serialisation --------------------------------------------------------
    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = {g.name: _plain(getattr(value, g.name)) for g in fields(value)} if hasattr(
                value, "__dataclass_fields__"
            ) else value
        return out

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self, exclude=("output_dir",)):
        """Content hash of every setting that affects results."""
        data = self.to_dict()
        for key in exclude:
            data.pop(key, None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data):
        data = copy.deepcopy(data)
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        sections = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in data.items():
            default = sections[name].default_factory() if callable(sections[name].default_factory) else None
            if default is not None and hasattr(default, "__dataclass_fields__"):
                if not isinstance(value, dict):
                    raise ConfigError(f"section {name!r} must be an object")
                known = {g.name for g in fields(default)}
                bad = set(value) - known
                if bad:
                    raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
                merged = {g.name: getattr(default, g.name) for g in fields(default)}
                if name == "data" and "phantom" in value:
                    merged["phantom"] = {**merged["phantom"], **value.pop("phantom")}
                merged.update(value)
                try:
                    kwargs[name] = type(default)(**merged)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"section {name!r}: {exc}") from exc
            else:
                kwargs[name] = value
        return cls(**kwargs)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def load_config(path_or_name):
    """Read a JSON config file, or one of the packaged profiles by name."""
    if str(path_or_name) in PACKAGED:
        text = resources.files("collabseg.configs").joinpath(f"{path_or_name}.json").read_text()
        source = f"packaged profile {path_or_name!r}"
    else:
        path = Path(path_or_name)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        text = path.read_text()
        source = str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data).validate()


def save_config(config, path):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
