"""Experiment configuration: a single human-editable YAML file, no code
execution. The canonical dict form feeds the config hash embedded in every
artifact a run produces.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .checkpoint import config_hash_of
from .losses import LossWeights
from .models import DecoderSpec, EncoderSpec

__all__ = ["OptimSpec", "TrainSettings", "EvalSettings", "ExperimentConfig",
           "load_config", "save_config"]


@dataclass
class OptimSpec:
    kind: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    cosine: bool = True
    warmup_steps: int = 0


@dataclass
class TrainSettings:
    objective: str = "aenib"            # "aenib" | "ce"
    total_steps: int = 20_000
    batch_size: int = 64
    seed: int = 0
    encoder_opt: OptimSpec = field(default_factory=lambda: OptimSpec(
        kind="sgd", lr=0.1, momentum=0.9, weight_decay=1e-4, cosine=True,
        warmup_steps=500))
    adversarial_opt: OptimSpec = field(default_factory=lambda: OptimSpec(
        kind="adam", lr=2e-4, beta1=0.5, beta2=0.999, weight_decay=0.0, cosine=False))
    checkpoint_every: int = 5_000
    eval_every: int = 5_000
    augment_translate: int = 4
    stochastic_latent: bool = True      # reparametrized sampling during training
    # ablation switches
    disable_recon: bool = False
    disable_nuis: bool = False
    disable_ind: bool = False
    disable_sim: bool = False
    use_sim: bool = True                # adversarial similarity guidance (conv path)
    non_saturating: bool = False
    ind_swap_real_fake: bool = False
    divergence_patience: int = 10

    def __post_init__(self):
        if self.objective not in ("aenib", "ce"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be positive")


@dataclass
class SmoothingSettings:
    sigma: float = 0.1
    n0: int = 100
    n: int = 10_000
    alpha_conf: float = 0.001
    subset: int = 200                   # certified samples per run
    radii: tuple = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35)


@dataclass
class EvalSettings:
    corruption_kinds: tuple = ("gaussian_noise", "shot_noise", "impulse_noise",
                               "box_blur", "brightness", "contrast", "translate")
    severities: tuple = (1, 2, 3, 4, 5)
    score_kinds: tuple = ("msp", "dirichlet", "nuisance", "combined")
    dirichlet_alpha: float = 0.05
    ood_noise_count: int = 2000
    smoothing: SmoothingSettings = field(default_factory=SmoothingSettings)


@dataclass
class ExperimentConfig:
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    decoder: DecoderSpec = field(default_factory=DecoderSpec)
    weights: LossWeights = field(default_factory=LossWeights)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    dataset_root: str = "data/mnist"
    out_dir: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        def clean(obj):
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in sorted(obj.items())}
            if isinstance(obj, (list, tuple)):
                return [clean(v) for v in obj]
            return obj
        return clean(asdict(self))

    def canonical_dict(self) -> dict:
        """Hash form: out_dir is excluded so the hash identifies the
        experiment, not where its artifacts land."""
        out = self.to_dict()
        out.pop("out_dir", None)
        return out

    def config_hash(self) -> str:
        return config_hash_of(self.canonical_dict())


_NESTED = {
    "encoder": EncoderSpec, "decoder": DecoderSpec, "weights": LossWeights,
    "train": TrainSettings, "eval": EvalSettings,
    "encoder_opt": OptimSpec, "adversarial_opt": OptimSpec,
    "smoothing": SmoothingSettings,
}


def _build(cls, data: dict):
    """Construct a dataclass from a plain dict, recursing into nested specs."""
    by_name = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in by_name:
            raise ValueError(f"unknown config key {key!r} for {cls.__name__}")
        if key in _NESTED and isinstance(value, dict):
            kwargs[key] = _build(_NESTED[key], value)
        else:
            if isinstance(value, list) and "tuple" in str(by_name[key].type):
                value = tuple(value)
            kwargs[key] = value
    return cls(**kwargs)


def _apply_overrides(data: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like dotted.key=value")
        dotted, raw = item.split("=", 1)
        node = data
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = yaml.safe_load(raw)
    return data


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if overrides:
        data = _apply_overrides(data, overrides)
    return _build(ExperimentConfig, data)


def save_config(cfg: ExperimentConfig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
