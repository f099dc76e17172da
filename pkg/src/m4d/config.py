"""Run configuration: schedule, learning rates, and .cfg round-trip.

Everything tunable about a run lives in one RunConfig so a run directory
can reproduce itself from the config.cfg it wrote.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace

from .objectives import LossWeights, ObjectiveConfig


@dataclass
class LearningRates:
    """Per-group step sizes. Position is a fraction of scene extent."""

    position: float = 1.6e-4
    rotation: float = 1e-3
    scale: float = 5e-3
    opacity: float = 5e-2
    color: float = 2.5e-3
    semantic: float = 2.5e-2
    uncertainty: float = 1e-2
    coeff: float = 1e-2
    bases: float = 1e-3

    def resolve(self, scene_extent: float) -> dict[str, float]:
        """Map onto optimizer group names, scaling position by extent."""
        return {
            "mu0": self.position * scene_extent,
            "quat0": self.rotation,
            "log_scale": self.scale,
            "opacity_logit": self.opacity,
            "color": self.color,
            "sem_logit": self.semantic,
            "unc_logit": self.uncertainty,
            "coeff_logit": self.coeff,
            "basis_quat": self.bases,
            "basis_trans": self.bases,
        }


@dataclass
class ResampleConfig:
    theta_rgb: float = 0.1
    theta_sem: float = math.log(4.0)
    max_new_per_step: int = 256
    min_region_area: int = 16
    resample_every: int = 100


@dataclass
class RunConfig:
    chunk_len: int = 16
    steps_stage1: int = 800
    steps_stage2_per_round: int = 200
    rounds: int = 3
    steps_stage3: int = 2000
    seed: int = 0
    num_bases: int = 4
    prune_min_opacity: float = 0.005
    prune_every: int = 500
    init_stride: int = 4
    init_motion_px: float = 1.5    # prior-flow residual that marks a pixel dynamic
    conf_warmup_frac: float = 0.5  # head fraction of each motion stage with w held
    refine_enabled: bool = True
    resample_enabled: bool = True
    lr: LearningRates = field(default_factory=LearningRates)
    weights: LossWeights = field(default_factory=LossWeights)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    resample: ResampleConfig = field(default_factory=ResampleConfig)

    def validate(self) -> None:
        if self.chunk_len < 1:
            raise ValueError("chunk_len must be >= 1")
        for name in ("steps_stage1", "steps_stage2_per_round", "rounds",
                     "steps_stage3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.num_bases < 1:
            raise ValueError("num_bases must be >= 1")
        if not 0.0 <= self.conf_warmup_frac <= 1.0:
            raise ValueError("conf_warmup_frac must be in [0, 1]")


ABLATION_VARIANTS = (
    "no_iterative_refinement",
    "no_adaptive_sampling",
    "full_initialization",
    "no_global_optimization",
)

# single chunk for any realistic frame count
_WHOLE_SEQUENCE = 10 ** 9


def ablate(cfg: RunConfig, variant: str) -> RunConfig:
    """Return a copy of cfg with one ablation switch applied."""
    if variant == "no_iterative_refinement":
        return replace(cfg, refine_enabled=False,
                       weights=replace(cfg.weights, consistency=0.0))
    if variant == "no_adaptive_sampling":
        return replace(cfg, resample_enabled=False)
    if variant == "full_initialization":
        return replace(cfg, chunk_len=_WHOLE_SEQUENCE)
    if variant == "no_global_optimization":
        return replace(cfg, steps_stage3=0)
    raise ValueError(f"unknown ablation variant: {variant!r}")


# ----------------------------------------------------------- .cfg files

_SECTIONS = ("lr", "weights", "objective", "resample")


def _write_section(parser, name, obj) -> None:
    parser[name] = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        parser[name][f.name] = repr(v) if isinstance(v, float) else str(v)


def _read_section(parser, name, cls):
    kwargs = {}
    sec = parser[name]
    for f in fields(cls):
        if f.name not in sec:
            continue
        raw = sec[f.name]
        if f.type == "bool":
            kwargs[f.name] = raw.lower() in ("1", "true", "yes")
        elif f.type == "int":
            kwargs[f.name] = int(raw)
        elif f.type == "float":
            kwargs[f.name] = float(raw)
    return cls(**kwargs)


def save_config(path, cfg: RunConfig) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["run"] = {}
    for f in fields(RunConfig):
        if f.name in _SECTIONS:
            continue
        v = getattr(cfg, f.name)
        parser["run"][f.name] = repr(v) if isinstance(v, float) else str(v)
    for name in _SECTIONS:
        _write_section(parser, name, getattr(cfg, name))
    with open(path, "w") as fh:
        fh.write("# optimizer run configuration\n")
        parser.write(fh)


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    nested = {
        "lr": _read_section(parser, "lr", LearningRates),
        "weights": _read_section(parser, "weights", LossWeights),
        "objective": _read_section(parser, "objective", ObjectiveConfig),
        "resample": _read_section(parser, "resample", ResampleConfig),
    }
    run = _read_section(parser, "run", RunConfig)
    cfg = replace(run, **nested)
    cfg.validate()
    return cfg
