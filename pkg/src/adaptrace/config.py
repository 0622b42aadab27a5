"""Run configuration: defaults, YAML round-trip, and echo-back.

One YAML file describes everything a run needs, one section per subsystem
(track, planner, limits, weights, reward, ppo, batch).  Missing keys fall
back to package defaults, command-line flags override file values, and the
fully-merged result is echoed into the output directory so any run can be
reproduced from its own artifacts.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from . import agent as ag
from . import planner as pl
from . import simenv as se
from .errors import ParseError
from .track import SynthParams


@dataclass(frozen=True)
class TrackSpec:
    """Synthetic track recipe or a CSV path (path wins when both set)."""

    kind: str = "oval"
    seed: int = 0
    path: str | None = None
    params: SynthParams = field(default_factory=SynthParams)


@dataclass(frozen=True)
class BatchSpec:
    """Seeded scenario batch for evaluation runs."""

    count: int = 50
    first_seed: int = 0
    opponent_kind: str = "reactive_nr"
    opp_accel_scale: float = 0.8
    max_steps: int = 700
    max_laps: int = 3

    def __post_init__(self):
        if self.count < 0:
            raise ParseError("batch count must be nonnegative")

    def scenarios(self, lap_length: float) -> list[se.ScenarioConfig]:
        base = se.ScenarioConfig(
            opponent_kind=self.opponent_kind,
            opp_accel_scale=self.opp_accel_scale,
            max_steps=self.max_steps, max_laps=self.max_laps)
        return [se.sample_scenario(base, lap_length, s)
                for s in range(self.first_seed, self.first_seed + self.count)]


@dataclass(frozen=True)
class RunConfig:
    track: TrackSpec = field(default_factory=TrackSpec)
    planner: pl.PlannerConfig = field(default_factory=pl.PlannerConfig)
    weights: dict[str, pl.WeightSet] = field(
        default_factory=lambda: dict(pl.WEIGHT_LIBRARY))
    reward: se.RewardConfig = field(default_factory=se.RewardConfig)
    ppo: ag.PPOConfig = field(default_factory=ag.PPOConfig)
    batch: BatchSpec = field(default_factory=BatchSpec)
    out_dir: str = "runs/run"

    def __post_init__(self):
        if set(self.weights) != set(pl.MODE_NAMES):
            raise ParseError(
                f"weight library must define exactly {pl.MODE_NAMES}")


def _dataclass_from_dict(cls, data: dict, context: str):
    """Build a dataclass from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ParseError(f"{context}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ParseError(f"{context}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = known[name].type
        if name == "zone":
            value = se.InteractionZone(**value)
        elif name == "limits":
            value = pl.ConstraintLimits(**value)
        elif name == "params":
            value = SynthParams(**value)
        elif name == "speed_range" and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{context}: {exc}") from exc


_SECTIONS = {
    "track": TrackSpec,
    "planner": pl.PlannerConfig,
    "reward": se.RewardConfig,
    "ppo": ag.PPOConfig,
    "batch": BatchSpec,
}


def config_from_dict(data: dict) -> RunConfig:
    """Merged configuration: package defaults overlaid with ``data``."""
    if not isinstance(data, dict):
        raise ParseError("run config must be a mapping")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _dataclass_from_dict(_SECTIONS[key], value, key)
        elif key == "weights":
            try:
                kwargs["weights"] = {name: pl.WeightSet(**ws)
                                     for name, ws in value.items()}
            except (TypeError, ValueError, AttributeError) as exc:
                raise ParseError(f"weights: {exc}") from exc
        elif key == "out_dir":
            kwargs["out_dir"] = str(value)
        else:
            raise ParseError(f"unknown config section {key!r}")
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    out = {
        "track": asdict(cfg.track),
        "planner": asdict(cfg.planner),
        "weights": {name: asdict(ws) for name, ws in cfg.weights.items()},
        "reward": asdict(cfg.reward),
        "ppo": asdict(cfg.ppo),
        "batch": asdict(cfg.batch),
        "out_dir": cfg.out_dir,
    }
    out["planner"]["speed_range"] = list(cfg.planner.speed_range)
    return out


def load_config(path: str | Path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed YAML: {exc}") from exc
    return config_from_dict(data)


def echo_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    """Write the fully-merged configuration back out for reproducibility."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.yaml"
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))
    return path


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Replace top-level fields from non-None keyword overrides."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **updates) if updates else cfg
