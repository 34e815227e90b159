"""Run configuration: a single YAML document with nested sections.

Every section and key is optional; missing keys take the defaults below.
Unknown keys are rejected so typos fail loudly. The full schema, with
defaults::

    seed: 0                      # master seed; --seed on the CLI overrides it
    env:
      preset: default            # default | single_sensor
      episode_length: 200
      layout_seed: 7             # seeds the sensor projection matrices
    collect:
      episodes: 24               # exploration episodes for fitting
      goal_period: 20            # steps between redrawn exploration goals
      dither: 0.5                # std of gaussian action dither
    model:
      dims: null                 # [latent, context]; must equal the state dim
      ridge: 1.0e-4
      holdout_fraction: 0.2      # episodes held out for reconstruction stats
      rollout_passes: 2
      mask_as_zero_evidence: false
    dropout:
      enabled: true              # random sensor masks for the selection model
      mask_value: 0.0
    augment:
      intensity: 0.3             # gaussian corruption for the augmented model
      fraction: 0.5
    selection:
      depth: null                # null: full greedy chain
      required_sensors: []
    gate:
      strict: true               # tau_d = tau (no denoising band)
      score: reconstruction      # reconstruction | surprise
      denoiser: posterior_decode # posterior_decode | prior_interpolation
      alpha: 0.5
      k_reject: 5.0
      k_denoise: 2.0
      calibration_episodes: 3    # fresh clean episodes, >= 500 steps in total
      tau: null                  # explicit thresholds override calibration
      tau_d: null
    agents: [base, augmented, confident_representation, rejection_gate]
    noise: []                    # explicit cells: {kind, intensity, proportion, target_sensors}
    sweep:                       # grid used by eval/sweep when noise is empty
      kinds: [gaussian, glare]
      intensities: [0.0, 0.25, 0.5, 0.625, 0.75, 0.875, 1.0]
      proportions: [0.0, 0.25, 0.5, 0.75, 0.875, 1.0]
      failed: [1]                # number of corrupted sensors per episode
      episodes: 20
    compare:
      kinds: [gaussian, glare, jitter, occlusion, chromatic, latency]
      intensity: 0.75
      episodes: 3
    verbose: false               # per-step JSONL logs
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..env import PRESETS, EnvConfig
from ..errors import ConfigError
from ..noise import KINDS, NoiseSpec
from .agents import AGENTS

DEFAULT_INTENSITIES = (0.0, 0.25, 0.5, 0.625, 0.75, 0.875, 1.0)
DEFAULT_PROPORTIONS = (0.0, 0.25, 0.5, 0.75, 0.875, 1.0)


@dataclass(frozen=True)
class EnvSection:
    preset: str = "default"
    episode_length: int = 200
    layout_seed: int = 7

    def build(self) -> EnvConfig:
        return PRESETS[self.preset](layout_seed=self.layout_seed, episode_length=self.episode_length)


@dataclass(frozen=True)
class CollectSection:
    episodes: int = 24
    goal_period: int = 20
    dither: float = 0.5


@dataclass(frozen=True)
class ModelSection:
    dims: tuple | None = None
    ridge: float = 1e-4
    holdout_fraction: float = 0.2
    rollout_passes: int = 2
    mask_as_zero_evidence: bool = False


@dataclass(frozen=True)
class DropoutSection:
    enabled: bool = True
    mask_value: float = 0.0


@dataclass(frozen=True)
class AugmentSection:
    intensity: float = 0.3
    fraction: float = 0.5


@dataclass(frozen=True)
class SelectionSection:
    depth: int | None = None
    required_sensors: tuple = ()


@dataclass(frozen=True)
class GateSection:
    strict: bool = True
    score: str = "reconstruction"
    denoiser: str = "posterior_decode"
    alpha: float = 0.5
    k_reject: float = 5.0
    k_denoise: float = 2.0
    calibration_episodes: int = 3
    tau: float | None = None
    tau_d: float | None = None


@dataclass(frozen=True)
class SweepSection:
    kinds: tuple = ("gaussian", "glare")
    intensities: tuple = DEFAULT_INTENSITIES
    proportions: tuple = DEFAULT_PROPORTIONS
    failed: tuple = (1,)
    episodes: int = 20


@dataclass(frozen=True)
class CompareSection:
    kinds: tuple = KINDS
    intensity: float = 0.75
    episodes: int = 3


_SECTIONS = {
    "env": EnvSection,
    "collect": CollectSection,
    "model": ModelSection,
    "dropout": DropoutSection,
    "augment": AugmentSection,
    "selection": SelectionSection,
    "gate": GateSection,
    "sweep": SweepSection,
    "compare": CompareSection,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    env: EnvSection = field(default_factory=EnvSection)
    collect: CollectSection = field(default_factory=CollectSection)
    model: ModelSection = field(default_factory=ModelSection)
    dropout: DropoutSection = field(default_factory=DropoutSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    gate: GateSection = field(default_factory=GateSection)
    agents: tuple = ("base", "augmented", "confident_representation", "rejection_gate")
    noise: tuple = ()  # tuple[NoiseSpec, ...]
    sweep: SweepSection = field(default_factory=SweepSection)
    compare: CompareSection = field(default_factory=CompareSection)
    verbose: bool = False

    def __post_init__(self):
        if not self.agents:
            raise ConfigError("at least one agent is required")
        bad = [a for a in self.agents if a not in AGENTS]
        if bad:
            raise ConfigError(f"unknown agents {bad}; expected a subset of {AGENTS}")
        if self.env.preset not in PRESETS:
            raise ConfigError(f"unknown env preset {self.env.preset!r}; expected one of {sorted(PRESETS)}")
        if self.sweep.episodes < 1 or self.compare.episodes < 1:
            raise ConfigError("episodes per cell must be >= 1")
        if self.collect.episodes < 2 or self.env.episode_length < 2:
            raise ConfigError("collection needs at least 2 episodes of at least 2 steps")
        if self.collect.goal_period < 1:
            raise ConfigError("goal_period must be >= 1")
        for k in (*self.sweep.kinds, *self.compare.kinds):
            if k not in KINDS:
                raise ConfigError(f"unknown noise kind {k!r}")
        for x in (*self.sweep.intensities, *self.sweep.proportions, self.compare.intensity):
            if not 0.0 <= x <= 1.0:
                raise ConfigError(f"grid value {x} outside [0, 1]")
        if any(f < 0 for f in self.sweep.failed):
            raise ConfigError("failed-sensor counts must be >= 0")

    def env_config(self) -> EnvConfig:
        return self.env.build()

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = [
            {
                "kind": s.kind,
                "intensity": s.intensity,
                "proportion": s.proportion,
                "target_sensors": list(s.target_sensors),
                "seed": s.seed,
            }
            for s in self.noise
        ]
        return _plain(d)

    def store_fingerprint(self) -> str:
        """Hash of everything that determines the collected trajectories."""
        doc = {"seed": self.seed, "env": asdict(self.env), "collect": asdict(self.collect)}
        return hashlib.sha256(json.dumps(_plain(doc), sort_keys=True).encode()).hexdigest()


def _plain(o):
    if isinstance(o, dict):
        return {k: _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    return o


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        default = known[k].default
        if isinstance(v, list):
            v = tuple(v)
        if isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if isinstance(default, tuple) and v is not None and not isinstance(v, tuple):
            raise ConfigError(f"{name}.{k} must be a list")
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigError(f"{name}.{k} must be true or false")
        if isinstance(default, (int, float)) and not isinstance(default, bool) and not isinstance(v, (int, float)):
            raise ConfigError(f"{name}.{k} must be a number")
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def _noise_specs(raw) -> tuple:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ConfigError("noise must be a list of specs")
    specs = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ConfigError(f"noise[{i}] must be a mapping")
        try:
            specs.append(
                NoiseSpec(
                    kind=item["kind"],
                    intensity=float(item["intensity"]),
                    proportion=float(item.get("proportion", 1.0)),
                    target_sensors=tuple(int(s) for s in item["target_sensors"]),
                    seed=int(item.get("seed", 0)),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"noise[{i}] is missing {exc}") from exc
    return tuple(specs)


def config_from_dict(raw: dict | None) -> RunConfig:
    raw = dict(raw or {})
    top = {"seed", "agents", "noise", "verbose", *_SECTIONS}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {name: _section(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    if "seed" in raw:
        if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
            raise ConfigError("seed must be an integer")
        kwargs["seed"] = raw["seed"]
    if "agents" in raw:
        if not isinstance(raw["agents"], list):
            raise ConfigError("agents must be a list")
        kwargs["agents"] = tuple(raw["agents"])
    if "verbose" in raw:
        kwargs["verbose"] = bool(raw["verbose"])
    kwargs["noise"] = _noise_specs(raw.get("noise"))
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)
