"""Sensor corruption models and per-episode corruption scheduling.

Intensity lives in [0, 1] for every kind, with 0 the exact identity. The
mapping from intensity to physical strength uses the module constants
below. :class:`CorruptionLog` is ground truth for metrics only.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError
from .sensors import ObservationBundle, SensorFrame

KINDS = ("gaussian", "glare", "jitter", "occlusion", "chromatic", "latency")
V_MAX = 1.0
SIGMA_SCALE = 0.5
L_MAX = 8


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _clamp_finite(v: np.ndarray) -> np.ndarray:
    return np.nan_to_num(v, nan=0.0, posinf=np.finfo(float).max, neginf=-np.finfo(float).max)


def _check_intensity(intensity: float) -> None:
    if not 0.0 <= intensity <= 1.0:
        raise ConfigError(f"intensity {intensity} outside [0, 1]")


def corrupt_gaussian(frame: SensorFrame, intensity: float, rng: np.random.Generator, sigma_scale: float = SIGMA_SCALE):
    _check_intensity(intensity)
    if intensity == 0:
        return frame
    eps = rng.standard_normal(frame.size)
    return frame.with_values(_clamp_finite(frame.values + intensity * sigma_scale * eps))


def corrupt_glare(frame: SensorFrame, intensity: float, v_max: float = V_MAX):
    _check_intensity(intensity)
    if intensity == 0:
        return frame
    return frame.with_values((1.0 - intensity) * frame.values + intensity * v_max)


def corrupt_jitter(frame: SensorFrame, intensity: float, rng: np.random.Generator, v_max: float = V_MAX):
    """One random gain and brightness offset for the whole frame."""
    _check_intensity(intensity)
    if intensity == 0:
        return frame
    gain = rng.uniform(1.0 - intensity, 1.0 + intensity)
    offset = rng.uniform(-intensity * v_max, intensity * v_max)
    return frame.with_values(_clamp_finite(gain * frame.values + offset))


def occlusion_rectangle(rows: int, cols: int, intensity: float) -> tuple[int, int]:
    """Rectangle (height, width) covering floor(intensity * area) cells, at least one."""
    target = max(1, int(math.floor(intensity * rows * cols)))
    h = max(math.ceil(target / cols), round_half_up(math.sqrt(target * rows / cols)))
    h = min(max(h, 1), rows, target)
    w = min(cols, target // h)
    return h, w


def corrupt_occlusion(frame: SensorFrame, intensity: float, rng: np.random.Generator):
    _check_intensity(intensity)
    if intensity == 0:
        return frame
    rows, cols, _ = frame.shape
    h, w = occlusion_rectangle(rows, cols, intensity)
    r0 = int(rng.integers(0, rows - h + 1))
    c0 = int(rng.integers(0, cols - w + 1))
    img = frame.image().copy()
    img[r0 : r0 + h, c0 : c0 + w, :] = 0.0
    return frame.with_values(img.reshape(-1))


def channel_directions(channels: int) -> tuple[int, ...]:
    if channels == 1:
        return (1,)
    return tuple((-1, 0, 1)[c % 3] for c in range(channels))


def chromatic_shift(cols: int, intensity: float) -> int:
    return round_half_up(intensity * (cols // 4))


def corrupt_chromatic(frame: SensorFrame, intensity: float, rng: np.random.Generator | None = None):
    """Circularly shift each channel along the column axis; a pure permutation."""
    _check_intensity(intensity)
    shift = chromatic_shift(frame.shape[1], intensity)
    if shift == 0:
        return frame
    img = frame.image()
    out = np.empty_like(img)
    for c, direction in enumerate(channel_directions(frame.shape[2])):
        out[:, :, c] = np.roll(img[:, :, c], shift * direction, axis=1)
    return frame.with_values(out.reshape(-1))


class LatencyStage:
    """Emits the frame from ``round(intensity * L_MAX)`` steps ago.

    Every incoming frame is buffered whether or not it is emitted stale, so
    the stage must see the whole stream. During warm-up the oldest buffered
    frame is used.
    """

    def __init__(self, intensity: float, l_max: int = L_MAX):
        _check_intensity(intensity)
        self.lag = round_half_up(intensity * l_max)
        self.buffer: deque = deque(maxlen=self.lag + 1)

    def push(self, frame: SensorFrame) -> None:
        self.buffer.append(frame)

    def stale(self) -> SensorFrame:
        return self.buffer[0]

    def __call__(self, frame: SensorFrame) -> SensorFrame:
        self.push(frame)
        return frame if self.lag == 0 else self.stale()


def latency_stage(spec: "NoiseSpec", state: dict, frame: SensorFrame) -> SensorFrame:
    """Functional form: ``state`` maps sensor id to its :class:`LatencyStage`."""
    stage = state.setdefault(frame.sensor_id, LatencyStage(spec.intensity))
    return stage(frame)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    intensity: float
    proportion: float
    target_sensors: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        _check_intensity(self.intensity)
        if not 0.0 <= self.proportion <= 1.0:
            raise ConfigError(f"proportion {self.proportion} outside [0, 1]")
        targets = tuple(sorted(set(int(s) for s in self.target_sensors)))
        if not targets:
            raise ConfigError("target_sensors must be non-empty")
        object.__setattr__(self, "target_sensors", targets)

    def check_layout(self, n_sensors: int) -> None:
        if max(self.target_sensors) >= n_sensors or min(self.target_sensors) < 0:
            raise ConfigError(f"target sensors {self.target_sensors} outside 0..{n_sensors - 1}")


def schedule(spec: NoiseSpec, episode_length: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``round(proportion * length)`` corrupted steps, placed uniformly."""
    if episode_length < 1:
        raise ConfigError("episode_length must be >= 1")
    n = round_half_up(spec.proportion * episode_length)
    flags = np.zeros(episode_length, dtype=bool)
    if n:
        flags[rng.choice(episode_length, size=n, replace=False)] = True
    return flags


@dataclass(frozen=True)
class CorruptionRecord:
    step: int
    sensor_id: int
    kind: str
    applied: bool


@dataclass
class CorruptionLog:
    records: list = field(default_factory=list)
    _applied: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for r in self.records:
            self._index(r)

    def _index(self, rec: CorruptionRecord) -> None:
        if rec.applied:
            self._applied.setdefault(rec.step, set()).add(rec.sensor_id)

    def add(self, rec: CorruptionRecord) -> None:
        self.records.append(rec)
        self._index(rec)

    def applied_at(self, step: int) -> set:
        return set(self._applied.get(step, ()))

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"step": r.step, "sensor_id": r.sensor_id, "kind": r.kind, "applied": r.applied}) + "\n"
            for r in self.records
        )

    @classmethod
    def from_jsonl(cls, text: str) -> "CorruptionLog":
        recs = [CorruptionRecord(**json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(recs)


def apply_kind(kind: str, frame: SensorFrame, intensity: float, rng: np.random.Generator) -> SensorFrame:
    """Dispatch one stateless injector."""
    if kind == "gaussian":
        return corrupt_gaussian(frame, intensity, rng)
    if kind == "glare":
        return corrupt_glare(frame, intensity)
    if kind == "jitter":
        return corrupt_jitter(frame, intensity, rng)
    if kind == "occlusion":
        return corrupt_occlusion(frame, intensity, rng)
    if kind == "chromatic":
        return corrupt_chromatic(frame, intensity, rng)
    raise ConfigError(f"{kind!r} is not a stateless injector")


class Corruptor:
    """Applies a list of noise specs to one episode's bundle stream.

    Owned by a single episode runner. Returns the corrupted bundle; the
    ground-truth log is kept on ``self.log`` for the metrics code.
    """

    def __init__(self, specs: Iterable[NoiseSpec], n_sensors: int, episode_length: int, seed: int):
        self.specs = tuple(specs)
        for s in self.specs:
            s.check_layout(n_sensors)
        ss = np.random.SeedSequence([seed] + [s.seed for s in self.specs])
        children = ss.spawn(2 * len(self.specs))
        self.flags = [schedule(s, episode_length, np.random.default_rng(children[2 * j])) for j, s in enumerate(self.specs)]
        self.rngs = [np.random.default_rng(children[2 * j + 1]) for j in range(len(self.specs))]
        self.latency = [
            {sid: LatencyStage(s.intensity) for sid in s.target_sensors} if s.kind == "latency" else None
            for s in self.specs
        ]
        self.log = CorruptionLog()

    def __call__(self, bundle: ObservationBundle) -> ObservationBundle:
        t = bundle.step_index
        frames = list(bundle.frames)
        for j, spec in enumerate(self.specs):
            on = bool(self.flags[j][t]) if t < len(self.flags[j]) else False
            for sid in spec.target_sensors:
                if spec.kind == "latency":
                    stage = self.latency[j][sid]
                    stage.push(frames[sid])
                    applied = on and stage.lag > 0
                    if on:
                        frames[sid] = stage.stale()
                else:
                    applied = on and spec.intensity > 0
                    if on:
                        frames[sid] = apply_kind(spec.kind, frames[sid], spec.intensity, self.rngs[j])
                self.log.add(CorruptionRecord(t, sid, spec.kind, applied))
        return ObservationBundle(tuple(frames), t)
