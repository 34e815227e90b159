"""Sensor frames, multi-sensor bundles and masking.

Frames are stored flat, row-major with channels innermost, so a frame of
shape ``(rows, cols, channels)`` has ``values.reshape(shape)`` as its image.
All types are immutable; every operation returns new objects.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidSubsetError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SensorFrame:
    sensor_id: int
    shape: tuple[int, int, int]
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ConfigError(f"frame shape must be (rows, cols, channels) >= 1, got {self.shape}")
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size != shape[0] * shape[1] * shape[2]:
            raise ConfigError(
                f"sensor {self.sensor_id}: {values.size} values do not fill shape {shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ConfigError(f"sensor {self.sensor_id}: non-finite values in frame")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", _frozen(values))

    @property
    def size(self) -> int:
        return self.values.size

    def image(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def with_values(self, values: np.ndarray) -> "SensorFrame":
        return SensorFrame(self.sensor_id, self.shape, values)

    def __eq__(self, other):
        if not isinstance(other, SensorFrame):
            return NotImplemented
        return (
            self.sensor_id == other.sensor_id
            and self.shape == other.shape
            and np.array_equal(self.values, other.values)
        )

    def to_record(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "shape": list(self.shape),
            "values": [float(v) for v in self.values],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SensorFrame":
        return cls(int(rec["sensor_id"]), tuple(rec["shape"]), np.asarray(rec["values"], float))


@dataclass(frozen=True, eq=False)
class ObservationBundle:
    frames: tuple[SensorFrame, ...]
    step_index: int = 0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ConfigError("a bundle needs at least one sensor")
        for i, f in enumerate(frames):
            if f.sensor_id != i:
                raise ConfigError(f"sensor ids must be 0..M-1 in order; position {i} has {f.sensor_id}")
        if self.step_index < 0:
            raise ConfigError("step_index must be non-negative")
        object.__setattr__(self, "frames", frames)

    @property
    def n_sensors(self) -> int:
        return len(self.frames)

    @property
    def shapes(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(f.shape for f in self.frames)

    def replace_frame(self, sensor_id: int, values: np.ndarray) -> "ObservationBundle":
        frames = list(self.frames)
        frames[sensor_id] = frames[sensor_id].with_values(values)
        return ObservationBundle(tuple(frames), self.step_index)

    def __eq__(self, other):
        if not isinstance(other, ObservationBundle):
            return NotImplemented
        return self.step_index == other.step_index and self.frames == other.frames

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray], step_index: int = 0) -> "ObservationBundle":
        """Build a bundle from per-sensor arrays; 1-D/2-D arrays get unit trailing axes."""
        frames = []
        for i, a in enumerate(arrays):
            a = np.asarray(a, dtype=np.float64)
            while a.ndim < 3:
                a = a[np.newaxis] if a.ndim == 1 else a[..., np.newaxis]
            frames.append(SensorFrame(i, a.shape, a.reshape(-1)))
        return cls(tuple(frames), step_index)


@dataclass(frozen=True)
class SensorMask:
    """``masked[i]`` is True when sensor ``i`` is replaced by the mask value."""

    masked: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "masked", tuple(bool(m) for m in self.masked))

    def __len__(self):
        return len(self.masked)

    @classmethod
    def none(cls, n: int) -> "SensorMask":
        return cls((False,) * n)

    @property
    def kept(self) -> tuple[int, ...]:
        return tuple(i for i, m in enumerate(self.masked) if not m)

    @property
    def n_masked(self) -> int:
        return sum(self.masked)

    def as_bits(self) -> str:
        return "".join("1" if m else "0" for m in self.masked)


def _check_mask(bundle: ObservationBundle, mask: SensorMask) -> None:
    if len(mask) != bundle.n_sensors:
        raise ConfigError(f"mask has {len(mask)} entries for {bundle.n_sensors} sensors")


def apply_mask(bundle: ObservationBundle, mask: SensorMask, mask_value: float = 0.0) -> ObservationBundle:
    _check_mask(bundle, mask)
    frames = tuple(
        f.with_values(np.full(f.size, float(mask_value))) if m else f
        for f, m in zip(bundle.frames, mask.masked)
    )
    return ObservationBundle(frames, bundle.step_index)


def flatten_fuse(bundle: ObservationBundle, mask: SensorMask, mask_value: float = 0.0) -> np.ndarray:
    """Concatenate all frames in sensor order after masking."""
    masked = apply_mask(bundle, mask, mask_value)
    return np.concatenate([f.values for f in masked.frames])


def subset_to_mask(kept: Iterable[int], total: int) -> SensorMask:
    kept = set(int(k) for k in kept)
    if not kept:
        raise InvalidSubsetError("the kept subset is empty; at least one sensor must remain")
    bad = [k for k in kept if not 0 <= k < total]
    if bad:
        raise InvalidSubsetError(f"sensor ids {sorted(bad)} outside 0..{total - 1}")
    return SensorMask(tuple(i not in kept for i in range(total)))


def validate_layout(bundle: ObservationBundle, layout: Sequence[tuple[int, int, int]]) -> None:
    """Reject bundles whose frame shapes deviate from the declared layout."""
    if len(layout) != bundle.n_sensors:
        raise ConfigError(f"layout declares {len(layout)} sensors, bundle has {bundle.n_sensors}")
    for f, shape in zip(bundle.frames, layout):
        if f.shape != tuple(shape):
            raise ConfigError(f"sensor {f.sensor_id}: shape {f.shape} differs from declared {tuple(shape)}")


def bundle_to_jsonl(bundle: ObservationBundle) -> str:
    """One JSON line per frame, each tagged with the bundle's step index."""
    lines = []
    for f in bundle.frames:
        rec = f.to_record()
        rec["step"] = bundle.step_index
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def bundles_from_jsonl(text: str) -> list[ObservationBundle]:
    by_step: dict[int, list[SensorFrame]] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        by_step.setdefault(int(rec.get("step", 0)), []).append(SensorFrame.from_record(rec))
    return [
        ObservationBundle(tuple(sorted(fs, key=lambda f: f.sensor_id)), step)
        for step, fs in sorted(by_step.items())
    ]
