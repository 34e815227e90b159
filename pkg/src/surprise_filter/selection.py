"""Sensor-subset selection by Bayesian surprise.

* :func:`dropout_masks` draws the random training masks (uniform count of
  masked sensors, random which ones, never all of them).
* :func:`select_representation` is the O(n log n) greedy filter: score each
  sensor in isolation, sort by surprise, then mask cumulatively from the
  most surprising one.
* :func:`brute_force_select` enumerates every admissible subset.

Both selectors return the candidate with the smallest surprise; ties go to
the candidate with fewer masked sensors, then the lexicographically lowest
mask.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError, GuardError
from .sensors import ObservationBundle, SensorMask, subset_to_mask
from .worldmodel.model import GaussianBelief, WorldModel, kl_surprise, posterior, prior

BRUTE_FORCE_MAX_SENSORS = 16


@dataclass(frozen=True)
class DropoutPolicy:
    enabled: bool = True
    mask_value: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class SelectionConfig:
    depth: int | None = None  # None: full greedy chain
    required_sensors: tuple[int, ...] = ()
    fallback_full_on_tie: bool = True

    def __post_init__(self):
        if self.depth is not None and self.depth < 0:
            raise ConfigError("depth must be >= 0")
        object.__setattr__(self, "required_sensors", tuple(sorted(set(int(s) for s in self.required_sensors))))


@dataclass(frozen=True)
class LedgerEntry:
    mask: SensorMask
    surprise: float
    stage: str  # "isolated" | "cumulative" | "full" | "subset"
    belief: GaussianBelief = field(repr=False, compare=False)


@dataclass(frozen=True)
class SelectionResult:
    chosen_mask: SensorMask
    chosen_belief: GaussianBelief
    chosen_z: np.ndarray
    surprise_ledger: tuple[LedgerEntry, ...]
    evaluations: int

    @property
    def chosen_surprise(self) -> float:
        return min(e.surprise for e in self.surprise_ledger)

    def ledger_records(self, step: int) -> list[dict]:
        return [
            {
                "step": step,
                "candidate_mask": e.mask.as_bits(),
                "surprise": e.surprise,
                "chosen": e.mask == self.chosen_mask,
            }
            for e in self.surprise_ledger
        ]

    def to_jsonl(self, step: int) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.ledger_records(step))


def dropout_masks(M: int, batch: int, time: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean (batch, time, M) tensor; each row masks exactly u ~ U{0..M-1} sensors."""
    if M < 1:
        raise ConfigError("need at least one sensor")
    u = rng.integers(0, M, size=(batch, time))
    scores = rng.random((batch, time, M))
    ranks = np.argsort(np.argsort(scores, axis=-1), axis=-1)
    return ranks < u[..., None]


def _validate_required(required: Iterable[int], M: int) -> tuple[int, ...]:
    required = tuple(sorted(set(required)))
    if any(not 0 <= r < M for r in required):
        raise ConfigError(f"required sensors {required} outside 0..{M - 1}")
    return required


def n_maskable(M: int, required: Iterable[int]) -> int:
    """Sensors the greedy chain may mask; one sensor always stays when none are required."""
    required = tuple(required)
    return M - len(required) if required else M - 1


def expected_evaluations(M: int, depth: int | None, required: Iterable[int] = ()) -> int:
    m = n_maskable(M, required)
    return M + min(m, M if depth is None else depth) + 1


def _pick(ledger: list[LedgerEntry], fallback_full_on_tie: bool) -> LedgerEntry:
    best = min(ledger, key=lambda e: (e.surprise, e.mask.n_masked, e.mask.masked))
    if fallback_full_on_tie:
        full = [e for e in ledger if e.mask.n_masked == 0]
        if full and abs(full[0].surprise - best.surprise) <= 1e-12 * max(1.0, abs(best.surprise)):
            return full[0]
    return best


def _evaluate(model, h, bundle, p, kept, M, stage) -> LedgerEntry:
    mask = subset_to_mask(kept, M)
    q = posterior(model, h, bundle, mask)
    return LedgerEntry(mask, kl_surprise(q, p), stage, q)


def _result(ledger: list[LedgerEntry], fallback: bool) -> SelectionResult:
    best = _pick(ledger, fallback)
    return SelectionResult(best.mask, best.belief, best.belief.mean.copy(), tuple(ledger), len(ledger))


def select_representation(
    model: WorldModel, h, bundle: ObservationBundle, cfg: SelectionConfig | None = None
) -> SelectionResult:
    cfg = cfg or SelectionConfig()
    M = bundle.n_sensors
    required = _validate_required(cfg.required_sensors, M)
    depth = M if cfg.depth is None else cfg.depth
    p = prior(model, h)
    ledger: list[LedgerEntry] = []

    # isolated candidates (each sensor alone, plus any required ones)
    for k in range(M):
        ledger.append(_evaluate(model, h, bundle, p, {k, *required}, M, "isolated"))
    surprise = [e.surprise for e in ledger]

    order = sorted(range(M), key=lambda k: (-surprise[k], k))
    chain = [k for k in order if k not in required][: min(n_maskable(M, required), depth)]
    masked: set[int] = set()
    for k in chain:
        masked.add(k)
        ledger.append(_evaluate(model, h, bundle, p, set(range(M)) - masked, M, "cumulative"))

    ledger.append(_evaluate(model, h, bundle, p, range(M), M, "full"))
    return _result(ledger, cfg.fallback_full_on_tie)


def brute_force_select(
    model: WorldModel, h, bundle: ObservationBundle, required_sensors: Iterable[int] = (), fallback_full_on_tie: bool = True
) -> SelectionResult:
    M = bundle.n_sensors
    if M > BRUTE_FORCE_MAX_SENSORS:
        raise GuardError(f"exhaustive search over {M} sensors exceeds the {BRUTE_FORCE_MAX_SENSORS}-sensor guard")
    required = _validate_required(required_sensors, M)
    req_bits = sum(1 << r for r in required)
    p = prior(model, h)
    ledger = []
    for bits in range(1, 1 << M):
        if bits & req_bits != req_bits:
            continue
        kept = [i for i in range(M) if bits >> i & 1]
        ledger.append(_evaluate(model, h, bundle, p, kept, M, "subset"))
    return _result(ledger, fallback_full_on_tie)
