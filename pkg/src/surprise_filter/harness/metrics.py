"""Metric rows, rank correlation, and CSV / JSONL emission.

Reals are written with ``repr``, the shortest decimal that reloads to the
same float64, so emitted files round-trip exactly and are byte-stable
across runs with the same seed.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from ..errors import ConfigError

CSV_COLUMNS = (
    "agent",
    "kind",
    "intensity",
    "proportion",
    "failed",
    "ret_mean",
    "ret_std",
    "surprise_mean",
    "sel_acc",
    "rej_prec",
    "rej_rec",
    "episodes",
)


@dataclass(frozen=True)
class MetricsRow:
    """One evaluation cell. Rates are ``None`` when undefined for the agent or cell."""

    agent: str
    kind: str
    intensity: float
    proportion: float
    failed: int
    ret_mean: float
    ret_std: float
    surprise_mean: float
    sel_acc: float | None
    rej_prec: float | None
    rej_rec: float | None
    episodes: int

    def __post_init__(self):
        for name in ("sel_acc", "rej_prec", "rej_rec"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")


def ratio(num: float, den: float) -> float | None:
    return num / den if den > 0 else None


def metric_spearman(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Spearman rank correlation with average ranks for ties; ``None`` for constant input."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ConfigError("spearman needs two equal-length 1-D sequences")
    if len(xs) < 3:
        raise ConfigError("spearman needs at least three points")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        return None
    return float(stats.spearmanr(xs, ys).correlation)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_emit(rows: Iterable[MetricsRow], path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in rows:
                w.writerow([_cell(v) for v in astuple(r)])
    except OSError as exc:
        raise OSError(f"cannot write metrics CSV {path}: {exc}") from exc
    return path


def csv_read(path) -> list[MetricsRow]:
    """Parse a file written by :func:`csv_emit`."""
    path = Path(path)
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ConfigError(f"{path}: unexpected header {header}")
        for rec in reader:
            d = dict(zip(CSV_COLUMNS, rec))

            def real(k):
                return None if d[k] == "" else float(d[k])

            out.append(
                MetricsRow(
                    d["agent"],
                    d["kind"],
                    float(d["intensity"]),
                    float(d["proportion"]),
                    int(d["failed"]),
                    float(d["ret_mean"]),
                    float(d["ret_std"]),
                    float(d["surprise_mean"]),
                    real("sel_acc"),
                    real("rej_prec"),
                    real("rej_rec"),
                    int(d["episodes"]),
                )
            )
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def jsonl_emit(records: Iterable[dict], path, append: bool = True) -> Path:
    """One JSON object per line; appending never rewrites earlier lines."""
    path = Path(path)
    try:
        with open(path, "a" if append else "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(r, default=_json_default, allow_nan=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write JSONL {path}: {exc}") from exc
    return path


def finite_mean(xs: Sequence[float]) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else float("nan")
