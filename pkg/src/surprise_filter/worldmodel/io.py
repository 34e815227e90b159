"""JSON (de)serialisation of fitted models.

Python's float repr is the shortest string that round-trips a float64, so
every stored real reloads bit-identically.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import CalibStats, WorldModel

FORMAT = "surprise_filter.worldmodel/1"
_ARRAYS = ("A", "B", "C", "Wp", "bp", "prior_var", "rew_w", "h0")
_LISTS = ("enc_W", "enc_b", "enc_var", "dec_W", "dec_b")


def to_dict(model: WorldModel, config: dict | None = None, seed: int | None = None) -> dict:
    doc = {
        "format": FORMAT,
        "dims": {"d": model.d, "k": model.k, "action_dim": model.action_dim},
        "layout": [list(s) for s in model.layout],
        "rew_b": model.rew_b,
        "mask_as_zero_evidence": model.mask_as_zero_evidence,
        "mask_value": model.mask_value,
        "meta": model.meta,
        "calibration": None
        if model.calibration is None
        else {
            "recon_mean": model.calibration.recon_mean,
            "recon_std": model.calibration.recon_std,
            "n_samples": model.calibration.n_samples,
        },
        "config": config,
        "seed": seed,
    }
    for name in _ARRAYS:
        doc[name] = np.asarray(getattr(model, name)).tolist()
    for name in _LISTS:
        doc[name] = [np.asarray(a).tolist() for a in getattr(model, name)]
    return doc


def from_dict(doc: dict) -> WorldModel:
    if doc.get("format") != FORMAT:
        raise ValueError(f"unrecognised model format {doc.get('format')!r}")
    d, k, a = doc["dims"]["d"], doc["dims"]["k"], doc["dims"]["action_dim"]

    def arr(x, shape=None):
        out = np.asarray(x, dtype=np.float64)
        return out.reshape(shape) if shape is not None else out

    cal = doc.get("calibration")
    return WorldModel(
        A=arr(doc["A"], (d, d)),
        B=arr(doc["B"], (d, k)),
        C=arr(doc["C"], (d, a)),
        Wp=arr(doc["Wp"], (k, d)),
        bp=arr(doc["bp"]),
        prior_var=arr(doc["prior_var"]),
        enc_W=tuple(arr(x) for x in doc["enc_W"]),
        enc_b=tuple(arr(x) for x in doc["enc_b"]),
        enc_var=tuple(arr(x) for x in doc["enc_var"]),
        dec_W=tuple(arr(x) for x in doc["dec_W"]),
        dec_b=tuple(arr(x) for x in doc["dec_b"]),
        rew_w=arr(doc["rew_w"]),
        rew_b=float(doc["rew_b"]),
        h0=arr(doc["h0"]),
        layout=tuple(tuple(s) for s in doc["layout"]),
        calibration=CalibStats(**cal) if cal else None,
        mask_as_zero_evidence=bool(doc["mask_as_zero_evidence"]),
        mask_value=float(doc["mask_value"]),
        meta=dict(doc.get("meta") or {}),
    )


def dumps(model: WorldModel, config: dict | None = None, seed: int | None = None) -> str:
    return json.dumps(to_dict(model, config, seed), sort_keys=True)


def loads(text: str) -> WorldModel:
    return from_dict(json.loads(text))


def save(model: WorldModel, path, config: dict | None = None, seed: int | None = None) -> Path:
    path = Path(path)
    path.write_text(dumps(model, config, seed), encoding="utf-8")
    return path


def load(path) -> WorldModel:
    return loads(Path(path).read_text(encoding="utf-8"))
