"""Single-observation rejection gate with predictive / ground-truth modes.

Each step the observation gets a score. At or above ``tau`` it is rejected
and the agent runs on the prior prediction (predictive mode); between
``tau_d`` and ``tau`` it is replaced by a denoised version and accepted;
below ``tau_d`` it is accepted as is. The first acceptance after a run of
rejections realigns the context by replaying the stored (z, a) pairs from
the last accepted context.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import CalibrationError, ConfigError, ContractError
from .sensors import ObservationBundle
from .worldmodel.model import (
    WorldModel,
    decode_flat,
    kl_surprise,
    posterior,
    prior,
    rejection_score,
    sequence_step,
)

MIN_CALIBRATION_SAMPLES = 500
REPLAY_CAP = 64


class Mode(enum.Enum):
    GROUND_TRUTH = "ground_truth"
    PREDICTIVE = "predictive"


class Verdict(enum.Enum):
    ACCEPT = "accept"
    ACCEPT_DENOISED = "accept_denoised"
    REJECT = "reject"


@dataclass(frozen=True)
class GateConfig:
    tau: float
    tau_d: float
    score: str = "reconstruction"  # or "surprise"
    denoiser: str = "posterior_decode"  # or "prior_interpolation"
    alpha: float = 0.5
    replay_cap: int = REPLAY_CAP

    def __post_init__(self):
        if self.score not in ("reconstruction", "surprise"):
            raise ConfigError(f"unknown score strategy {self.score!r}")
        if self.denoiser not in ("posterior_decode", "prior_interpolation"):
            raise ConfigError(f"unknown denoiser {self.denoiser!r}")
        if math.isnan(self.tau) or math.isnan(self.tau_d):
            raise ContractError("gate thresholds are not calibrated")
        if self.tau_d > self.tau:
            raise ConfigError("tau_d must not exceed tau")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")

    def strict(self) -> "GateConfig":
        """Two-case gate: no denoising band."""
        return replace(self, tau_d=self.tau)


@dataclass(frozen=True)
class GateState:
    mode: Mode
    h: np.ndarray | None  # context of the previous step; None before the first step
    residual_h: np.ndarray | None
    z_prev: np.ndarray | None
    steps_in_predictive: int = 0
    replay: tuple = ()  # (z, a) pairs since the last accepted step

    @classmethod
    def initial(cls) -> "GateState":
        return cls(Mode.GROUND_TRUTH, None, None, None, 0, ())


@dataclass(frozen=True)
class GateDecision:
    verdict: Verdict
    score: float
    used_z: np.ndarray
    used_h: np.ndarray
    context_reset: bool
    mode: Mode
    outage_capped: bool = False

    def log_record(self, step: int) -> dict:
        return {
            "step": step,
            "score": self.score,
            "verdict": self.verdict.value,
            "mode": self.mode.value,
            "context_reset": self.context_reset,
        }


def gate_log_jsonl(decisions: Sequence[GateDecision]) -> str:
    return "".join(json.dumps(d.log_record(t)) + "\n" for t, d in enumerate(decisions))


def calibrate(
    model: WorldModel,
    clean_stream: Sequence[ObservationBundle],
    *,
    score: str = "reconstruction",
    actions: np.ndarray | None = None,
    k_reject: float = 5.0,
    k_denoise: float = 2.0,
) -> GateConfig:
    """Thresholds at mean + 5 std (reject) and mean + 2 std (denoise) of clean scores.

    The surprise score needs contexts, so it rolls the model along the
    stream with ``actions[t]`` taken after bundle ``t``.
    """
    if len(clean_stream) < MIN_CALIBRATION_SAMPLES:
        raise CalibrationError(f"need >= {MIN_CALIBRATION_SAMPLES} clean samples, got {len(clean_stream)}")
    if score == "reconstruction":
        scores = np.array([rejection_score(model, b) for b in clean_stream])
    else:
        if actions is None:
            raise ConfigError("the surprise score needs the action stream to roll contexts")
        scores = np.empty(len(clean_stream))
        h, z = model.h0, None
        for t, b in enumerate(clean_stream):
            if t > 0 and b.step_index != 0:
                h = sequence_step(model, h, z, actions[t - 1])
            elif t > 0:
                h = model.h0
            q = posterior(model, h, b)
            scores[t] = kl_surprise(q, prior(model, h))
            z = q.mean
    mean, std = float(scores.mean()), float(scores.std(ddof=1))
    if np.all(scores == scores[0]):
        mean, std = float(scores[0]), 0.0  # summation rounding would leave a ~1e-17 std
    return GateConfig(tau=mean + k_reject * std, tau_d=mean + k_denoise * std, score=score)


def _score(model: WorldModel, cfg: GateConfig, h: np.ndarray, bundle: ObservationBundle) -> float:
    if cfg.score == "reconstruction":
        return rejection_score(model, bundle)
    return kl_surprise(posterior(model, h, bundle), prior(model, h))


def denoise(model: WorldModel, cfg: GateConfig, h: np.ndarray, bundle: ObservationBundle) -> ObservationBundle:
    if cfg.denoiser == "posterior_decode":
        recon = decode_flat(model, h, posterior(model, h, bundle).mean)
        return ObservationBundle(
            tuple(f.with_values(np.nan_to_num(r)) for f, r in zip(bundle.frames, recon)), bundle.step_index
        )
    recon = decode_flat(model, h, prior(model, h).mean)
    return ObservationBundle(
        tuple(
            f.with_values(np.nan_to_num(cfg.alpha * r + (1.0 - cfg.alpha) * f.values))
            for f, r in zip(bundle.frames, recon)
        ),
        bundle.step_index,
    )


def gate_step(
    model: WorldModel,
    cfg: GateConfig | None,
    state: GateState,
    bundle: ObservationBundle,
    action_prev=None,
) -> tuple[GateDecision, GateState]:
    if cfg is None:
        raise ContractError("gate_step needs a calibrated GateConfig")

    first = state.z_prev is None
    if first:
        h_t = model.h0
        pairs = ()
    else:
        h_t = sequence_step(model, state.h, state.z_prev, action_prev)
        pairs = state.replay + ((state.z_prev, np.asarray(action_prev, float)),)

    score = _score(model, cfg, h_t, bundle)

    if score >= cfg.tau:
        z = prior(model, h_t).mean
        decision = GateDecision(Verdict.REJECT, score, z, h_t, False, Mode.PREDICTIVE)
        new_state = GateState(
            Mode.PREDICTIVE,
            h_t,
            state.residual_h,
            z,
            state.steps_in_predictive + 1,
            pairs,
        )
        return decision, new_state

    verdict = Verdict.ACCEPT
    if score >= cfg.tau_d:
        bundle = denoise(model, cfg, h_t, bundle)
        verdict = Verdict.ACCEPT_DENOISED

    reset = state.mode is Mode.PREDICTIVE
    capped = False
    if reset and state.residual_h is not None:
        replay = pairs
        if len(replay) > cfg.replay_cap:
            capped = True  # outage too long to replay; keep the running context
        else:
            h = state.residual_h
            for z_old, a_old in replay:
                h = sequence_step(model, h, z_old, a_old)
            h_t = h
    z = posterior(model, h_t, bundle).mean
    decision = GateDecision(verdict, score, z, h_t, reset, Mode.GROUND_TRUTH, capped)
    return decision, GateState(Mode.GROUND_TRUTH, h_t, h_t, z, 0, ())
