"""Closed-form fitting of :class:`WorldModel` by ridge regression.

Latent targets come from an RTS smoother over the generating linear system.
Encoders are fitted per sensor and the recurrence is regressed on those
targets. The prior variance is then measured on filter rollouts in which
the posterior fusion sees random dropout masks, so the prior is as wide as
the one-step error really is when evidence is thin.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from ..errors import ConfigError, FitError
from ..sensors import ObservationBundle, SensorMask
from .model import VAR_FLOOR, CalibStats, WorldModel, posterior, rejection_score
from .smoother import LinearSystem, rts_smooth

MAX_EVIDENCE_VAR = 1e8  # encoder variance for dimensions a sensor does not observe


@dataclass(frozen=True)
class Episode:
    """A clean trajectory: bundle ``t`` is observed, then ``actions[t]`` is taken."""

    bundles: tuple[ObservationBundle, ...]
    actions: np.ndarray  # (T, action_dim)
    rewards: np.ndarray  # (T,)

    def __len__(self):
        return len(self.bundles)


@dataclass(frozen=True)
class Augmentation:
    """Gaussian corruption of encoder inputs on a random fraction of steps."""

    intensity: float = 0.3
    fraction: float = 0.5
    seed: int = 0


def ridge_fit(X: np.ndarray, Y: np.ndarray, ridge: float, block: str, intercept: bool = True):
    """Return ``(W, b)`` with ``Y ≈ X @ W.T + b``; the bias is not penalised."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if intercept:
        xm, ym = X.mean(axis=0), Y.mean(axis=0)
        X, Y = X - xm, Y - ym
    gram = X.T @ X + ridge * np.eye(X.shape[1])
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > 1e15:
        raise FitError(f"{block}: normal equations are rank-deficient even with ridge={ridge}")
    try:
        W = scipy.linalg.solve(gram, X.T @ Y, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise FitError(f"{block}: {exc}") from exc
    if not np.all(np.isfinite(W)):
        raise FitError(f"{block}: regression produced non-finite weights")
    b = ym - xm @ W if intercept else np.zeros(Y.shape[1])
    return W.T, b


def filter_rollout(model: WorldModel, bundles: Sequence[ObservationBundle], actions: np.ndarray, masks=None):
    """Run the context recurrence with posterior-mean latents; return (H, Z) arrays."""
    T = len(bundles)
    H = np.zeros((T, model.d))
    Z = np.zeros((T, model.k))
    h = model.h0
    for t, bundle in enumerate(bundles):
        if t > 0:
            h = model.A @ h + model.B @ Z[t - 1] + model.C @ actions[t - 1]
        mask = masks[t] if masks is not None else None
        H[t] = h
        Z[t] = posterior(model, h, bundle, mask).mean
    return H, Z


def _check_episodes(episodes: Sequence[Episode]) -> None:
    if len(episodes) < 2:
        raise ConfigError("fit needs at least two episodes")
    layout = episodes[0].bundles[0].shapes
    for e in episodes:
        if len(e) < 3:
            raise ConfigError("every episode needs at least three steps")
        if any(b.shapes != layout for b in e.bundles):
            raise ConfigError("sensor layout differs across the dataset")


def fit(
    episodes: Sequence[Episode],
    system: LinearSystem,
    dropout=None,
    dims: tuple[int, int] | None = None,
    ridge: float = 1e-4,
    *,
    mask_as_zero_evidence: bool = False,
    holdout_fraction: float = 0.2,
    rollout_passes: int = 3,
    augment: Augmentation | None = None,
) -> WorldModel:
    from ..noise import corrupt_gaussian
    from ..selection import DropoutPolicy, dropout_masks

    _check_episodes(episodes)
    if ridge <= 0:
        raise ConfigError("ridge must be positive")
    n = system.state_dim
    if dims is None:
        dims = (n, n)
    if tuple(dims) != (n, n):
        raise ConfigError(f"latent and context dims must both equal the state dim {n}, got {dims}")
    dropout = dropout if dropout is not None else DropoutPolicy(enabled=False)

    n_hold = min(max(1, int(round(holdout_fraction * len(episodes)))), len(episodes) - 1)
    train, held = list(episodes[: len(episodes) - n_hold]), list(episodes[len(episodes) - n_hold :])
    layout = train[0].bundles[0].shapes
    M = len(layout)

    # latent targets from the generating system
    targets = []
    for e in train:
        frames = [np.concatenate([f.values for f in b.frames]) for b in e.bundles]
        targets.append(rts_smooth(system, frames, e.actions))

    # encoder inputs, optionally gaussian-augmented
    enc_bundles = [list(e.bundles) for e in train]
    if augment is not None:
        rng = np.random.default_rng(augment.seed)
        for ep in enc_bundles:
            for t, b in enumerate(ep):
                if rng.random() < augment.fraction:
                    ep[t] = type(b)(
                        tuple(f.with_values(corrupt_gaussian(f, augment.intensity, rng).values) for f in b.frames),
                        b.step_index,
                    )

    T_max = max(len(e) for e in train)
    if dropout.enabled:
        mask_tensor = dropout_masks(M, len(train), T_max, np.random.default_rng(dropout.seed))
    else:
        mask_tensor = np.zeros((len(train), T_max, M), dtype=bool)
    ep_masks = [[SensorMask(tuple(mask_tensor[b, t])) for t in range(len(train[b]))] for b in range(len(train))]

    Zhat = np.vstack(targets)

    # 1. per-sensor encoders. A regression of z on a frame is a posterior
    # under the training marginal N(mu, V); dividing that marginal out leaves
    # the frame's likelihood, so a sensor that cannot see a dimension adds
    # no evidence on it instead of re-counting the dataset mean every step.
    mu, V = Zhat.mean(axis=0), np.maximum(Zhat.var(axis=0), VAR_FLOOR)
    enc_W, enc_b, enc_var = [], [], []
    for i in range(M):
        rows = []
        for b, ep in enumerate(enc_bundles):
            for t, bundle in enumerate(ep):
                if mask_as_zero_evidence and mask_tensor[b, t, i]:
                    rows.append(np.full(bundle.frames[i].size, dropout.mask_value))
                else:
                    rows.append(bundle.frames[i].values)
        X = np.vstack(rows)
        W, bias = ridge_fit(X, Zhat, ridge, f"encoder[{i}]")
        R = np.maximum(np.mean((Zhat - (X @ W.T + bias)) ** 2, axis=0), VAR_FLOOR)
        lik_prec = np.maximum(1.0 / R - 1.0 / V, 1.0 / MAX_EVIDENCE_VAR)
        lik_var = 1.0 / lik_prec
        enc_W.append((lik_var / R)[:, None] * W)
        enc_b.append(lik_var * (bias / R - mu / V))
        enc_var.append(lik_var)

    # 2. recurrence from smoothed targets (context = one-step prediction)
    prev = np.vstack([np.hstack([z[:-1], e.actions[: len(e) - 1]]) for z, e in zip(targets, train)])
    nxt = np.vstack([z[1:] for z in targets])
    W, _ = ridge_fit(prev, nxt, ridge, "sequence[init]", intercept=False)
    h0 = np.mean([z[0] for z in targets], axis=0)
    model = WorldModel(
        A=np.zeros((n, n)),
        B=W[:, :n],
        C=W[:, n:],
        Wp=np.eye(n),
        bp=np.zeros(n),
        # broad until the first rollout measures the real one-step error
        prior_var=np.maximum(Zhat.var(axis=0), VAR_FLOOR),
        enc_W=tuple(enc_W),
        enc_b=tuple(enc_b),
        enc_var=tuple(enc_var),
        dec_W=tuple(np.zeros((int(np.prod(s)), 2 * n)) for s in layout),
        dec_b=tuple(np.zeros(int(np.prod(s))) for s in layout),
        rew_w=np.zeros(2 * n),
        rew_b=0.0,
        h0=h0,
        layout=layout,
        mask_as_zero_evidence=mask_as_zero_evidence,
        mask_value=dropout.mask_value,
    )

    # 3. prior variance from masked filter rollouts. The recurrence and prior
    # mean stay as fitted on smoothed targets: refitting them on rollouts
    # regresses on near-collinear (h, z) pairs and breaks open-loop prediction.
    def rollouts(m):
        return [filter_rollout(m, ep, e.actions, ep_masks[b]) for b, (ep, e) in enumerate(zip(enc_bundles, train))]

    # Step 0 counts too: h0 is the prediction for the first latent.
    for _ in range(rollout_passes):
        rolled = rollouts(model)
        Hs = np.vstack([H for H, _ in rolled])
        resid = Zhat - (Hs @ model.Wp.T + model.bp)
        model = model.replace(prior_var=np.maximum(np.mean(resid**2, axis=0), VAR_FLOOR))

    # 4. decoders: clean frames from z, then the residual from h
    rolled = rollouts(model)
    H_all = np.vstack([H for H, _ in rolled])
    dec_W, dec_b = [], []
    for i in range(M):
        Y = np.vstack([b.frames[i].values for e in train for b in e.bundles])
        Wz, bz = ridge_fit(Zhat, Y, ridge, f"decoder[{i}]")
        resid = Y - (Zhat @ Wz.T + bz)
        Wh, bh = ridge_fit(H_all, resid, ridge, f"decoder_context[{i}]")
        dec_W.append(np.hstack([Wh, Wz]))
        dec_b.append(bz + bh)

    # 5. reward head (step 0 carries no reward)
    HZ = np.vstack([np.hstack([H[1:], z[1:]]) for (H, _), z in zip(rolled, targets)])
    r = np.concatenate([e.rewards[1:] for e in train])
    Wr, br = ridge_fit(HZ, r[:, None], ridge, "reward")

    model = model.replace(dec_W=tuple(dec_W), dec_b=tuple(dec_b), rew_w=Wr[0], rew_b=float(br[0]))

    # 6. calibration on held-out clean steps
    scores = [rejection_score(model, b) for e in held for b in e.bundles]
    meta = {
        "ridge": ridge,
        "var_floor": VAR_FLOOR,
        "dropout_enabled": bool(dropout.enabled),
        "dropout_seed": int(dropout.seed),
        "mask_as_zero_evidence": bool(mask_as_zero_evidence),
        "augmented": augment is not None,
        "n_train_episodes": len(train),
        "n_holdout_episodes": len(held),
    }
    return model.replace(calibration=CalibStats.from_scores(scores), meta=meta)
