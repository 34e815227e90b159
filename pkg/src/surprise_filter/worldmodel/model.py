"""Linear-Gaussian recurrent state-space model and its inference routines.

Structure (all covariances diagonal)::

    context     h_t = A h_{t-1} + B z_{t-1} + C a_{t-1}
    prior       z_t | h_t       ~ N(Wp h_t + bp, prior_var)
    encoder i   e_i = E_i y_i + c_i,  noise variance R_i
    posterior   precision-weighted product of the prior and unmasked e_i
    decoder i   y_i ~ D_i (h_t ⊕ z_t) + o_i
    reward      r_t ~ w_r · (h_t ⊕ z_t) + b_r
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, InvalidSubsetError
from ..sensors import ObservationBundle, SensorFrame, SensorMask

VAR_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        var = np.asarray(self.var, dtype=np.float64).reshape(-1)
        if mean.size < 1 or mean.shape != var.shape:
            raise ContractError(f"mean {mean.shape} and var {var.shape} must be equal, non-empty")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", np.maximum(var, VAR_FLOOR))

    @property
    def dim(self) -> int:
        return self.mean.size

    def __eq__(self, other):
        if not isinstance(other, GaussianBelief):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.var, other.var)


@dataclass(frozen=True)
class LatentState:
    h: np.ndarray
    z: np.ndarray
    step_index: int = 0


@dataclass(frozen=True)
class CalibStats:
    recon_mean: float
    recon_std: float
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 2:
            raise ContractError("calibration needs at least two samples")
        if not np.isfinite(self.recon_std) or self.recon_std < 0:
            raise ContractError("recon_std must be finite and non-negative")

    @classmethod
    def from_scores(cls, scores) -> "CalibStats":
        s = np.asarray(scores, float)
        return cls(float(s.mean()), float(s.std(ddof=1)), int(s.size))


@dataclass(frozen=True, eq=False)
class WorldModel:
    A: np.ndarray  # d x d
    B: np.ndarray  # d x k
    C: np.ndarray  # d x a
    Wp: np.ndarray  # k x d
    bp: np.ndarray  # k
    prior_var: np.ndarray  # k
    enc_W: tuple  # per sensor, k x o_i
    enc_b: tuple  # per sensor, k
    enc_var: tuple  # per sensor, k
    dec_W: tuple  # per sensor, o_i x (d + k)
    dec_b: tuple  # per sensor, o_i
    rew_w: np.ndarray  # d + k
    rew_b: float
    h0: np.ndarray  # d
    layout: tuple  # per-sensor frame shapes
    calibration: CalibStats | None = None
    mask_as_zero_evidence: bool = False
    mask_value: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        # inverse noise variances are used on every posterior call
        object.__setattr__(self, "_enc_prec", tuple(1.0 / np.maximum(v, VAR_FLOOR) for v in self.enc_var))
        object.__setattr__(self, "_prior_prec", 1.0 / np.maximum(self.prior_var, VAR_FLOOR))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    @property
    def action_dim(self) -> int:
        return self.C.shape[1]

    @property
    def n_sensors(self) -> int:
        return len(self.layout)

    def replace(self, **changes) -> "WorldModel":
        params = {f: getattr(self, f) for f in self.__dataclass_fields__}
        params.update(changes)
        return WorldModel(**params)


def _vec(x, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != n:
        raise ContractError(f"{what} has length {x.size}, expected {n}")
    return x


def sequence_step(model: WorldModel, h_prev, z_prev, action) -> np.ndarray:
    h_prev = _vec(h_prev, model.d, "h_prev")
    z_prev = _vec(z_prev, model.k, "z_prev")
    action = _vec(action, model.action_dim, "action")
    return model.A @ h_prev + model.B @ z_prev + model.C @ action


def prior(model: WorldModel, h) -> GaussianBelief:
    h = _vec(h, model.d, "h")
    return GaussianBelief(model.Wp @ h + model.bp, model.prior_var)


def encode(model: WorldModel, sensor_id: int, values: np.ndarray) -> np.ndarray:
    return model.enc_W[sensor_id] @ values + model.enc_b[sensor_id]


def posterior(model: WorldModel, h, bundle: ObservationBundle, mask: SensorMask | None = None) -> GaussianBelief:
    """Fuse the prior at ``h`` with every unmasked sensor's encoded evidence.

    Masked sensors are dropped from the product (infinite noise). With
    ``mask_as_zero_evidence`` they are instead encoded from a frame filled
    with the mask value and fused like any other evidence.
    """
    if bundle.n_sensors != model.n_sensors:
        raise ContractError(f"bundle has {bundle.n_sensors} sensors, model expects {model.n_sensors}")
    masked = mask.masked if mask is not None else (False,) * model.n_sensors
    if len(masked) != model.n_sensors:
        raise ContractError("mask length does not match the sensor count")
    if all(masked):
        raise InvalidSubsetError("every sensor is masked; the posterior needs at least one")
    p = prior(model, h)
    prec = model._prior_prec.copy()
    eta = p.mean * model._prior_prec
    for i, frame in enumerate(bundle.frames):
        if masked[i]:
            if not model.mask_as_zero_evidence:
                continue
            values = np.full(frame.size, model.mask_value)
        else:
            values = frame.values
        e = encode(model, i, values)
        prec = prec + model._enc_prec[i]
        eta = eta + e * model._enc_prec[i]
    return GaussianBelief(eta / prec, 1.0 / prec)


def kl_surprise(q: GaussianBelief, p: GaussianBelief) -> float:
    """KL[q || p] for diagonal Gaussians, summed over dimensions."""
    if q.dim != p.dim:
        raise ContractError(f"belief dims differ: {q.dim} vs {p.dim}")
    ratio = q.var / p.var
    diff = q.mean - p.mean
    kl = 0.5 * np.sum(ratio + diff * diff / p.var - 1.0 - np.log(ratio))
    return max(float(kl), 0.0)


def decode_flat(model: WorldModel, h, z) -> list[np.ndarray]:
    hz = np.concatenate([_vec(h, model.d, "h"), _vec(z, model.k, "z")])
    return [W @ hz + b for W, b in zip(model.dec_W, model.dec_b)]


def decode(model: WorldModel, h, z, step_index: int = 0) -> ObservationBundle:
    """Mean reconstruction of every sensor; also the posterior-decode denoiser."""
    frames = tuple(
        SensorFrame(i, shape, np.nan_to_num(v, nan=0.0, posinf=1e300, neginf=-1e300))
        for i, (shape, v) in enumerate(zip(model.layout, decode_flat(model, h, z)))
    )
    return ObservationBundle(frames, step_index)


def rejection_score(model: WorldModel, bundle: ObservationBundle) -> float:
    """Mean absolute reconstruction error of the bundle, conditioned on ``h0`` only."""
    z = posterior(model, model.h0, bundle).mean
    recon = decode_flat(model, model.h0, z)
    total = 0.0
    count = 0
    for frame, r in zip(bundle.frames, recon):
        total += float(np.sum(np.abs(frame.values - r)))
        count += frame.size
    return total / count


def predict_reward(model: WorldModel, h, z) -> float:
    hz = np.concatenate([_vec(h, model.d, "h"), _vec(z, model.k, "z")])
    return float(model.rew_w @ hz + model.rew_b)
