"""Synthetic multi-sensor point-mass navigation task.

The true state is ``[px, py, vx, vy]``; actions are 2-D accelerations. Each
sensor renders ``clip(offset + H_i @ state + noise, 0, 1)`` into a frame of
its declared shape, where ``offset`` is a scalar level or a static
per-coordinate background. The hidden state is carried on :class:`StepRecord` for
the harness only; agent-side code receives bundles, rewards and flags.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_discrete_are

from .errors import ConfigError, ContractError
from .sensors import ObservationBundle, SensorFrame
from .worldmodel.smoother import LinearSystem


@dataclass(frozen=True)
class SensorSpec:
    name: str
    shape: tuple[int, int, int]
    H: np.ndarray  # (rows*cols*channels, state_dim)
    offset: float | np.ndarray = 0.5  # scalar or (size,) background
    noise_std: float = 0.02

    @property
    def size(self) -> int:
        r, c, ch = self.shape
        return r * c * ch


@dataclass(frozen=True)
class EnvConfig:
    F: np.ndarray
    G: np.ndarray
    process_noise_std: np.ndarray
    goal: np.ndarray
    sensors: tuple[SensorSpec, ...]
    start_mean: np.ndarray
    start_std: np.ndarray
    episode_length: int = 200
    reward_scale: float = 1.0
    action_limit: float = 1.0
    lqr_state_weight: tuple = (1.0, 1.0, 0.1, 0.1)
    lqr_action_weight: float = 0.5
    seed: int = 0

    def __post_init__(self):
        n = self.F.shape[0]
        if self.F.shape != (n, n) or self.G.shape[0] != n:
            raise ConfigError("F must be square and G must have state_dim rows")
        if max(abs(np.linalg.eigvals(self.F))) > 1.05:
            raise ConfigError("spectral radius of F exceeds 1.05")
        for s in self.sensors:
            if s.H.shape != (s.size, n):
                raise ConfigError(f"sensor {s.name}: H is {s.H.shape}, expected {(s.size, n)}")
        if self.episode_length < 1:
            raise ConfigError("episode_length must be >= 1")

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]

    @property
    def action_dim(self) -> int:
        return self.G.shape[1]

    @property
    def layout(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(s.shape for s in self.sensors)

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    def subset(self, sensor_ids) -> "EnvConfig":
        """Same dynamics, keeping only the listed sensors (renumbered from 0)."""
        return replace(self, sensors=tuple(self.sensors[i] for i in sensor_ids))


def linear_system(cfg: EnvConfig) -> LinearSystem:
    return LinearSystem(
        F=cfg.F,
        G=cfg.G,
        Q=np.diag(np.asarray(cfg.process_noise_std, float) ** 2),
        H=tuple(s.H for s in cfg.sensors),
        offsets=tuple(np.broadcast_to(np.asarray(s.offset, float), (s.size,)).copy() for s in cfg.sensors),
        obs_var=tuple(s.noise_std**2 for s in cfg.sensors),
        start_mean=np.asarray(cfg.start_mean, float),
        start_cov=np.diag(np.asarray(cfg.start_std, float) ** 2),
    )


def _point_mass(dt: float = 0.1, damping: float = 0.9):
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    F[2, 2] = F[3, 3] = damping
    G = np.zeros((4, 2))
    G[2, 0] = G[3, 1] = dt
    return F, G


def default_config(layout_seed: int = 7, episode_length: int = 200, **overrides) -> EnvConfig:
    """Six redundant-but-different sensors observing a 2-D point mass."""
    rng = np.random.default_rng(layout_seed)
    F, G = _point_mass()

    def field(rows, cols, channels, pos_w, vel_w):
        """Smooth periodic images: each state dimension drives a low-frequency pattern.

        Smoothness makes spatial shifts degrade the image gradually with the
        shift size instead of decorrelating it at the first pixel.
        """
        v, u = np.meshgrid(np.arange(rows) / rows, np.arange(cols) / cols, indexing="ij")
        freqs = ((0, 0), (1, 0), (0, 1), (1, 1), (1, -1))  # (0, 0): a constant level
        H = np.zeros((rows, cols, channels, 4))
        for j, w in enumerate((pos_w, pos_w, vel_w, vel_w)):
            for c in range(channels):
                amp = rng.standard_normal(len(freqs))
                phase = rng.uniform(0, 2 * np.pi, len(freqs))
                pattern = sum(a * np.cos(2 * np.pi * (fu * u + fv * v) + ph) for a, (fu, fv), ph in zip(amp, freqs, phase))
                H[:, :, c, j] = w * pattern / np.sqrt(np.mean(pattern**2))
        return H.reshape(rows * cols * channels, 4)

    def background(rows, cols, channels):
        """Static scene texture in [0.3, 0.7]; spatial shifts of it are visible at any state."""
        return 0.5 + 0.2 * np.tanh(field(rows, cols, channels, 1.0, 1.0) @ np.ones(4) / 2)

    sensors = []
    for name in ("view_wide", "view_narrow"):
        H = field(8, 8, 3, 0.1, 0.03)
        H *= np.tile([1.0, 0.8, 0.6], 8 * 8)[:, None]  # distinct RGB planes
        sensors.append(SensorSpec(name, (8, 8, 3), H, offset=background(8, 8, 3), noise_std=0.02))
    sensors.append(
        SensorSpec("coarse", (4, 4, 1), field(4, 4, 1, 0.12, 0.0), offset=background(4, 4, 1), noise_std=0.03)
    )
    for name, bearing in (("beacon_a", 0.3), ("beacon_b", 1.9)):
        angles = bearing + np.arange(4) * np.pi / 4
        H = np.zeros((4, 4))
        H[:, 0] = 0.25 * np.cos(angles)
        H[:, 1] = 0.25 * np.sin(angles)
        sensors.append(SensorSpec(name, (1, 4, 1), H, noise_std=0.02))
    Hv = np.zeros((2, 4))
    Hv[0, 2] = Hv[1, 3] = 0.3
    sensors.append(SensorSpec("velocity", (1, 2, 1), Hv, noise_std=0.02))

    params = dict(
        F=F,
        G=G,
        process_noise_std=np.array([0.0, 0.0, 0.01, 0.01]),
        goal=np.array([0.5, 0.5, 0.0, 0.0]),
        sensors=tuple(sensors),
        start_mean=np.array([-0.5, -0.5, 0.0, 0.0]),
        start_std=np.array([0.05, 0.05, 0.0, 0.0]),
        episode_length=episode_length,
        reward_scale=1.0,
        seed=layout_seed,
    )
    params.update(overrides)
    return EnvConfig(**params)


def single_sensor_config(layout_seed: int = 7, episode_length: int = 200, **overrides) -> EnvConfig:
    """The default task reduced to its wide camera view."""
    return default_config(layout_seed, episode_length, **overrides).subset([0])


def identity_config(episode_length: int = 30, seed: int = 0) -> EnvConfig:
    """One sensor whose frame is exactly the state; no process or observation noise."""
    n = 2
    return EnvConfig(
        F=np.eye(n),
        G=0.05 * np.eye(n),
        process_noise_std=np.zeros(n),
        goal=np.array([0.5, 0.5]),
        sensors=(SensorSpec("state", (1, n, 1), np.eye(n), offset=0.0, noise_std=0.0),),
        start_mean=np.array([0.5, 0.5]),
        start_std=np.array([0.1, 0.1]),
        episode_length=episode_length,
        lqr_state_weight=(1.0, 1.0),
        seed=seed,
    )


PRESETS = {
    "default": default_config,
    "single_sensor": single_sensor_config,
}


@dataclass(frozen=True)
class StepRecord:
    bundle: ObservationBundle
    reward: float
    done: bool
    hidden_state: np.ndarray = field(repr=False)  # harness-only


class PointMassEnv:
    """One episode's worth of simulator state. Single-threaded."""

    def __init__(self, cfg: EnvConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.state = np.asarray(cfg.start_mean, float) + np.asarray(cfg.start_std, float) * self.rng.standard_normal(
            cfg.state_dim
        )

    def render(self) -> ObservationBundle:
        frames = []
        for i, s in enumerate(self.cfg.sensors):
            v = s.offset + s.H @ self.state
            if s.noise_std > 0:
                v = v + s.noise_std * self.rng.standard_normal(s.size)
            frames.append(SensorFrame(i, s.shape, np.clip(v, 0.0, 1.0)))
        return ObservationBundle(tuple(frames), self.t)

    def reward(self) -> float:
        d = self.state - self.cfg.goal
        return -float(self.cfg.reward_scale * d @ d)

    def record(self, reward: float) -> StepRecord:
        return StepRecord(self.render(), reward, self.t >= self.cfg.episode_length, self.state.copy())

    def step(self, action) -> StepRecord:
        a = np.asarray(action, dtype=float)
        if a.shape != (self.cfg.action_dim,) or not np.all(np.isfinite(a)):
            raise ContractError(f"action must be a finite vector of length {self.cfg.action_dim}")
        w = np.asarray(self.cfg.process_noise_std) * self.rng.standard_normal(self.cfg.state_dim)
        self.state = self.cfg.F @ self.state + self.cfg.G @ a + w
        self.t += 1
        return self.record(self.reward())


def reset(cfg: EnvConfig, seed: int) -> tuple[PointMassEnv, StepRecord]:
    env = PointMassEnv(cfg, seed)
    return env, env.record(0.0)


def step(env: PointMassEnv, action) -> StepRecord:
    return env.step(action)


def lqr_gain(cfg: EnvConfig) -> np.ndarray:
    Q = np.diag(cfg.lqr_state_weight)
    R = cfg.lqr_action_weight * np.eye(cfg.action_dim)
    P = solve_discrete_are(cfg.F, cfg.G, Q, R)
    return np.linalg.solve(R + cfg.G.T @ P @ cfg.G, cfg.G.T @ P @ cfg.F)


@dataclass(frozen=True)
class Controller:
    """Linear feedback on a state estimate: ``a = clip(-K (x - goal))``."""

    K: np.ndarray
    goal: np.ndarray
    action_limit: float = 1.0

    @classmethod
    def for_env(cls, cfg: EnvConfig) -> "Controller":
        return cls(lqr_gain(cfg), np.asarray(cfg.goal, float), cfg.action_limit)

    def __call__(self, estimate: np.ndarray) -> np.ndarray:
        a = -self.K @ (np.asarray(estimate, float) - self.goal)
        return np.clip(a, -self.action_limit, self.action_limit)


def policy_act(controller: Controller, latent) -> np.ndarray:
    """Act on the latent state; latent coordinates are state coordinates by construction of the fit."""
    return controller(latent.z)
