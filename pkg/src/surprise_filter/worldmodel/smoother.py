"""Kalman filter / RTS smoother over a known linear-Gaussian system.

Used only at fit time to produce latent regression targets from the
generating system; nothing here is visible to the agent at run time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class LinearSystem:
    """x' = F x + G a + w,  y_i = offset_i + H_i x + v_i."""

    F: np.ndarray
    G: np.ndarray
    Q: np.ndarray  # process covariance (n x n)
    H: tuple  # per-sensor (o_i x n)
    offsets: tuple  # per-sensor (o_i,)
    obs_var: tuple  # per-sensor scalar noise variance
    start_mean: np.ndarray
    start_cov: np.ndarray

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]


def rts_smooth(system: LinearSystem, frames: list[np.ndarray], actions: np.ndarray) -> np.ndarray:
    """Smoothed state means for one episode.

    ``frames[t]`` is the concatenation of every sensor's frame at step t and
    ``actions[t]`` the action applied after observing step t.
    """
    F, G = system.F, system.G
    n = system.state_dim
    Q = system.Q + VAR_FLOOR * np.eye(n)
    H = np.vstack(system.H)
    c = np.concatenate(system.offsets)
    r = np.concatenate([np.full(h.shape[0], max(v, VAR_FLOOR)) for h, v in zip(system.H, system.obs_var)])
    Rinv = 1.0 / r
    T = len(frames)

    m_f = np.zeros((T, n))
    P_f = np.zeros((T, n, n))
    m_p = np.zeros((T, n))
    P_p = np.zeros((T, n, n))
    m, P = system.start_mean.astype(float), system.start_cov + VAR_FLOOR * np.eye(n)
    HtRinvH = H.T @ (H * Rinv[:, None])
    for t in range(T):
        if t > 0:
            m = F @ m_f[t - 1] + G @ actions[t - 1]
            P = F @ P_f[t - 1] @ F.T + Q
        m_p[t], P_p[t] = m, P
        # information form keeps high-dimensional frames cheap
        info = np.linalg.inv(P) + HtRinvH
        P_post = np.linalg.inv(info)
        P_post = 0.5 * (P_post + P_post.T)
        innov = frames[t] - c - H @ m
        m_f[t] = m + P_post @ (H.T @ (Rinv * innov))
        P_f[t] = P_post

    m_s = m_f.copy()
    P_s = P_f.copy()
    for t in range(T - 2, -1, -1):
        J = P_f[t] @ F.T @ np.linalg.inv(P_p[t + 1])
        m_s[t] = m_f[t] + J @ (m_s[t + 1] - m_p[t + 1])
        P_s[t] = P_f[t] + J @ (P_s[t + 1] - P_p[t + 1]) @ J.T
    return m_s
