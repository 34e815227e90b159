"""Closed-loop episode execution and per-episode ground-truth scoring."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..env import Controller, EnvConfig, reset
from ..noise import Corruptor, NoiseSpec
from ..rejection import Verdict
from .agents import Agent


@dataclass
class EpisodeResult:
    ret: float
    surprises: list = field(default_factory=list)
    excluded: int = 0  # corrupted (step, sensor) pairs the selector masked
    corrupted_pairs: int = 0
    tp: int = 0  # rejected steps that were corrupted
    fp: int = 0
    fn: int = 0
    steps: list = field(default_factory=list)  # per-step records when verbose

    @property
    def mean_surprise(self) -> float:
        return float(np.mean(self.surprises)) if self.surprises else float("nan")


def run_episode(
    cfg: EnvConfig,
    agent: Agent,
    specs: tuple[NoiseSpec, ...] = (),
    seed: int = 0,
    verbose: bool = False,
) -> EpisodeResult:
    """One episode; ``seed`` fixes both the environment and the corruption stream."""
    env_seed, noise_seed = np.random.SeedSequence(seed).generate_state(2)
    env, rec = reset(cfg, int(env_seed))
    corrupt = Corruptor(specs, cfg.n_sensors, cfg.episode_length + 1, int(noise_seed)) if specs else None
    agent.reset()
    res = EpisodeResult(ret=0.0)
    for t in range(cfg.episode_length):
        bundle = corrupt(rec.bundle) if corrupt else rec.bundle
        action, info = agent.act(bundle)
        rec = env.step(action)
        res.ret += rec.reward
        res.surprises.append(info.surprise)

        hit = corrupt.log.applied_at(t) if corrupt else set()
        if info.masked is not None:
            res.corrupted_pairs += len(hit)
            res.excluded += sum(1 for s in hit if info.masked[s])
        if info.verdict is not None:
            rejected = info.verdict is Verdict.REJECT
            if rejected and hit:
                res.tp += 1
            elif rejected:
                res.fp += 1
            elif hit:
                res.fn += 1
        if verbose:
            step = {"step": t, "reward": rec.reward, "surprise": info.surprise, "corrupted": sorted(hit)}
            if info.masked is not None:
                step["mask"] = "".join("1" if m else "0" for m in info.masked)
            if info.decision is not None:
                step.update(info.decision.log_record(t))
            res.steps.append(step)
    return res


def run_random_episode(cfg: EnvConfig, seed: int) -> float:
    """Return of uniformly random actions in the action box."""
    env_seed, act_seed = np.random.SeedSequence(seed).generate_state(2)
    env, _ = reset(cfg, int(env_seed))
    rng = np.random.default_rng(int(act_seed))
    total = 0.0
    for _ in range(cfg.episode_length):
        total += env.step(rng.uniform(-cfg.action_limit, cfg.action_limit, cfg.action_dim)).reward
    return total


def run_oracle_episode(cfg: EnvConfig, seed: int, controller: Controller | None = None) -> float:
    """Return of the feedback controller acting on the true state."""
    controller = controller or Controller.for_env(cfg)
    env_seed, _ = np.random.SeedSequence(seed).generate_state(2)
    env, _ = reset(cfg, int(env_seed))
    total = 0.0
    for _ in range(cfg.episode_length):
        total += env.step(controller(env.state)).reward
    return total
