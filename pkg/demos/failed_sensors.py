"""Return under 1..5 fully glared sensors, base agent versus surprise-guided selection.

    python demos/failed_sensors.py [episodes]
"""
import sys

import numpy as np

from surprise_filter.env import Controller, default_config, linear_system
from surprise_filter.harness.agents import BaseAgent, ConfidentRepresentationAgent
from surprise_filter.harness.episodes import run_episode
from surprise_filter.harness.runner import explore_episodes
from surprise_filter.noise import NoiseSpec
from surprise_filter.selection import DropoutPolicy
from surprise_filter.worldmodel import fit


def main(episodes=10):
    cfg = default_config()
    train = explore_episodes(cfg, 24, seed=0)
    system = linear_system(cfg)
    base = fit(train, system, DropoutPolicy(False))
    dropout = fit(train, system, DropoutPolicy(True, seed=1))
    ctrl = Controller.for_env(cfg)
    agents = {"base": BaseAgent(base, ctrl), "confident": ConfidentRepresentationAgent(dropout, ctrl)}
    rng = np.random.default_rng(5)

    print(f"{'failed':>6} {'agent':>10} {'return':>12} {'excluded':>9}")
    for failed in range(0, cfg.n_sensors):
        targets = [tuple(sorted(rng.choice(cfg.n_sensors, failed, replace=False))) for _ in range(episodes)]
        for name, agent in agents.items():
            rets, excl, pairs = [], 0, 0
            for e in range(episodes):
                specs = (NoiseSpec("glare", 1.0, 1.0, targets[e]),) if failed else ()
                res = run_episode(cfg, agent, specs, seed=100 + e)  # same seeds for both agents
                rets.append(res.ret)
                excl, pairs = excl + res.excluded, pairs + res.corrupted_pairs
            rate = f"{excl / pairs:.2f}" if pairs and name == "confident" else "-"
            print(f"{failed:>6} {name:>10} {np.mean(rets):>12.1f} {rate:>9}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10)
