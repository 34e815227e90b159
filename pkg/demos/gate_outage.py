"""A scripted glare outage on the one-camera task, step by step through the gate.

    python demos/gate_outage.py
"""
from surprise_filter.env import linear_system, single_sensor_config
from surprise_filter.harness.runner import explore_episodes
from surprise_filter.noise import corrupt_glare
from surprise_filter.rejection import GateState, calibrate, gate_step
from surprise_filter.selection import DropoutPolicy
from surprise_filter.worldmodel import fit


def main():
    cfg = single_sensor_config()
    model = fit(explore_episodes(cfg, 24, seed=0), linear_system(cfg), DropoutPolicy(False))
    clean = explore_episodes(cfg, 3, seed=1)
    gate = calibrate(model, [b for e in clean for b in e.bundles]).strict()
    print(f"tau = {gate.tau:.4f}")

    e = explore_episodes(cfg, 1, seed=2)[0]
    state = GateState.initial()
    for t in range(14):
        b = e.bundles[t]
        if 4 <= t <= 8:
            b = b.replace_frame(0, corrupt_glare(b.frames[0], 1.0).values)
        d, state = gate_step(model, gate, state, b, e.actions[t - 1] if t else None)
        flag = " context reset" if d.context_reset else ""
        print(f"step {t:2d}  score {d.score:9.4f}  {d.verdict.value:15s} {d.mode.value:12s}{flag}")


if __name__ == "__main__":
    main()
