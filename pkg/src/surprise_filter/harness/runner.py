"""Pipeline stages: collect, fit, calibrate, eval, compare, and the full sweep.

Every stage derives its random streams from the master seed through
:func:`stream_seed`, so a stage's output depends only on the config and
seed, never on which stages ran before it in the same process.

Evaluation uses common random numbers: episode ``e`` of every cell and
every agent starts from the same environment seed and, for a given
failed-sensor count, corrupts the same sensors.
"""
from __future__ import annotations

import csv
import io
import json
import zipfile
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from ..env import Controller, EnvConfig, linear_system, reset
from ..errors import ConfigError, GuardError
from ..noise import Corruptor, NoiseSpec
from ..rejection import GateConfig, calibrate
from ..selection import (
    DropoutPolicy,
    SelectionConfig,
    brute_force_select,
    select_representation,
)
from ..sensors import ObservationBundle, SensorFrame
from ..worldmodel import Augmentation, Episode, WorldModel, fit
from ..worldmodel.io import load, save
from ..worldmodel.model import sequence_step
from .agents import make_agent
from .config import RunConfig
from .episodes import run_episode
from .metrics import MetricsRow, csv_emit, jsonl_emit, ratio

STORE_FORMAT = "surprise_filter.store/1"
_STREAMS = {"collect": 1, "dropout": 2, "augment": 3, "calibrate": 4, "eval": 5, "targets": 6, "compare": 7}
COMPARE_MAX_SENSORS = 12
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def stream_seed(master: int, stream: str, *index: int) -> int:
    """Independent 32-bit seed for a named stream (and optional indices) under a master seed."""
    return int(np.random.SeedSequence([master, _STREAMS[stream], *index]).generate_state(1)[0])


# ---------------------------------------------------------------- collect


def explore_episodes(
    env_cfg: EnvConfig,
    n: int,
    seed: int,
    goal_period: int = 20,
    dither: float = 0.5,
    goal_range: tuple[float, float] = (-1.0, 1.0),
) -> list[Episode]:
    """Clean episodes under the feedback controller steering to goals redrawn every ``goal_period`` steps.

    Gaussian dither on the actions keeps the data exciting in every
    direction. Bundle ``t`` is followed by ``actions[t]``; the final action
    is zero and the first reward is 0.
    """
    ctrl = Controller.for_env(env_cfg)
    rng = np.random.default_rng(seed)
    lo, hi = goal_range
    episodes = []
    for _ in range(n):
        env, rec = reset(env_cfg, int(rng.integers(2**31)))
        bundles, actions, rewards = [rec.bundle], [], [0.0]
        goal = env_cfg.goal
        for t in range(env_cfg.episode_length):
            if t % goal_period == 0:
                goal = np.zeros(env_cfg.state_dim)
                goal[: env_cfg.action_dim] = rng.uniform(lo, hi, env_cfg.action_dim)
            a = -ctrl.K @ (env.state - goal) + dither * rng.standard_normal(env_cfg.action_dim)
            a = np.clip(a, -env_cfg.action_limit, env_cfg.action_limit)
            actions.append(a)
            rec = env.step(a)
            bundles.append(rec.bundle)
            rewards.append(rec.reward)
        actions.append(np.zeros(env_cfg.action_dim))
        episodes.append(Episode(tuple(bundles), np.array(actions), np.array(rewards)))
    return episodes


def _write_npz(path: Path, arrays: dict) -> None:
    # np.savez stamps entries with the current time; fixed stamps keep stores byte-identical
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH), buf.getvalue())


def save_store(episodes: list[Episode], path, fingerprint: str) -> Path:
    path = Path(path)
    layout = episodes[0].bundles[0].shapes
    arrays = {
        "episode": np.concatenate([np.full(len(e), i) for i, e in enumerate(episodes)]),
        "step": np.concatenate([np.array([b.step_index for b in e.bundles]) for e in episodes]),
        "actions": np.vstack([e.actions for e in episodes]),
        "rewards": np.concatenate([e.rewards for e in episodes]),
        "meta": np.frombuffer(
            json.dumps({"format": STORE_FORMAT, "fingerprint": fingerprint, "layout": layout}).encode(), np.uint8
        ),
    }
    for i in range(len(layout)):
        arrays[f"sensor_{i}"] = np.vstack([b.frames[i].values for e in episodes for b in e.bundles])
    try:
        _write_npz(path, arrays)
    except OSError as exc:
        raise OSError(f"cannot write trajectory store {path}: {exc}") from exc
    return path


def load_store(path) -> tuple[list[Episode], dict]:
    path = Path(path)
    try:
        data = np.load(path, allow_pickle=False)
    except OSError as exc:
        raise OSError(f"cannot read trajectory store {path}: {exc}") from exc
    with data:
        meta = json.loads(data["meta"].tobytes().decode())
        if meta.get("format") != STORE_FORMAT:
            raise ConfigError(f"{path}: not a trajectory store")
        layout = tuple(tuple(s) for s in meta["layout"])
        ep, step = data["episode"], data["step"]
        actions, rewards = data["actions"], data["rewards"]
        sensors = [data[f"sensor_{i}"] for i in range(len(layout))]
    episodes = []
    for i in np.unique(ep):
        rows = np.flatnonzero(ep == i)
        bundles = tuple(
            ObservationBundle(
                tuple(SensorFrame(j, layout[j], sensors[j][r]) for j in range(len(layout))), int(step[r])
            )
            for r in rows
        )
        episodes.append(Episode(bundles, actions[rows], rewards[rows]))
    return episodes, meta


def run_collect(cfg: RunConfig, out) -> Path:
    out = _outdir(out)
    env_cfg = cfg.env_config()
    eps = explore_episodes(
        env_cfg, cfg.collect.episodes, stream_seed(cfg.seed, "collect"), cfg.collect.goal_period, cfg.collect.dither
    )
    return save_store(eps, out / "store.npz", cfg.store_fingerprint())


# ---------------------------------------------------------------- fit


def needed_models(cfg: RunConfig) -> tuple[str, ...]:
    names = ["base"]
    if {"confident_representation", "brute_force"} & set(cfg.agents):
        names.append("dropout")
    if "augmented" in cfg.agents:
        names.append("augmented")
    return tuple(names)


def fit_models(cfg: RunConfig, episodes: list[Episode]) -> dict[str, WorldModel]:
    env_cfg = cfg.env_config()
    system = linear_system(env_cfg)
    common = dict(
        dims=cfg.model.dims,
        ridge=cfg.model.ridge,
        mask_as_zero_evidence=cfg.model.mask_as_zero_evidence,
        holdout_fraction=cfg.model.holdout_fraction,
        rollout_passes=cfg.model.rollout_passes,
    )
    no_dropout = DropoutPolicy(enabled=False, mask_value=cfg.dropout.mask_value)
    models = {}
    for name in needed_models(cfg):
        if name == "base":
            models[name] = fit(episodes, system, no_dropout, **common)
        elif name == "dropout":
            policy = DropoutPolicy(cfg.dropout.enabled, cfg.dropout.mask_value, stream_seed(cfg.seed, "dropout"))
            models[name] = fit(episodes, system, policy, **common)
        else:
            aug = Augmentation(cfg.augment.intensity, cfg.augment.fraction, stream_seed(cfg.seed, "augment"))
            models[name] = fit(episodes, system, no_dropout, augment=aug, **common)
    return models


def run_fit(cfg: RunConfig, out, store=None) -> dict[str, WorldModel]:
    out = _outdir(out)
    episodes, meta = load_store(store or out / "store.npz")
    if meta["fingerprint"] != cfg.store_fingerprint():
        raise ConfigError("trajectory store was collected under a different env/collect config or seed")
    models = fit_models(cfg, episodes)
    for name, m in models.items():
        save(m, out / f"model_{name}.json", config=cfg.to_dict(), seed=cfg.seed)
    return models


def load_models(out) -> dict[str, WorldModel]:
    out = Path(out)
    models = {p.stem[len("model_") :]: load(p) for p in sorted(out.glob("model_*.json"))}
    if "base" not in models:
        raise FileNotFoundError(f"no fitted base model in {out}; run `fit` first")
    return models


# ---------------------------------------------------------------- calibrate


def calibrate_gate(cfg: RunConfig, model: WorldModel) -> GateConfig:
    g = cfg.gate
    if g.tau is not None:
        gate = GateConfig(g.tau, g.tau if g.tau_d is None else g.tau_d, g.score, g.denoiser, g.alpha)
    else:
        clean = explore_episodes(
            cfg.env_config(),
            g.calibration_episodes,
            stream_seed(cfg.seed, "calibrate"),
            cfg.collect.goal_period,
            cfg.collect.dither,
        )
        stream = [b for e in clean for b in e.bundles]
        actions = np.vstack([e.actions for e in clean])
        gate = calibrate(model, stream, score=g.score, actions=actions, k_reject=g.k_reject, k_denoise=g.k_denoise)
        gate = GateConfig(gate.tau, gate.tau_d, g.score, g.denoiser, g.alpha)
    return gate.strict() if g.strict else gate


def save_gate(gate: GateConfig, path) -> Path:
    path = Path(path)
    doc = {k: getattr(gate, k) for k in ("tau", "tau_d", "score", "denoiser", "alpha", "replay_cap")}
    path.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_gate(path) -> GateConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no gate thresholds at {path}; run `calibrate` first")
    return GateConfig(**json.loads(path.read_text(encoding="utf-8")))


def run_calibrate(cfg: RunConfig, out, models=None) -> GateConfig:
    out = _outdir(out)
    models = models or load_models(out)
    gate = calibrate_gate(cfg, models["base"])
    save_gate(gate, out / "gate.json")
    return gate


# ---------------------------------------------------------------- eval


@dataclass(frozen=True)
class Cell:
    kind: str
    intensity: float
    proportion: float
    failed: int
    targets: tuple | None = None  # fixed targets for explicit specs; else drawn per episode


def cells(cfg: RunConfig, n_sensors: int) -> list[Cell]:
    """Explicit noise specs, or the cartesian product of the sweep grids."""
    if cfg.noise:
        return [Cell(s.kind, s.intensity, s.proportion, len(s.target_sensors), s.target_sensors) for s in cfg.noise]
    max_failed = max(1, n_sensors - 1)  # keep one clean sensor whenever there is more than one
    for f in cfg.sweep.failed:
        if f > max_failed:
            raise ConfigError(f"failed={f} would leave no clean sensor among {n_sensors}")
    s = cfg.sweep
    return [Cell(k, i, p, f) for k, i, p, f in product(s.kinds, s.intensities, s.proportions, s.failed)]


def episode_specs(cfg: RunConfig, cell: Cell, episode: int, n_sensors: int) -> tuple[NoiseSpec, ...]:
    if cell.targets is not None:
        return (NoiseSpec(cell.kind, cell.intensity, cell.proportion, cell.targets),)
    if cell.failed == 0:
        return ()
    rng = np.random.default_rng(stream_seed(cfg.seed, "targets", episode, cell.failed))
    targets = tuple(sorted(int(s) for s in rng.choice(n_sensors, cell.failed, replace=False)))
    return (NoiseSpec(cell.kind, cell.intensity, cell.proportion, targets),)


def build_agents(cfg: RunConfig, env_cfg: EnvConfig, models: dict, gate: GateConfig | None):
    ctrl = Controller.for_env(env_cfg)
    sel = SelectionConfig(cfg.selection.depth, tuple(cfg.selection.required_sensors))
    return [make_agent(name, models, ctrl, sel, gate) for name in cfg.agents]


def evaluate_cell(cfg, env_cfg, agent, cell: Cell, log_path=None) -> MetricsRow:
    n = cfg.sweep.episodes
    results = []
    for e in range(n):
        specs = episode_specs(cfg, cell, e, env_cfg.n_sensors)
        res = run_episode(env_cfg, agent, specs, stream_seed(cfg.seed, "eval", e), verbose=log_path is not None)
        results.append(res)
        if log_path is not None:
            head = {"agent": agent.name, "kind": cell.kind, "intensity": cell.intensity,
                    "proportion": cell.proportion, "failed": cell.failed, "episode": e}
            jsonl_emit(({**head, **s} for s in res.steps), log_path)
    rets = np.array([r.ret for r in results])
    surprises = np.concatenate([r.surprises for r in results])
    selects = agent.name in ("confident_representation", "brute_force")
    gates = agent.name == "rejection_gate"
    tp, fp, fn = (sum(getattr(r, k) for r in results) for k in ("tp", "fp", "fn"))
    return MetricsRow(
        agent=agent.name,
        kind=cell.kind,
        intensity=float(cell.intensity),
        proportion=float(cell.proportion),
        failed=int(cell.failed),
        ret_mean=float(rets.mean()),
        ret_std=float(rets.std(ddof=1)) if n > 1 else 0.0,
        surprise_mean=float(surprises.mean()),
        sel_acc=ratio(sum(r.excluded for r in results), sum(r.corrupted_pairs for r in results)) if selects else None,
        rej_prec=ratio(tp, tp + fp) if gates else None,
        rej_rec=ratio(tp, tp + fn) if gates else None,
        episodes=n,
    )


def run_eval(cfg: RunConfig, out, models=None, gate=None) -> list[MetricsRow]:
    out = _outdir(out)
    models = models or load_models(out)
    if gate is None and "rejection_gate" in cfg.agents:
        gate = load_gate(out / "gate.json")
    missing = [m for m in needed_models(cfg) if m not in models]
    if missing:
        raise FileNotFoundError(f"models {missing} not fitted in {out}; rerun `fit` with these agents")
    env_cfg = cfg.env_config()
    log_path = None
    if cfg.verbose:
        log_path = out / "steps.jsonl"
        log_path.write_text("", encoding="utf-8")
    rows = []
    agents = build_agents(cfg, env_cfg, models, gate)
    for cell in cells(cfg, env_cfg.n_sensors):
        for agent in agents:
            rows.append(evaluate_cell(cfg, env_cfg, agent, cell, log_path))
    csv_emit(rows, out / "metrics.csv")
    write_run_meta(cfg, out, models, gate)
    return rows


def write_run_meta(cfg: RunConfig, out: Path, models: dict, gate: GateConfig | None) -> Path:
    """Settings that shape the results but are not visible in the metrics table."""
    base = models["base"]
    doc = {
        "seed": cfg.seed,
        "store_fingerprint": cfg.store_fingerprint(),
        "reset_policy": "replay",
        "replay_cap": None if gate is None else gate.replay_cap,
        "gate": None if gate is None else {"tau": gate.tau, "tau_d": gate.tau_d, "score": gate.score,
                                           "denoiser": gate.denoiser, "alpha": gate.alpha},
        "var_floor": base.meta.get("var_floor"),
        "ridge": base.meta.get("ridge"),
        "mask_as_zero_evidence": cfg.model.mask_as_zero_evidence,
        "config": cfg.to_dict(),
    }
    path = out / "run_meta.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- compare


@dataclass(frozen=True)
class CompareRow:
    kind: str
    intensity: float
    steps: int
    gap_median: float
    gap_mean: float
    agreement: float
    greedy_evals: int
    brute_evals: int


def brute_force_evaluations(M: int, required=()) -> int:
    required = set(required)
    return 2 ** (M - len(required)) - (0 if required else 1)


def relative_gap(greedy: float, optimum: float) -> float:
    if optimum > 0:
        return (greedy - optimum) / optimum
    return 0.0 if greedy <= optimum else float("inf")


def compare_kind(cfg: RunConfig, env_cfg: EnvConfig, model: WorldModel, kind: str, log: list | None = None) -> CompareRow:
    """Greedy and exhaustive selection at the same contexts along closed-loop episodes.

    The confident agent drives the episode with its greedy choice; at each
    step the exhaustive search runs on the identical context and bundle.
    Episode ``e`` fails ``1 + e % (M - 1)`` sensors at the configured intensity.
    """
    M = env_cfg.n_sensors
    if M > COMPARE_MAX_SENSORS:
        raise GuardError(f"compare runs exhaustive search; {M} sensors exceeds {COMPARE_MAX_SENSORS}")
    sel = SelectionConfig(cfg.selection.depth, tuple(cfg.selection.required_sensors))
    ctrl = Controller.for_env(env_cfg)
    gaps, agree, g_evals, b_evals = [], [], set(), set()
    for e in range(cfg.compare.episodes):
        failed = 1 + e % max(1, M - 1)
        rng = np.random.default_rng(stream_seed(cfg.seed, "compare", e))
        targets = tuple(sorted(int(s) for s in rng.choice(M, failed, replace=False)))
        cell = Cell(kind, cfg.compare.intensity, 1.0, failed, targets)
        specs = episode_specs(cfg, cell, e, M)
        env_seed, noise_seed = np.random.SeedSequence(stream_seed(cfg.seed, "eval", e)).generate_state(2)
        env, rec = reset(env_cfg, int(env_seed))
        corrupt = Corruptor(specs, M, env_cfg.episode_length + 1, int(noise_seed))
        h, z, a = model.h0, None, None
        for t in range(env_cfg.episode_length):
            bundle = corrupt(rec.bundle)
            if z is not None:
                h = sequence_step(model, h, z, a)
            g = select_representation(model, h, bundle, sel)
            b = brute_force_select(model, h, bundle, sel.required_sensors)
            gap = relative_gap(g.chosen_surprise, b.chosen_surprise)
            gaps.append(gap)
            agree.append(g.chosen_mask == b.chosen_mask)
            g_evals.add(g.evaluations)
            b_evals.add(b.evaluations)
            if log is not None:
                for selector, res in (("greedy", g), ("brute_force", b)):
                    log.extend({"kind": kind, "episode": e, "selector": selector, **r} for r in res.ledger_records(t))
            z = g.chosen_z
            a = ctrl(z)
            rec = env.step(a)
    if len(g_evals) != 1 or len(b_evals) != 1:
        raise RuntimeError(f"evaluation counts varied across steps: {g_evals}, {b_evals}")
    return CompareRow(
        kind,
        float(cfg.compare.intensity),
        len(gaps),
        float(np.median(gaps)),
        float(np.mean(gaps)),
        float(np.mean(agree)),
        g_evals.pop(),
        b_evals.pop(),
    )


def run_compare(cfg: RunConfig, out, model: WorldModel | None = None) -> list[CompareRow]:
    out = _outdir(out)
    if model is None:
        models = load_models(out)
        model = models.get("dropout", models["base"])
    env_cfg = cfg.env_config()
    log = [] if cfg.verbose else None
    rows = [compare_kind(cfg, env_cfg, model, k, log) for k in cfg.compare.kinds]
    with open(out / "compare.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CompareRow.__dataclass_fields__)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.__dict__.values()])
    if log is not None:
        jsonl_emit(log, out / "compare_steps.jsonl", append=False)
    return rows


# ---------------------------------------------------------------- sweep


def run_sweep(cfg: RunConfig, out) -> list[MetricsRow]:
    """collect, fit, calibrate and eval in one go."""
    out = _outdir(out)
    run_collect(cfg, out)
    models = run_fit(cfg, out)
    gate = run_calibrate(cfg, out, models) if "rejection_gate" in cfg.agents else None
    return run_eval(cfg, out, models, gate)


def _outdir(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out
