"""Shared fixtures. Fitted models are session-scoped: fitting is the slow part."""
import numpy as np
import pytest

from surprise_filter import env as E
from surprise_filter.harness.runner import explore_episodes
from surprise_filter.selection import DropoutPolicy
from surprise_filter.sensors import ObservationBundle
from surprise_filter.worldmodel import WorldModel, fit

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[ACCEPTANCE_LINES].append(line)
        return passed

    return record


def random_bundle(rng, shapes, step=0, lo=0.0, hi=1.0):
    return ObservationBundle.from_arrays([rng.uniform(lo, hi, s) for s in shapes], step)


def random_model(rng, layout, d=3, k=3, a=2, enc_var=None, prior_var=None, **kw):
    """A well-conditioned model with seeded random weights, for oracle checks."""
    sizes = [int(np.prod(s)) for s in layout]
    return WorldModel(
        A=0.3 * rng.standard_normal((d, d)),
        B=0.3 * rng.standard_normal((d, k)),
        C=0.3 * rng.standard_normal((d, a)),
        Wp=rng.standard_normal((k, d)),
        bp=rng.standard_normal(k),
        prior_var=rng.uniform(0.5, 2.0, k) if prior_var is None else np.asarray(prior_var, float),
        enc_W=tuple(rng.standard_normal((k, o)) / np.sqrt(o) for o in sizes),
        enc_b=tuple(rng.standard_normal(k) for _ in sizes),
        enc_var=tuple(rng.uniform(0.2, 1.0, k) if enc_var is None else np.full(k, enc_var) for _ in sizes),
        dec_W=tuple(rng.standard_normal((o, d + k)) for o in sizes),
        dec_b=tuple(rng.standard_normal(o) for o in sizes),
        rew_w=rng.standard_normal(d + k),
        rew_b=float(rng.standard_normal()),
        h0=rng.standard_normal(d),
        layout=tuple(tuple(s) for s in layout),
        **kw,
    )


@pytest.fixture(scope="session")
def default_cfg():
    return E.default_config()


@pytest.fixture(scope="session")
def train_episodes(default_cfg):
    return explore_episodes(default_cfg, 12, seed=0)


@pytest.fixture(scope="session")
def test_episodes(default_cfg):
    return explore_episodes(default_cfg, 3, seed=99)


@pytest.fixture(scope="session")
def base_model(default_cfg, train_episodes):
    return fit(train_episodes, E.linear_system(default_cfg), DropoutPolicy(enabled=False), rollout_passes=2)


@pytest.fixture(scope="session")
def dropout_model(default_cfg, train_episodes):
    return fit(train_episodes, E.linear_system(default_cfg), DropoutPolicy(seed=1), rollout_passes=2)


@pytest.fixture(scope="session")
def identity_setup():
    cfg = E.identity_config(episode_length=30)
    eps = explore_episodes(cfg, 8, seed=3, goal_period=10, dither=0.3, goal_range=(0.2, 0.8))
    model = fit(eps[:6], E.linear_system(cfg), DropoutPolicy(enabled=False), ridge=1e-10, holdout_fraction=0.2)
    return cfg, eps, model


@pytest.fixture(scope="session")
def single_setup():
    """Wide-camera task: config, fitted model, calibrated strict gate, fresh clean episodes."""
    from surprise_filter.rejection import calibrate

    cfg = E.single_sensor_config()
    model = fit(explore_episodes(cfg, 12, seed=0), E.linear_system(cfg), DropoutPolicy(enabled=False), rollout_passes=2)
    calib = [b for e in explore_episodes(cfg, 3, seed=50) for b in e.bundles]
    gate = calibrate(model, calib).strict()
    fresh = explore_episodes(cfg, 3, seed=77)
    return cfg, model, gate, fresh
