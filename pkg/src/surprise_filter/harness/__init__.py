"""Experiment orchestration: agents, episodes, metrics, the pipeline stages and the CLI."""
from .agents import AGENTS, Agent, make_agent
from .config import RunConfig, config_from_dict, load_config
from .episodes import EpisodeResult, run_episode, run_oracle_episode, run_random_episode
from .metrics import CSV_COLUMNS, MetricsRow, csv_emit, csv_read, jsonl_emit, metric_spearman
from .runner import (
    CompareRow,
    explore_episodes,
    fit_models,
    calibrate_gate,
    run_calibrate,
    run_collect,
    run_compare,
    run_eval,
    run_fit,
    run_sweep,
    stream_seed,
)
