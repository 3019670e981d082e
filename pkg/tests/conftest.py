"""Shared fixtures; the expensive multi-seed experiment runs once per session."""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crosscert import (SmoothingConfig, TrainConfig, make_scm, run_experiment,
                       stream)
from crosscert.config import DatasetSection, scm_spec_from_config
from crosscert.evaluation import RadiusGrid, mean_curves
from crosscert.rng import KEY_DATA

EXPERIMENT_SEEDS = (0, 1, 2, 3, 4)
EXPERIMENT_VARIANTS = ("full", "no_invariance", "gaussian")


@pytest.fixture(scope="session")
def scm_experiment(tmp_path_factory):
    """Cross-domain benchmark: three variants, five seeds, full test env.

    Trains and certifies 15 models; a few minutes of wall time, shared by
    every test that needs the comparative numbers or the emitted artifacts.
    """
    out_dir = tmp_path_factory.mktemp("scm_experiment")
    section = DatasetSection()  # the shipped defaults
    dataset = make_scm(scm_spec_from_config(section), section.n_per_env,
                       stream(section.seed, KEY_DATA, 1))
    train_cfg = TrainConfig(penalty_weight=300.0, sigma_train=0.12,
                            learning_rate=0.0003, epochs=2000,
                            batch_size=4096, seed=0)
    smooth_cfg = SmoothingConfig(sigma=0.12, n0=100, n=10 ** 4, alpha=0.001,
                                 space="latent")
    grid = RadiusGrid.default()
    start = time.monotonic()
    summaries = run_experiment(dataset, train_cfg, smooth_cfg,
                               list(EXPERIMENT_VARIANTS), widths=[16, 16],
                               group_size=2, train_env_ids=[0, 1],
                               test_env_id=2, seeds=EXPERIMENT_SEEDS,
                               grid=grid, workers=1, out_dir=str(out_dir))
    elapsed = time.monotonic() - start
    by_variant = {}
    for summary in summaries:
        by_variant.setdefault(summary.variant, []).append(summary)
    return {
        "summaries": summaries,
        "by_variant": by_variant,
        "mean_acr": {v: float(np.mean([s.acr for s in group]))
                     for v, group in by_variant.items()},
        "curves": mean_curves(summaries, grid),
        "grid": grid,
        "train_cfg": train_cfg,
        "smooth_cfg": smooth_cfg,
        "dataset": dataset,
        "out_dir": out_dir,
        "elapsed_seconds": elapsed,
    }
