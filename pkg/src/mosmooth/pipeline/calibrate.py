"""Desk-scale calibration: train the pipeline on a pinned seed, measure the
quantities the acceptance thresholds are stated in, and sweep clutter."""
from __future__ import annotations

import math
import time
from typing import Sequence

from .config import RunConfig
from .evaluate import PREDICTED, association_accuracy, evaluate
from .train import train_dda, train_ds

CLUTTER_LEVELS = (5e-3, 1e-2, 2e-2)


def with_clutter(cfg: RunConfig, lambda_c: float) -> RunConfig:
    task = cfg.task_config.model_copy(update={"lambda_c": lambda_c})
    return cfg.model_copy(update={"task": task})


def learning_run(cfg: RunConfig, n_scenes: int | None = None) -> dict:
    """Train both stages and evaluate; returns the measured quantities and the
    trained models."""
    start = time.perf_counter()
    dda, dda_log = train_dda(cfg)
    ds, ds_log = train_ds(cfg, dda)
    report = evaluate(cfg, dda, ds, n_scenes, PREDICTED)
    tg, base = report["tgospa"]["mean"], report["empty_baseline"]["mean"]
    return {
        "dda": dda,
        "ds": ds,
        "metrics": {
            "ln_B": math.log(cfg.model.B),
            "dda_loss_step0": dda_log.losses[0],
            "dda_loss_final_moving_average": dda_log.moving_average[-1],
            "ds_loss_final_moving_average": ds_log.moving_average[-1],
            "taa": report["taa"],
            "tgospa": report["tgospa"],
            "empty_baseline": report["empty_baseline"],
            "tgospa_reduction": 1.0 - tg / base,
            "seconds": time.perf_counter() - start,
        },
    }


def clutter_trend(cfg: RunConfig, levels: Sequence[float] = CLUTTER_LEVELS, n_scenes: int | None = None,
                  trained: dict | None = None) -> list[dict]:
    """Associator TAA after training at each clutter level. ``trained`` maps a
    level to an already trained associator for the same config."""
    rows = []
    for lam in levels:
        run = with_clutter(cfg, lam)
        dda = (trained or {}).get(lam)
        if dda is None:
            dda, _ = train_dda(run)
        rows.append({"lambda_c": lam, "taa": association_accuracy(run, dda, n_scenes)})
    return rows
