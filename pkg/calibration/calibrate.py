"""Record the desk-scale calibration run.

    python calibration/calibrate.py [--seed 0] [--out calibration/desk.json]

Trains the desk preset with the pinned seed, evaluates it, repeats associator
training at the other clutter levels, and writes the measured values next to
the acceptance thresholds.
"""
import argparse
import json
import logging
import math
import platform
from pathlib import Path

import torch

from mosmooth.pipeline.calibrate import CLUTTER_LEVELS, clutter_trend, learning_run
from mosmooth.pipeline.config import load_config

HERE = Path(__file__).resolve().parent


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=str(HERE / "desk.json"))
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config().model_copy(update={"seed": args.seed})
    cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"log_every": 1000})})
    run = learning_run(cfg)
    m = run["metrics"]
    trend = clutter_trend(cfg, trained={CLUTTER_LEVELS[0]: run["dda"]})
    taas = [row["taa"]["mean"] for row in trend]
    record = {
        "config": json.loads(cfg.model_dump_json()),
        "environment": {"python": platform.python_version(), "torch": torch.__version__},
        "measured": {**m, "clutter_trend": trend},
        "thresholds": {
            "taa_min": 0.85,
            "dda_loss_max": 0.5 * math.log(cfg.model.B),
            "tgospa_reduction_min": 0.25,
        },
        "passed": {
            "taa": m["taa"]["mean"] >= 0.85,
            "dda_loss": m["dda_loss_final_moving_average"] <= 0.5 * math.log(cfg.model.B),
            "tgospa_reduction": m["tgospa_reduction"] >= 0.25,
            "clutter_trend": all(a > b for a, b in zip(taas, taas[1:])),
        },
    }
    Path(args.out).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(json.dumps(record["passed"]))


if __name__ == "__main__":
    main()
