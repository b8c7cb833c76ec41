"""Evaluation reports: mean TGOSPA with decomposition and TAA, each with a
normal-approximation 95% interval over scenes."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from ..dda import DeepDataAssociator, match_tracks_to_objects
from ..metrics import TgospaParams, all_miss_cost, taa, tgospa
from ..partitioner import partition, partition_by_labels
from ..simkit import Scene, simulate_scene
from ..smoother import DeepSmoother, ExtractedTrajectory, TrajectoryEstimate, ds_forward, extract_trajectories
from .config import RunConfig
from .train import EVAL_STREAM, CheckpointError, associate, stream_rng

PREDICTED = "predicted"
GT_ASSOC = "gt-assoc"
MODES = (PREDICTED, GT_ASSOC)
Z95 = 1.959963984540054


def mean_ci(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return {"mean": None, "ci95": None, "n": 0}
    half = Z95 * v.std(ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    return {"mean": float(v.mean()), "ci95": float(half), "n": int(len(v))}


def eval_scenes(cfg: RunConfig, n: int) -> list[Scene]:
    task = cfg.task_config
    return [simulate_scene(task, stream_rng(cfg.seed, EVAL_STREAM, i), cfg.task_id) for i in range(n)]


@dataclass
class SceneScore:
    tgospa: dict
    baseline: float
    taa: Optional[float]


@torch.no_grad()
def score_scene_predicted(scene: Scene, dda: DeepDataAssociator, ds: DeepSmoother, params: TgospaParams) -> SceneScore:
    T = scene.config.T
    estimates: list[ExtractedTrajectory] = []
    accuracy = None
    if scene.measurements:
        A = associate(dda, [scene])[0]
        tracks = partition(A, scene.z, scene.times, T)
        if tracks:
            estimates = extract_trajectories(ds_forward(tracks, ds))
        # labels are read here only, to score the association
        match = match_tracks_to_objects(A, scene.labels, dda.cfg.clutter_target)
        accuracy = taa(A, scene.labels, match)
    res = tgospa(scene.truths, estimates, params, T=T)
    return SceneScore(res.to_dict(), all_miss_cost(scene.truths, params), accuracy)


@torch.no_grad()
def score_scene_gt(scene: Scene, ds: DeepSmoother, params: TgospaParams) -> SceneScore:
    """Smoother fed the true partition; per-object metric values are summed."""
    T = scene.config.T
    truths = {tr.object_id: tr for tr in scene.truths}
    totals = {"total": 0.0, "loc": 0.0, "miss": 0.0, "false": 0.0, "switch": 0.0}
    baseline = 0.0
    if scene.measurements:
        tracks = partition_by_labels(scene.labels, scene.z, scene.times, T)
        if tracks:
            est = ds_forward(tracks, ds)
            for i, track in enumerate(tracks):
                truth = truths[track.source_column]
                single = _component(est, i)
                res = tgospa([truth], extract_trajectories(single), params, T=T)
                for key, value in res.to_dict().items():
                    totals[key] += value
                baseline += all_miss_cost([truth], params)
    return SceneScore(totals, baseline, None)


def _component(est: TrajectoryEstimate, i: int) -> TrajectoryEstimate:
    return TrajectoryEstimate(est.x_hat[i : i + 1], est.p_logit[i : i + 1], est.p_bar_logit[i : i + 1])


def evaluate(
    cfg: RunConfig,
    dda: Optional[DeepDataAssociator],
    ds: DeepSmoother,
    n_scenes: Optional[int] = None,
    mode: str = PREDICTED,
) -> dict:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if ds.cfg != cfg.ds_config() or (mode == PREDICTED and (dda is None or dda.cfg != cfg.dda_config())):
        raise CheckpointError("checkpoints do not match the task/model configuration")
    n = n_scenes or cfg.eval.scenes
    params = cfg.eval.tgospa_params()
    scores = []
    for scene in eval_scenes(cfg, n):
        if mode == PREDICTED:
            scores.append(score_scene_predicted(scene, dda, ds, params))
        else:
            scores.append(score_scene_gt(scene, ds, params))
    return build_report(cfg, mode, scores)


@torch.no_grad()
def association_accuracy(cfg: RunConfig, dda: DeepDataAssociator, n_scenes: Optional[int] = None) -> dict:
    """TAA of the associator alone over the evaluation stream."""
    if dda.cfg != cfg.dda_config():
        raise CheckpointError("associator does not match the task/model configuration")
    accs = []
    for scene in eval_scenes(cfg, n_scenes or cfg.eval.scenes):
        if not scene.measurements:
            continue
        A = associate(dda, [scene])[0]
        value = taa(A, scene.labels, match_tracks_to_objects(A, scene.labels, dda.cfg.clutter_target))
        if value is not None:
            accs.append(value)
    return mean_ci(accs)


def build_report(cfg: RunConfig, mode: str, scores: list[SceneScore]) -> dict:
    params = cfg.eval.tgospa_params()
    tg = mean_ci([s.tgospa["total"] for s in scores])
    for key in ("loc", "miss", "false", "switch"):
        tg[key] = float(np.mean([s.tgospa[key] for s in scores])) if scores else None
    accs = [s.taa for s in scores if s.taa is not None]
    return {
        "task": cfg.task_id,
        "mode": mode,
        "n_scenes": len(scores),
        "seed": cfg.seed,
        "tgospa_params": params.to_dict(),
        "tgospa": tg,
        "empty_baseline": mean_ci([s.baseline for s in scores]),
        "taa": mean_ci(accs) if mode == PREDICTED else None,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


CSV_FIELDS = ["task", "mode", "n_scenes", "p", "c", "gamma", "tgospa", "tgospa_ci95", "loc", "miss", "false",
              "switch", "empty_baseline", "taa", "taa_ci95"]


def report_csv(reports: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        tg, acc = r["tgospa"], r["taa"] or {}
        w.writerow({
            "task": r["task"], "mode": r["mode"], "n_scenes": r["n_scenes"],
            "p": r["tgospa_params"]["p"], "c": r["tgospa_params"]["c"], "gamma": r["tgospa_params"]["gamma"],
            "tgospa": tg["mean"], "tgospa_ci95": tg["ci95"], "loc": tg["loc"], "miss": tg["miss"],
            "false": tg["false"], "switch": tg["switch"], "empty_baseline": r["empty_baseline"]["mean"],
            "taa": acc.get("mean"), "taa_ci95": acc.get("ci95"),
        })
    return buf.getvalue()
