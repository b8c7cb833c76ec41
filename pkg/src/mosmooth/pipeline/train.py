"""Two-stage training: the associator first, then the smoother on the frozen
associator's partitions."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .. import nnkit
from ..dda import CapacityError, DDAConfig, DeepDataAssociator, build_target_matrix, dda_loss, match_tracks_to_objects
from ..nnkit import DTYPE, AdamWState, PlateauHalver, adamw_step
from ..partitioner import partition
from ..simkit import Scene, simulate_scene
from ..smoother import DSConfig, DeepSmoother, ds_loss_from_targets, encode_tracks, truth_targets
from .config import RunConfig

log = logging.getLogger(__name__)

TRAIN_STREAM = 1
EVAL_STREAM = 2


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def stream_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


class SceneStream:
    """Deterministic supply of training scenes usable by the associator.

    Scenes without measurements, or with more objects than the associator
    can hold, are skipped.
    """

    def __init__(self, cfg: RunConfig, stream: int = TRAIN_STREAM):
        self.cfg = cfg
        self.task = cfg.task_config
        self.stream = stream
        self.index = 0
        dda = cfg.dda_config()
        self.capacity = dda.B - 1 if dda.clutter_target == "single_column" else dda.B

    def next(self) -> Scene:
        while True:
            scene = simulate_scene(self.task, stream_rng(self.cfg.seed, self.stream, self.index), self.cfg.task_id)
            self.index += 1
            if scene.measurements and len(set(scene.labels[scene.labels >= 0])) <= self.capacity:
                return scene

    def batch(self, size: int) -> list[Scene]:
        return [self.next() for _ in range(size)]


def pad_batch(scenes: list[Scene]):
    n_max = max(len(s.measurements) for s in scenes)
    z = np.zeros((len(scenes), n_max, 3))
    t = np.ones((len(scenes), n_max), dtype=int)
    mask = np.zeros((len(scenes), n_max), dtype=bool)
    for b, s in enumerate(scenes):
        n = len(s.measurements)
        z[b, :n] = s.z
        t[b, :n] = s.times
        mask[b, :n] = True
    return torch.from_numpy(z), torch.from_numpy(t), torch.from_numpy(mask)


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    moving_average: list[float] = field(default_factory=list)

    def record(self, loss: float, lr: float, avg: float) -> None:
        self.losses.append(loss)
        self.lrs.append(lr)
        self.moving_average.append(avg)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _optimise(model, loss_fn, steps: int, cfg: RunConfig, label: str) -> TrainLog:
    params = [p for p in model.parameters() if p.requires_grad]
    state = AdamWState.zeros_like(params)
    sched = PlateauHalver(cfg.train.lr, cfg.train.plateau_window, cfg.train.plateau_patience)
    history = TrainLog()
    for step in range(steps):
        model.train()
        loss = loss_fn()
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"{label} loss became {value} at step {step}")
        grads = nnkit.gradient_of(loss, params)
        lr = sched.lr
        adamw_step(params, grads, state, lr, weight_decay=cfg.train.weight_decay)
        sched.update(value)
        history.record(value, lr, sched.average)
        if cfg.train.log_every and step % cfg.train.log_every == 0:
            log.info("%s step %d loss %.4f avg %.4f lr %.2e", label, step, value, sched.average, lr)
    model.eval()
    return history


def batch_dda_loss(model: DeepDataAssociator, scenes: list[Scene], gen=None) -> torch.Tensor:
    z, t, mask = pad_batch(scenes)
    A = model(z, t, mask, gen)
    target = model.cfg.clutter_target
    total = torch.zeros((), dtype=DTYPE)
    for b, s in enumerate(scenes):
        n = len(s.measurements)
        A_b = A[b, :n]
        match = match_tracks_to_objects(A_b, s.labels, target)
        total = total + dda_loss(A_b, build_target_matrix(match, s.labels, target))
    return total / len(scenes)


def train_dda(cfg: RunConfig, out: Optional[Path] = None) -> tuple[DeepDataAssociator, TrainLog]:
    torch.manual_seed(cfg.seed)
    model = DeepDataAssociator(cfg.dda_config(), seed=cfg.seed)
    stream = SceneStream(cfg)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    history = _optimise(model, lambda: batch_dda_loss(model, stream.batch(cfg.train.dda_batch), gen),
                        cfg.train.dda_steps, cfg, "dda")
    if out is not None:
        save_model(Path(out) / "dda", model, cfg)
        (Path(out) / "dda_loss.json").write_text(history.to_json())
    return model, history


@torch.no_grad()
def associate(model: DeepDataAssociator, scenes: list[Scene]) -> list[np.ndarray]:
    model.eval()
    z, t, mask = pad_batch(scenes)
    A = model(z, t, mask).numpy()
    return [A[b, : len(s.measurements)] for b, s in enumerate(scenes)]


def batch_ds_loss(ds: DeepSmoother, dda: DeepDataAssociator, scenes: list[Scene], gen=None) -> torch.Tensor:
    T = ds.cfg.T
    target = dda.cfg.clutter_target
    feats, masks, states, alive, matched = [], [], [], [], []
    for s, A in zip(scenes, associate(dda, scenes)):
        tracks = partition(A, s.z, s.times, T)
        if not tracks:
            continue
        match = match_tracks_to_objects(A, s.labels, target)
        f, m = encode_tracks(tracks, T)
        st, al, ma = truth_targets(s.truths, [int(match.s_star[tr.source_column]) for tr in tracks], T)
        feats.append(f); masks.append(m); states.append(st); alive.append(al); matched.append(ma)
    if not feats:
        return torch.zeros((), dtype=DTYPE, requires_grad=True)
    est = ds(torch.from_numpy(np.concatenate(feats)), torch.from_numpy(np.concatenate(masks)), gen)
    loss = ds_loss_from_targets(est, np.concatenate(states), np.concatenate(alive), np.concatenate(matched))
    return loss / len(scenes)


def train_ds(cfg: RunConfig, dda: DeepDataAssociator, out: Optional[Path] = None) -> tuple[DeepSmoother, TrainLog]:
    if dda.cfg != cfg.dda_config():
        raise CheckpointError("associator checkpoint does not match the run configuration")
    for p in dda.parameters():
        p.requires_grad_(False)
    dda.eval()
    torch.manual_seed(cfg.seed)
    model = DeepSmoother(cfg.ds_config(), seed=cfg.seed + 7)
    stream = SceneStream(cfg)
    gen = torch.Generator().manual_seed(cfg.seed + 2)
    history = _optimise(model, lambda: batch_ds_loss(model, dda, stream.batch(cfg.train.ds_batch), gen),
                        cfg.train.ds_steps, cfg, "ds")
    if out is not None:
        save_model(Path(out) / "ds", model, cfg)
        (Path(out) / "ds_loss.json").write_text(history.to_json())
    return model, history


# -- checkpoints -------------------------------------------------------------------

def save_model(directory: Path, model, cfg: RunConfig) -> Path:
    kind = "dda" if isinstance(model, DeepDataAssociator) else "ds"
    meta = {"kind": kind, "model_config": asdict(model.cfg), "run_config": json.loads(cfg.model_dump_json())}
    return nnkit.save_checkpoint(directory, dict(model.state_dict()), meta)


def load_model(directory: Path):
    directory = Path(directory)
    if not (directory / nnkit.MANIFEST).exists():
        raise CheckpointError(f"no checkpoint at {directory}")
    tensors, meta = nnkit.load_checkpoint(directory)
    kind = meta.get("kind")
    mc = dict(meta["model_config"])
    if kind == "dda":
        mc["z_lo"] = tuple(mc["z_lo"])
        mc["z_hi"] = tuple(mc["z_hi"])
        model = DeepDataAssociator(DDAConfig(**mc))
    elif kind == "ds":
        model = DeepSmoother(DSConfig(**mc))
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    model.load_state_dict(tensors)
    model.eval()
    return model
