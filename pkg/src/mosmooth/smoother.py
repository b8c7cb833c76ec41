"""Deep smoother: one fixed-length track -> trajectory parameters
(states, per-step existence, trajectory existence), plus the matched
multi-Bernoulli negative log-likelihood and hard trajectory extraction."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dda import MatchResult
from .nnkit import DTYPE, Encoder, EncoderConfig, Linear, MLP
from .partitioner import Track
from .simkit import CLUTTER, GroundTruthTrajectory

P_BAR_THRESHOLD = 0.5
P_STEP_THRESHOLD = 0.8
SLOT_FEATURES = 4  # x, y, rdot, confidence


class TrackLengthError(ValueError):
    pass


class MissingMatchError(KeyError):
    pass


def preprocess_slot(z) -> np.ndarray:
    r, rdot, theta = np.asarray(z, dtype=float)
    return np.array([r * math.cos(theta), r * math.sin(theta), rdot])


@dataclass(frozen=True)
class DSConfig:
    d: int = 32
    n_h: int = 2
    N: int = 2
    ffn_hidden: int = 64
    dropout: float = 0.1
    T: int = 5
    state_hidden: int = 64
    state_layers: int = 3
    exist_hidden: int = 32
    exist_layers: int = 2
    # fixed output/input scales so unit-sized activations map to metres and m/s
    pos_scale: float = 10.0
    vel_scale: float = 4.0

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.d, self.n_h, self.N, self.ffn_hidden, self.dropout, max_positions=self.T)


def encode_tracks(tracks: Sequence[Track], T: int) -> tuple[np.ndarray, np.ndarray]:
    """Slot features (n_tracks, T, 4) and measured mask (n_tracks, T)."""
    feats = np.zeros((len(tracks), T, SLOT_FEATURES))
    mask = np.zeros((len(tracks), T), dtype=bool)
    for i, track in enumerate(tracks):
        if track.T != T:
            raise TrackLengthError(f"track has {track.T} slots, expected {T}")
        for t, slot in enumerate(track.slots):
            if slot.measured:
                feats[i, t, :3] = preprocess_slot(slot.z)
                feats[i, t, 3] = slot.confidence
                mask[i, t] = True
    return feats, mask


@dataclass
class TrajectoryEstimate:
    """Batched component parameters; index 0 runs over components."""

    x_hat: torch.Tensor  # (m, T, 4)
    p_logit: torch.Tensor  # (m, T)
    p_bar_logit: torch.Tensor  # (m,)
    source_columns: Optional[list[int]] = None

    @property
    def p(self) -> torch.Tensor:
        return torch.sigmoid(self.p_logit)

    @property
    def p_bar(self) -> torch.Tensor:
        return torch.sigmoid(self.p_bar_logit)

    def __len__(self) -> int:
        return self.x_hat.shape[0]

    @classmethod
    def from_probabilities(cls, x_hat, p, p_bar, source_columns=None) -> "TrajectoryEstimate":
        x_hat = torch.as_tensor(np.asarray(x_hat, dtype=float), dtype=DTYPE).reshape(-1, *np.shape(x_hat)[-2:])
        p = torch.as_tensor(np.asarray(p, dtype=float), dtype=DTYPE).reshape(x_hat.shape[0], -1)
        p_bar = torch.as_tensor(np.asarray(p_bar, dtype=float), dtype=DTYPE).reshape(-1)
        return cls(x_hat, torch.logit(p), torch.logit(p_bar), source_columns)


class DeepSmoother(nn.Module):
    def __init__(self, cfg: DSConfig, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.cfg = cfg
        self.project = Linear(SLOT_FEATURES, cfg.d, gen)
        self.dummy = nn.Parameter(torch.randn(cfg.d, generator=gen, dtype=DTYPE) * 0.02)
        self.encoder = Encoder(cfg.encoder_config(), gen)
        self.pos_head = MLP(cfg.d, cfg.state_hidden, 2, cfg.state_layers, gen)
        self.vel_head = MLP(cfg.d, cfg.state_hidden, 2, cfg.state_layers, gen)
        self.exist_head = MLP(cfg.d, cfg.exist_hidden, 1, cfg.exist_layers, gen)
        self.traj_head = MLP(SLOT_FEATURES * cfg.T, cfg.exist_hidden, 1, cfg.exist_layers, gen)
        self.register_buffer(
            "_in_scale",
            torch.tensor([cfg.pos_scale, cfg.pos_scale, cfg.vel_scale, 1.0], dtype=DTYPE),
            persistent=False,
        )

    def forward(self, feats, mask, gen=None) -> TrajectoryEstimate:
        feats = torch.as_tensor(feats, dtype=DTYPE)
        mask = torch.as_tensor(mask, dtype=torch.bool)
        m, T, _ = feats.shape
        if T != self.cfg.T:
            raise TrackLengthError(f"tracks have {T} slots, model expects {self.cfg.T}")
        scaled = feats / self._in_scale
        a = torch.where(mask[..., None], self.project(scaled), self.dummy.expand(m, T, -1))
        positions = torch.arange(T).expand(m, T)
        e = self.encoder(a, positions, None, gen)
        x_hat = torch.cat([self.pos_head(e) * self.cfg.pos_scale, self.vel_head(e) * self.cfg.vel_scale], dim=-1)
        p_logit = self.exist_head(e).squeeze(-1)
        flat = (scaled * mask[..., None]).reshape(m, -1)
        p_bar_logit = self.traj_head(flat).squeeze(-1)
        return TrajectoryEstimate(x_hat, p_logit, p_bar_logit)


def ds_forward(tracks: Sequence[Track], model: DeepSmoother) -> TrajectoryEstimate:
    feats, mask = encode_tracks(tracks, model.cfg.T)
    model.eval()
    est = model(torch.from_numpy(feats), torch.from_numpy(mask))
    est.source_columns = [t.source_column for t in tracks]
    return est


def truth_targets(
    truths: Sequence[GroundTruthTrajectory], object_ids: Sequence[int], T: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-component target states (m, T, 4), alive mask (m, T), matched flag (m,)."""
    by_id = {tr.object_id: tr for tr in truths}
    m = len(object_ids)
    states = np.zeros((m, T, 4))
    alive = np.zeros((m, T), dtype=bool)
    matched = np.zeros(m, dtype=bool)
    for i, obj in enumerate(object_ids):
        if obj == CLUTTER:
            continue
        if obj not in by_id:
            raise MissingMatchError(f"matched object {obj} has no ground-truth trajectory")
        tr = by_id[obj]
        matched[i] = True
        span = slice(tr.t_s - 1, tr.t_end)
        states[i, span] = tr.states
        alive[i, span] = True
    return states, alive, matched


def ds_loss_from_targets(est: TrajectoryEstimate, states, alive, matched) -> torch.Tensor:
    states = torch.as_tensor(states, dtype=DTYPE)
    alive = torch.as_tensor(alive, dtype=torch.bool)
    matched = torch.as_tensor(matched, dtype=torch.bool)
    log_p = F.logsigmoid(est.p_logit)
    log_not_p = F.logsigmoid(-est.p_logit)
    sq = ((est.x_hat - states) ** 2).sum(-1)
    per_step = torch.where(alive, sq - log_p, -log_not_p)
    matched_term = -F.logsigmoid(est.p_bar_logit) + per_step.sum(-1)
    unmatched_term = -F.logsigmoid(-est.p_bar_logit)
    return torch.where(matched, matched_term, unmatched_term).sum()


def ds_loss(
    est: TrajectoryEstimate,
    truths: Sequence[GroundTruthTrajectory],
    match: MatchResult,
    source_columns: Optional[Sequence[int]] = None,
) -> torch.Tensor:
    """Matched negative log-likelihood summed over components.

    Component ``i`` came from association column ``source_columns[i]``; its
    ground truth is the object that column was matched to, or none.
    """
    cols = source_columns if source_columns is not None else est.source_columns
    if cols is None or len(cols) != len(est):
        raise MissingMatchError("every component needs the association column it was built from")
    objects = [int(match.s_star[c]) for c in cols]
    states, alive, matched = truth_targets(truths, objects, est.x_hat.shape[1])
    return ds_loss_from_targets(est, states, alive, matched)


@dataclass
class ExtractedTrajectory:
    t_s: int
    states: np.ndarray  # (l+1, 4)
    p_bar: float = 1.0

    @property
    def t_end(self) -> int:
        return self.t_s + len(self.states) - 1

    def to_dict(self) -> dict:
        return {"p_bar": float(self.p_bar), "t_s": int(self.t_s), "states": [[float(v) for v in s] for s in self.states]}

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractedTrajectory":
        return cls(int(d["t_s"]), np.asarray(d["states"], dtype=float).reshape(-1, 4), float(d.get("p_bar", 1.0)))


def extract_trajectories(
    est: TrajectoryEstimate,
    p_bar_threshold: float = P_BAR_THRESHOLD,
    p_threshold: float = P_STEP_THRESHOLD,
) -> list[ExtractedTrajectory]:
    """Keep confident components and cut each to the contiguous span between
    its first and last confident step."""
    x_hat = est.x_hat.detach().cpu().numpy()
    p = est.p.detach().cpu().numpy()
    p_bar = est.p_bar.detach().cpu().numpy()
    out = []
    for i in range(len(p_bar)):
        if not p_bar[i] > p_bar_threshold:
            continue
        steps = np.flatnonzero(p[i] > p_threshold)
        if len(steps) == 0:
            continue
        first, last = steps[0], steps[-1]
        out.append(ExtractedTrajectory(int(first) + 1, x_hat[i, first : last + 1].copy(), float(p_bar[i])))
    return out
