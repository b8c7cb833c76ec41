"""Deep data associator: measurements with arrival times -> row-stochastic
association matrix over B tracks, and its permutation-invariant training loss."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import nn

from . import nnkit
from .nnkit import DTYPE, Encoder, EncoderConfig, Linear, MLP, softmax_rows
from .simkit import CLUTTER

LOG_CLAMP = 1e-12

LITERAL = "literal"
SINGLE_COLUMN = "single_column"
CLUTTER_TARGETS = (LITERAL, SINGLE_COLUMN)


class EmptyInputError(ValueError):
    pass


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class DDAConfig:
    d: int = 32
    n_h: int = 2
    N: int = 2
    ffn_hidden: int = 64
    dropout: float = 0.1
    B: int = 8
    head_hidden: int = 64
    head_layers: int = 3
    T: int = 5
    clutter_target: str = SINGLE_COLUMN
    # measurement-space box used to centre/scale the inputs before projection
    z_lo: tuple = (0.5, 0.0, -1.3)
    z_hi: tuple = (15.0, 8.0, 1.3)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.d, self.n_h, self.N, self.ffn_hidden, self.dropout, max_positions=self.T)


class DeepDataAssociator(nn.Module):
    def __init__(self, cfg: DDAConfig, seed: int = 0):
        super().__init__()
        if cfg.clutter_target not in CLUTTER_TARGETS:
            raise ValueError(f"clutter_target must be one of {CLUTTER_TARGETS}")
        gen = torch.Generator().manual_seed(seed)
        self.cfg = cfg
        self.project = Linear(3, cfg.d, gen)
        self.encoder = Encoder(cfg.encoder_config(), gen)
        self.head = MLP(cfg.d, cfg.head_hidden, cfg.B, cfg.head_layers, gen)
        lo = torch.tensor(cfg.z_lo, dtype=DTYPE)
        hi = torch.tensor(cfg.z_hi, dtype=DTYPE)
        self.register_buffer("_centre", (lo + hi) / 2, persistent=False)
        self.register_buffer("_scale", (hi - lo) / 2, persistent=False)

    def forward(self, z, times, key_mask=None, gen=None) -> torch.Tensor:
        """z: (..., n, 3); times: (..., n) 1-based arrival steps."""
        z = torch.as_tensor(z, dtype=DTYPE)
        times = torch.as_tensor(times, dtype=torch.long)
        a = self.project((z - self._centre) / self._scale)
        e = self.encoder(a, times - 1, key_mask, gen)
        return softmax_rows(self.head(e))


def dda_forward(z, times, model: DeepDataAssociator) -> torch.Tensor:
    """Eval-mode association matrix (n, B) for one scene."""
    z = np.asarray(z, dtype=float).reshape(-1, 3)
    if len(z) == 0:
        raise EmptyInputError("the associator needs at least one measurement")
    times = np.asarray(times, dtype=int)
    if times.min() < 1 or times.max() > model.cfg.T:
        raise nnkit.PositionError(f"arrival times must lie in [1, {model.cfg.T}]")
    model.eval()
    return model(torch.from_numpy(z), torch.from_numpy(times))


@dataclass
class MatchResult:
    S: np.ndarray  # (B, K) binary
    s_star: np.ndarray  # (B,) object id per track, -1 when unmatched
    C: np.ndarray  # (B, K) cost
    object_ids: np.ndarray  # (K,)

    @property
    def cost(self) -> float:
        return float((self.S * self.C).sum())


def cost_matrix(A: np.ndarray, labels: Sequence[int], object_ids: Sequence[int]) -> np.ndarray:
    labels = np.asarray(labels)
    onehot = (labels[:, None] == np.asarray(object_ids)[None, :]).astype(float)
    return -(np.asarray(A, dtype=float).T @ onehot)


def _as_numpy(A) -> np.ndarray:
    if isinstance(A, torch.Tensor):
        return A.detach().cpu().numpy()
    return np.asarray(A, dtype=float)


def _objects(labels: np.ndarray, object_ids) -> np.ndarray:
    if object_ids is None:
        return np.unique(labels[labels != CLUTTER])
    return np.asarray(sorted(set(int(o) for o in object_ids)), dtype=int)


def _usable_tracks(B: int, clutter_target: str) -> int:
    return B - 1 if clutter_target == SINGLE_COLUMN else B


def _finish(S: np.ndarray, C: np.ndarray, object_ids: np.ndarray) -> MatchResult:
    s_star = np.full(S.shape[0], CLUTTER, dtype=int)
    for j in range(S.shape[0]):
        if S.shape[1] and S[j].max() == 1:
            s_star[j] = object_ids[int(np.argmax(S[j]))]
    return MatchResult(S=S, s_star=s_star, C=C, object_ids=object_ids)


def match_tracks_to_objects(
    A,
    labels: Sequence[int],
    clutter_target: str = LITERAL,
    object_ids: Optional[Sequence[int]] = None,
) -> MatchResult:
    """Minimum-cost one-to-one assignment of objects to tracks.

    Objects default to the distinct non-clutter labels. With
    ``clutter_target="single_column"`` the last column is reserved for clutter
    and never receives an object.
    """
    A = _as_numpy(A)
    labels = np.asarray(labels, dtype=int)
    if A.ndim != 2 or A.shape[0] != len(labels):
        raise nnkit.ShapeError(f"A has shape {A.shape} but {len(labels)} labels were given")
    B = A.shape[1]
    objs = _objects(labels, object_ids)
    usable = _usable_tracks(B, clutter_target)
    if len(objs) > usable:
        raise CapacityError(f"{len(objs)} objects cannot be matched to {usable} tracks")
    C = cost_matrix(A, labels, objs)
    S = np.zeros((B, len(objs)), dtype=int)
    if len(objs):
        rows, cols = linear_sum_assignment(C[:usable])
        S[rows, cols] = 1
    return _finish(S, C, objs)


def match_exhaustive(
    A,
    labels: Sequence[int],
    clutter_target: str = LITERAL,
    object_ids: Optional[Sequence[int]] = None,
) -> MatchResult:
    """Same contract as :func:`match_tracks_to_objects`, by enumeration."""
    A = _as_numpy(A)
    labels = np.asarray(labels, dtype=int)
    B = A.shape[1]
    objs = _objects(labels, object_ids)
    usable = _usable_tracks(B, clutter_target)
    if len(objs) > usable:
        raise CapacityError(f"{len(objs)} objects cannot be matched to {usable} tracks")
    C = cost_matrix(A, labels, objs)
    best, best_perm = np.inf, ()
    for perm in itertools.permutations(range(usable), len(objs)):
        cost = sum(C[j, k] for k, j in enumerate(perm))
        if cost < best - 1e-15:
            best, best_perm = cost, perm
    S = np.zeros((B, len(objs)), dtype=int)
    for k, j in enumerate(best_perm):
        S[j, k] = 1
    return _finish(S, C, objs)


def build_target_matrix(match: MatchResult, labels: Sequence[int], clutter_target: str = LITERAL) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    target = (labels[:, None] == match.s_star[None, :]).astype(float)
    if clutter_target == SINGLE_COLUMN:
        clutter = labels == CLUTTER
        target[clutter] = 0.0
        target[clutter, -1] = 1.0
    return target


def dda_loss(A: torch.Tensor, A_star) -> torch.Tensor:
    A_star = torch.as_tensor(A_star, dtype=A.dtype)
    if A.shape != A_star.shape:
        raise nnkit.ShapeError(f"prediction {tuple(A.shape)} and target {tuple(A_star.shape)} differ")
    n = A.shape[0]
    return -(torch.log(A.clamp_min(LOG_CLAMP)) * A_star).sum() / n


def rematched_loss(A: torch.Tensor, labels, clutter_target: str = LITERAL) -> torch.Tensor:
    """Loss with the target re-matched to the column order of ``A``."""
    match = match_tracks_to_objects(A, labels, clutter_target)
    return dda_loss(A, build_target_matrix(match, labels, clutter_target))


def write_association_csv(path, A) -> None:
    A = _as_numpy(A)
    header = ",".join(f"track{j}" for j in range(A.shape[1]))
    np.savetxt(path, A, delimiter=",", header=header, comments="", fmt="%.17g")


def read_association_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))
