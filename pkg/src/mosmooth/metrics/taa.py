"""Top-1 association accuracy."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch

from ..dda import MatchResult
from ..nnkit import ShapeError
from ..simkit import CLUTTER


def taa(A, labels: Sequence[int], match: MatchResult) -> Optional[float]:
    """Fraction of object-originated measurements whose most likely track is
    matched to their object. Clutter is ignored; ``None`` when no measurement
    originates from an object."""
    if isinstance(A, torch.Tensor):
        A = A.detach().cpu().numpy()
    A = np.asarray(A, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if A.ndim != 2 or A.shape[0] != len(labels) or A.shape[1] != len(match.s_star):
        raise ShapeError(f"A {A.shape} does not fit {len(labels)} labels and {len(match.s_star)} tracks")
    true = labels != CLUTTER
    if not true.any():
        return None
    top = np.argmax(A, axis=1)
    hits = match.s_star[top] == labels
    return float(hits[true].sum() / true.sum())
