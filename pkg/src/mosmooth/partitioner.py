"""Greedy partitioning of an association matrix into fixed-length tracks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MEASURED = "measured"
DUMMY = "dummy"


@dataclass(frozen=True)
class TrackSlot:
    kind: str = DUMMY
    z: Optional[np.ndarray] = None
    confidence: Optional[float] = None
    index: Optional[int] = None  # position of the measurement in the input sequence

    @property
    def measured(self) -> bool:
        return self.kind == MEASURED


@dataclass
class Track:
    slots: list[TrackSlot]
    source_column: int
    dropped: list[int] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.slots)

    @property
    def measured_indices(self) -> list[int]:
        return [s.index for s in self.slots if s.measured]


def partition(A, z, times, T: int) -> list[Track]:
    """Assign each measurement to its most likely track and lay tracks out
    over ``T`` steps.

    Empty columns are discarded. When several measurements of one track share
    an arrival time only the most confident survives (lowest input index on a
    tie); the others are listed in ``Track.dropped``.
    """
    A = np.asarray(A, dtype=float)
    z = np.asarray(z, dtype=float).reshape(-1, 3)
    times = np.asarray(times, dtype=int)
    if len(z) == 0:
        return []
    cols = np.argmax(A, axis=1)  # first maximum wins ties
    conf = A[np.arange(len(A)), cols]
    return _layout(cols, conf, z, times, T)


def partition_by_labels(labels: Sequence[int], z, times, T: int, clutter: int = -1) -> list[Track]:
    """Tracks from known origins, one per object, confidence 1."""
    labels = np.asarray(labels, dtype=int)
    z = np.asarray(z, dtype=float).reshape(-1, 3)
    times = np.asarray(times, dtype=int)
    keep = labels != clutter
    idx = np.flatnonzero(keep)
    tracks = _layout(labels[keep], np.ones(len(idx)), z[keep], times[keep], T, original=idx)
    return tracks


def _layout(cols, conf, z, times, T, original=None) -> list[Track]:
    if original is None:
        original = np.arange(len(cols))
    tracks = []
    for col in np.unique(cols):
        members = np.flatnonzero(cols == col)
        # most confident first, then lowest original index
        members = sorted(members, key=lambda i: (-conf[i], original[i]))
        slots = [TrackSlot() for _ in range(T)]
        dropped = []
        for i in members:
            t = int(times[i])
            if slots[t - 1].measured:
                dropped.append(int(original[i]))
                continue
            slots[t - 1] = TrackSlot(MEASURED, z[i].copy(), float(conf[i]), int(original[i]))
        tracks.append(Track(slots=slots, source_column=int(col), dropped=sorted(dropped)))
    return tracks
