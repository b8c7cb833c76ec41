"""Trajectory GOSPA between two sets of trajectories on a common window.

Trajectories are anything with ``t_s`` (1-based start step) and ``states``
(contiguous ``(l+1, 4)`` array). The optimal assignment sequence is found by a
linear program over per-step assignment weights with switching slacks; when
the relaxation returns a fractional point the same program is re-solved with
integer weights, so the returned value is the exact metric.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

INTEGRAL_TOL = 1e-7


class WindowError(ValueError):
    pass


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class TgospaParams:
    p: float = 1.0
    c: float = 20.0
    gamma: float = 2.0
    base: str = "L1"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("order p must be >= 1")
        if self.c <= 0 or self.gamma <= 0:
            raise ValueError("c and gamma must be positive")
        if self.base not in ("L1", "L2"):
            raise ValueError("base metric must be 'L1' or 'L2'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TgospaResult:
    total: float
    loc: float
    miss: float
    false_: float
    switch: float

    def to_dict(self) -> dict:
        return {"total": self.total, "loc": self.loc, "miss": self.miss, "false": self.false_, "switch": self.switch}


def _dense(trajs, T: int) -> tuple[np.ndarray, np.ndarray]:
    states = np.zeros((len(trajs), T, 4))
    exists = np.zeros((len(trajs), T), dtype=bool)
    for i, tr in enumerate(trajs):
        s = np.asarray(tr.states, dtype=float).reshape(-1, 4)
        t0 = int(tr.t_s) - 1
        if t0 < 0 or t0 + len(s) > T:
            raise WindowError(f"trajectory spanning steps {t0 + 1}..{t0 + len(s)} lies outside window 1..{T}")
        states[i, t0 : t0 + len(s)] = s
        exists[i, t0 : t0 + len(s)] = True
    return states, exists


def _window(X, Y, T: Optional[int]) -> int:
    ends = [int(tr.t_s) + len(tr.states) - 1 for tr in list(X) + list(Y)]
    if T is None:
        return max(ends, default=0)
    return T


class _Costs:
    """Per-step pair costs (to the p-th power) and bookkeeping."""

    def __init__(self, X, Y, T, params: TgospaParams):
        self.params = params
        self.T = T
        self.xs, self.xe = _dense(X, T)
        self.ys, self.ye = _dense(Y, T)
        self.nx, self.ny = len(X), len(Y)
        p, c = params.p, params.c
        half = c**p / 2
        diff = self.xs[:, None] - self.ys[None, :]  # (nx, ny, T, 4)
        if params.base == "L1":
            dist = np.abs(diff).sum(-1)
        else:
            dist = np.sqrt((diff**2).sum(-1))
        both = self.xe[:, None] & self.ye[None, :]
        self.close = both & (dist < c)  # pairs that count as properly detected
        self.dist_p = np.where(self.close, dist**p, 0.0)
        one = self.xe[:, None] ^ self.ye[None, :]
        # D[k, i, j] with i, j = 0 meaning "unassigned"
        D = np.zeros((T, self.nx + 1, self.ny + 1))
        D[:, 1:, 1:] = np.where(both, np.minimum(dist, c) ** p, np.where(one, half, 0.0)).transpose(2, 0, 1)
        D[:, 1:, 0] = np.where(self.xe, half, 0.0).T
        D[:, 0, 1:] = np.where(self.ye, half, 0.0).T
        self.D = D

    def decompose(self, W: np.ndarray, E: np.ndarray) -> TgospaResult:
        """W: (T, nx+1, ny+1) assignment weights; E: (T-1, nx, ny) switch slacks."""
        p, c, g = self.params.p, self.params.c, self.params.gamma
        half = c**p / 2
        Wp = W[:, 1:, 1:].transpose(1, 2, 0)  # (nx, ny, T)
        detected = (Wp * self.close).sum(axis=(0, 1))  # per step
        loc = float((Wp * self.dist_p).sum())
        miss = float(half * (self.xe.sum(0) - detected).sum())
        false_ = float(half * (self.ye.sum(0) - detected).sum())
        switch = float(g**p / 2 * E.sum())
        total_p = loc + miss + false_ + switch
        return TgospaResult(max(total_p, 0.0) ** (1 / p), loc, miss, false_, switch)


def _trivial(costs: _Costs) -> TgospaResult:
    half = costs.params.c**costs.params.p / 2
    miss = float(half * costs.xe.sum())
    false_ = float(half * costs.ye.sum())
    return TgospaResult((miss + false_) ** (1 / costs.params.p), 0.0, miss, false_, 0.0)


def _build_lp(costs: _Costs):
    T, nx, ny = costs.T, costs.nx, costs.ny
    g = costs.params.gamma ** costs.params.p
    nw = (nx + 1) * (ny + 1)
    ne = nx * ny
    n_vars = T * nw + (T - 1) * ne

    def w(k, i, j):
        return k * nw + i * (ny + 1) + j

    def e(k, i, j):
        return T * nw + k * ne + (i - 1) * ny + (j - 1)

    cost = np.zeros(n_vars)
    cost[: T * nw] = costs.D.reshape(-1)
    cost[T * nw :] = g / 2

    rows, cols, vals = [], [], []
    r = 0
    for k in range(T):
        for i in range(1, nx + 1):
            for j in range(ny + 1):
                rows.append(r); cols.append(w(k, i, j)); vals.append(1.0)
            r += 1
        for j in range(1, ny + 1):
            for i in range(nx + 1):
                rows.append(r); cols.append(w(k, i, j)); vals.append(1.0)
            r += 1
    A_eq = sparse.csr_matrix((vals, (rows, cols)), shape=(r, n_vars))
    b_eq = np.ones(r)

    rows, cols, vals = [], [], []
    r = 0
    for k in range(T - 1):
        for i in range(1, nx + 1):
            for j in range(1, ny + 1):
                for sign in (1.0, -1.0):
                    rows += [r, r, r]
                    cols += [e(k, i, j), w(k, i, j), w(k + 1, i, j)]
                    vals += [-1.0, sign, -sign]
                    r += 1
    A_ub = sparse.csr_matrix((vals, (rows, cols)), shape=(r, n_vars))
    b_ub = np.zeros(r)

    upper = np.full(n_vars, np.inf)
    upper[: T * nw] = 1.0
    for k in range(T):
        upper[w(k, 0, 0)] = 0.0
    return cost, A_eq, b_eq, A_ub, b_ub, upper, T * nw


def tgospa(X: Sequence, Y: Sequence, params: TgospaParams = TgospaParams(), T: Optional[int] = None,
           exact: bool = True) -> TgospaResult:
    """Trajectory GOSPA distance and its decomposition.

    With ``exact=False`` the LP relaxation value is returned without the
    integer fallback (a lower bound on the exact value).
    """
    T = _window(X, Y, T)
    costs = _Costs(X, Y, T, params)
    if T == 0 or costs.nx == 0 or costs.ny == 0:
        return _trivial(costs)
    cost, A_eq, b_eq, A_ub, b_ub, upper, n_w = _build_lp(costs)
    bounds = list(zip(np.zeros(len(cost)), upper))
    res = linprog(cost, A_ub=A_ub if A_ub.shape[0] else None, b_ub=b_ub if A_ub.shape[0] else None,
                  A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"TGOSPA linear program failed: {res.message}")
    x = res.x
    frac = np.abs(x[:n_w] - np.round(x[:n_w])).max()
    if exact and frac > INTEGRAL_TOL:
        integrality = np.zeros(len(cost))
        integrality[:n_w] = 1
        constraints = [LinearConstraint(A_eq, b_eq, b_eq)]
        if A_ub.shape[0]:
            constraints.append(LinearConstraint(A_ub, -np.inf, b_ub))
        res = milp(cost, constraints=constraints, integrality=integrality, bounds=Bounds(0, upper))
        if res.status != 0:
            raise RuntimeError(f"TGOSPA integer program failed: {res.message}")
        x = res.x
    if exact:
        x = x.copy()
        x[:n_w] = np.round(x[:n_w])
    W = x[:n_w].reshape(T, costs.nx + 1, costs.ny + 1)
    Wp = W[:, 1:, 1:]
    E = np.abs(np.diff(Wp, axis=0))
    return costs.decompose(W, E)


# -- exhaustive oracle ----------------------------------------------------------

MAX_BRUTE_SET = 4
MAX_BRUTE_T = 5


def assignment_vectors(nx: int, ny: int) -> list[tuple[int, ...]]:
    """All vectors in {0..ny}^nx whose nonzero entries are distinct."""
    out = []
    for pi in itertools.product(range(ny + 1), repeat=nx):
        nz = [v for v in pi if v]
        if len(nz) == len(set(nz)):
            out.append(pi)
    return out


def tgospa_bruteforce(X: Sequence, Y: Sequence, params: TgospaParams = TgospaParams(),
                      T: Optional[int] = None) -> TgospaResult:
    """Exact metric by exhaustive search over assignment vectors.

    Every per-step assignment vector is enumerated and the best sequence is
    found by dynamic programming over steps (the objective is a chain).
    """
    T = _window(X, Y, T)
    if len(X) > MAX_BRUTE_SET or len(Y) > MAX_BRUTE_SET or T > MAX_BRUTE_T:
        raise InstanceTooLargeError(f"exhaustive search limited to |X|,|Y| <= {MAX_BRUTE_SET}, T <= {MAX_BRUTE_T}")
    costs = _Costs(X, Y, T, params)
    if T == 0:
        return TgospaResult(0.0, 0.0, 0.0, 0.0, 0.0)
    nx, ny = costs.nx, costs.ny
    vecs = assignment_vectors(nx, ny)
    V = len(vecs)
    g = params.gamma**params.p

    step = np.zeros((T, V))
    for a, pi in enumerate(vecs):
        used = set(v for v in pi if v)
        for k in range(T):
            c = sum(costs.D[k, i + 1, pi[i]] for i in range(nx))
            c += sum(costs.D[k, 0, j] for j in range(1, ny + 1) if j not in used)
            step[k, a] = c
    sw = np.zeros((V, V))
    for a, pa in enumerate(vecs):
        for b, pb in enumerate(vecs):
            s = 0.0
            for u, v in zip(pa, pb):
                if u == v:
                    continue
                s += 1.0 if (u and v) else 0.5
            sw[a, b] = g * s

    best = step[0].copy()
    back = np.zeros((T, V), dtype=int)
    for k in range(1, T):
        cand = best[:, None] + sw
        back[k] = np.argmin(cand, axis=0)
        best = cand[back[k], np.arange(V)] + step[k]
    path = [int(np.argmin(best))]
    for k in range(T - 1, 0, -1):
        path.append(int(back[k, path[-1]]))
    path.reverse()

    W = np.zeros((T, nx + 1, ny + 1))
    for k, a in enumerate(path):
        pi = vecs[a]
        used = set()
        for i, j in enumerate(pi):
            W[k, i + 1, j] = 1.0
            used.add(j)
        for j in range(1, ny + 1):
            if j not in used:
                W[k, 0, j] = 1.0
    E = np.abs(np.diff(W[:, 1:, 1:], axis=0))
    return costs.decompose(W, E)


def all_miss_cost(X: Sequence, params: TgospaParams = TgospaParams()) -> float:
    """Metric value against an empty estimate: every alive step is a miss."""
    steps = sum(len(tr.states) for tr in X)
    return (steps * params.c**params.p / 2) ** (1 / params.p)
