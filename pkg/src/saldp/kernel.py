"""State-dependent transition kernels on finite noise spaces.

A kernel is an evaluator ``x -> rho_x``, a row-stochastic ``S x S`` matrix whose
rows are indexed by the current noise point ``y`` and columns by the next one.
Densities are the matrix entries (reference measure = counting measure).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import ConvergenceError, ErgodicityError

ROW_TOL = 1e-12


@dataclass(frozen=True)
class FiniteNoiseSpace:
    """``S`` noise points, optionally labelled and embedded as vectors in R^d2."""

    size: int
    labels: tuple | None = None
    points: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("noise space needs at least one point")
        if self.labels is not None and len(self.labels) != self.size:
            raise ValueError("one label per noise point")
        if self.points is not None:
            pts = np.asarray(self.points, dtype=float).reshape(self.size, -1)
            object.__setattr__(self, "points", pts)

    def embedding(self):
        """Noise points as an ``(S, d2)`` array (indices when no embedding given)."""
        if self.points is not None:
            return self.points
        return np.arange(self.size, dtype=float)[:, None]


def _as_x(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


def check_stochastic(P, tol=ROW_TOL):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"kernel matrix must be square, got shape {P.shape}")
    if np.any(P < 0) or not np.all(np.isfinite(P)):
        raise ValueError("kernel entries must be finite and non-negative")
    dev = np.abs(P.sum(axis=1) - 1.0).max()
    if dev > tol:
        raise ValueError(f"kernel rows must sum to 1 (max deviation {dev:.3g})")
    return P


class StateKernel:
    """Deterministic evaluator ``x -> rho_x``.

    ``matrix_fn(x)`` returns the full matrix.  ``rows_fn(X, Y)`` may be given
    for fast batched sampling (``X`` is ``(B, d1)``, ``Y`` is ``(B,)``); the
    default slices full matrices.
    """

    def __init__(self, space, matrix_fn, *, rows_fn=None, x_independent=False, name="custom", params=None):
        if isinstance(space, int):
            space = FiniteNoiseSpace(space)
        self.space = space
        self._matrix_fn = matrix_fn
        self._rows_fn = rows_fn
        self.x_independent = x_independent
        self.name = name
        self.params = dict(params or {})
        self._fixed = None

    @property
    def size(self):
        return self.space.size

    def matrix(self, x=None):
        if self.x_independent:
            if self._fixed is None:
                self._fixed = check_stochastic(self._matrix_fn(None))
            return self._fixed
        P = check_stochastic(self._matrix_fn(_as_x(x)))
        if P.shape[0] != self.size:
            raise ValueError("kernel matrix does not match the noise space")
        return P

    def row(self, x, y):
        return self.matrix(x)[int(y)]

    def rows(self, X, Y):
        """Transition rows for a batch of (parameter, noise) pairs."""
        Y = np.asarray(Y, dtype=np.intp)
        if self._rows_fn is not None:
            return self._rows_fn(np.asarray(X, dtype=float), Y)
        if self.x_independent:
            return self.matrix()[Y]
        X = np.asarray(X, dtype=float)
        out = np.empty((len(Y), self.size))
        for b in range(len(Y)):
            out[b] = self._matrix_fn(X[b])[Y[b]]
        return out

    def __repr__(self):
        return f"StateKernel({self.name}, S={self.size})"


# -- builders -------------------------------------------------------------------

def iid(q, labels=None, points=None):
    """Rows all equal to ``q``: the noise is i.i.d. with law ``q``."""
    q = np.asarray(q, dtype=float)
    P = np.tile(q, (len(q), 1))
    check_stochastic(P)
    space = FiniteNoiseSpace(len(q), labels, points)
    return StateKernel(space, lambda x: P, rows_fn=lambda X, Y: np.broadcast_to(q, (len(Y), len(q))),
                       x_independent=True, name="iid", params={"q": q.tolist()})


def fixed(P, labels=None, points=None):
    P = check_stochastic(P)
    space = FiniteNoiseSpace(P.shape[0], labels, points)
    return StateKernel(space, lambda x: P, rows_fn=lambda X, Y: P[Y], x_independent=True,
                       name="fixed", params={"matrix": P.tolist()})


def two_state(a, b, kappa=0.0):
    """Two-state chain with flip probabilities ``a`` (0->1) and ``b`` (1->0).

    With ``kappa != 0`` the flip rates depend on the parameter through
    ``a(x) = a (1 + kappa tanh x_1)`` and ``b(x) = b (1 - kappa tanh x_1)``.
    """
    if not (0 < a < 1 and 0 < b < 1):
        raise ValueError("two_state needs a, b in (0, 1)")
    if abs(kappa) >= 1 or a * (1 + abs(kappa)) >= 1 or b * (1 + abs(kappa)) >= 1:
        raise ValueError("kappa too large: flip probabilities must stay in (0, 1)")

    def rates(x0):
        s = np.tanh(x0) * kappa
        return a * (1 + s), b * (1 - s)

    def matrix_fn(x):
        ax, bx = rates(0.0 if x is None else x[0])
        return np.array([[1 - ax, ax], [bx, 1 - bx]])

    def rows_fn(X, Y):
        ax, bx = rates(X[:, 0]) if kappa else (np.full(len(Y), a), np.full(len(Y), b))
        p1 = np.where(Y == 0, ax, 1 - bx)
        return np.stack([1 - p1, p1], axis=1)

    return StateKernel(FiniteNoiseSpace(2), matrix_fn, rows_fn=rows_fn, x_independent=(kappa == 0),
                       name="two_state", params={"a": a, "b": b, "kappa": kappa})


def from_grid(xs, matrices):
    """Matrices given on a grid of scalar parameters, linearly interpolated
    (and held constant outside the grid)."""
    xs = np.asarray(xs, dtype=float)
    mats = np.asarray(matrices, dtype=float)
    if mats.ndim != 3 or len(xs) != len(mats):
        raise ValueError("need one matrix per grid point")
    order = np.argsort(xs)
    xs, mats = xs[order], mats[order]
    for m in mats:
        check_stochastic(m)

    def matrix_fn(x):
        if x is None or len(xs) == 1:
            return mats[0]
        x0 = float(x[0])
        if x0 <= xs[0]:
            return mats[0]
        if x0 >= xs[-1]:
            return mats[-1]
        j = int(np.searchsorted(xs, x0)) - 1
        w = (x0 - xs[j]) / (xs[j + 1] - xs[j])
        return (1 - w) * mats[j] + w * mats[j + 1]

    return StateKernel(FiniteNoiseSpace(mats.shape[1]), matrix_fn, x_independent=(len(xs) == 1),
                       name="grid", params={"xs": xs.tolist(), "matrices": mats.tolist()})


# -- ergodic structure ------------------------------------------------------------

def _reachable(P):
    adj = np.asarray(P) > 0
    S = adj.shape[0]
    reach = np.zeros((S, S), dtype=bool)
    for y in range(S):
        order = breadth_first_order(adj.astype(np.int8), y, directed=True, return_predecessors=False)
        reach[y, order] = True
    return reach


def period(P):
    """Period of an irreducible chain (gcd of cycle lengths, exact via BFS levels)."""
    adj = np.asarray(P) > 0
    S = adj.shape[0]
    level = np.full(S, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(adj[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    d = 0
    for u in range(S):
        for v in np.flatnonzero(adj[u]):
            d = math.gcd(d, int(abs(level[u] + 1 - level[v])))
    return d if d > 0 else 1


def primitivity_index(P):
    """Smallest ``k`` with ``P^k`` strictly positive, or ``None`` if not primitive."""
    B = (np.asarray(P) > 0).astype(np.int64)
    S = B.shape[0]
    cur = B.copy()
    for k in range(1, (S - 1) ** 2 + 2):
        if cur.all():
            return k
        cur = (cur @ B > 0).astype(np.int64)
    return None


def ergodic_structure(P):
    """Irreducibility, period and primitivity index, with a witness on failure."""
    P = np.asarray(P)
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    out = {"irreducible": n_comp == 1, "period": None, "l0": None, "witness": None}
    if n_comp != 1:
        reach = _reachable(P)
        y, z = np.argwhere(~reach)[0]
        out["witness"] = {"unreachable_pair": [int(y), int(z)]}
        return out
    out["period"] = period(P)
    if out["period"] != 1:
        out["witness"] = {"period": out["period"]}
        return out
    out["l0"] = primitivity_index(P)
    return out


def require_primitive(P):
    info = ergodic_structure(P)
    if not info["irreducible"]:
        raise ErgodicityError("kernel is reducible", info["witness"])
    if info["period"] != 1:
        raise ErgodicityError(f"kernel is periodic with period {info['period']}", info["witness"])
    return info


# -- invariant measures -------------------------------------------------------------

@dataclass(frozen=True)
class InvariantMeasure:
    pi: np.ndarray
    residual: float


def stationary_distribution(P, tol=1e-10, check=True, max_squarings=64):
    """Invariant law of a primitive stochastic matrix.

    Power iteration by repeated squaring of ``P`` (rows of ``P^(2^j)`` all
    converge to ``pi``), polished by a few plain iterations; falls back to a
    dense linear solve for ``S <= 64`` if the residual is not met.
    """
    P = np.asarray(P, dtype=float)
    S = P.shape[0]
    if check:
        require_primitive(P)
    A = P.copy()
    for _ in range(max_squarings):
        spread = np.abs(A - A[0]).max()
        if spread < 1e-15:
            break
        A = A @ A
        A /= A.sum(axis=1, keepdims=True)
    pi = A.mean(axis=0)
    pi /= pi.sum()
    for _ in range(3):
        pi = pi @ P
        pi /= pi.sum()
    residual = float(np.abs(pi @ P - pi).sum())
    if residual > tol and S <= 64:
        M = np.vstack([P.T - np.eye(S), np.ones(S)])
        rhs = np.zeros(S + 1)
        rhs[-1] = 1.0
        pi = np.linalg.lstsq(M, rhs, rcond=None)[0]
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        residual = float(np.abs(pi @ P - pi).sum())
    if residual > tol:
        raise ConvergenceError(f"invariant measure residual {residual:.3g} above {tol:.3g}", residual)
    return InvariantMeasure(pi, residual)


def invariant_measure(kernel, x=None, tol=1e-10):
    """Unique invariant law ``pi_x`` of ``rho_x``; raises on reducible/periodic kernels."""
    P = kernel.matrix(x) if isinstance(kernel, StateKernel) else np.asarray(kernel, dtype=float)
    return stationary_distribution(P, tol)


def k_step(kernel, x, k):
    """``k``-step transition matrix ``rho_x^k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    P = kernel.matrix(x) if isinstance(kernel, StateKernel) else np.asarray(kernel, dtype=float)
    return np.linalg.matrix_power(P, int(k))


def _log_row_mgf(row, values):
    support = row > 0
    v = values[support]
    c = v.max()
    return float(c + np.log(np.dot(row[support], np.exp(v - c))))


def one_step_log_mgf(model, x, alpha, y):
    """``log sum_z exp(<alpha, g(x, z)>) rho_x(y, z)``, max-shifted."""
    x = _as_x(x)
    alpha = _as_x(alpha)
    row = model.kernel.matrix(x)[int(y)]
    return _log_row_mgf(row, model.g_values(x) @ alpha)


# -- assumption audit ---------------------------------------------------------------

@dataclass
class CheckResult:
    status: str  # PASS | FAIL | SKIP
    note: str = ""
    value: float | None = None
    witness: dict | None = None

    def to_dict(self):
        out = {"status": self.status}
        if self.note:
            out["note"] = self.note
        if self.value is not None:
            out["value"] = self.value
        if self.witness is not None:
            out["witness"] = self.witness
        return out


@dataclass
class AssumptionReport:
    checks: dict
    l0: int | None = None
    n0: int | None = None
    schema_version: int = 1

    @property
    def passed(self):
        return all(c.status != "FAIL" for c in self.checks.values())

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "all_pass": self.passed,
            "l0": self.l0,
            "n0": self.n0,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _grid_points(x_grid, d1):
    pts = np.asarray(x_grid, dtype=float)
    return pts.reshape(-1, d1)


def _neighbour_pairs(pts):
    """Each grid point paired with its nearest distinct neighbour."""
    pairs = []
    for i in range(len(pts)):
        d = np.linalg.norm(pts - pts[i], axis=1)
        d[i] = np.inf
        j = int(np.argmin(d))
        if np.isfinite(d[j]) and d[j] > 0:
            pairs.append((i, j, float(d[j])))
    return pairs


def check_assumptions(model, x_grid, alpha_grid, y_all=None, schedule=None, noise_alpha_grid=None):
    """Audit the standing assumptions on finite grids.

    Continuity-type conditions (Lipschitz g, continuity of the kernel density
    and of the one-step log-MGF) can only be audited on the grid; the report
    records the grid modulus and the worst pair.  Failures always carry a
    witness.
    """
    d1 = model.d1
    xs = _grid_points(x_grid, d1)
    alphas = _grid_points(alpha_grid, d1)
    S = model.kernel.size
    ys = np.arange(S) if y_all is None else np.asarray(y_all, dtype=int)
    if len(xs) == 0 or len(alphas) == 0 or len(ys) == 0:
        raise ValueError("grids must be non-empty")
    mats = np.array([model.kernel.matrix(x) for x in xs])
    gvals = np.array([model.g_values(x) for x in xs])  # (G, S, d1)
    pairs = _neighbour_pairs(xs)
    checks = {}

    # A.1 Lipschitz probe of x -> g(x, z)
    if pairs:
        ratios = [(np.linalg.norm(gvals[i] - gvals[j], axis=1).max() / d, i, j) for i, j, d in pairs]
        lip, i, j = max(ratios)
        ok = np.isfinite(lip)
        checks["A1"] = CheckResult("PASS" if ok else "FAIL", "audited on grid: finite-difference Lipschitz constant",
                                   float(lip), {"x": xs[i].tolist(), "x_neighbour": xs[j].tolist()})
    else:
        checks["A1"] = CheckResult("SKIP", "single grid point: no Lipschitz probe")

    # A.2 continuity of x -> eta_x(y, z): grid modulus
    if pairs:
        mods = [(np.abs(mats[i] - mats[j]).max(), i, j) for i, j, _ in pairs]
        mod, i, j = max(mods)
        checks["A2"] = CheckResult("PASS", "audited on grid: max entry change between neighbouring grid points",
                                   float(mod), {"x": xs[i].tolist(), "x_neighbour": xs[j].tolist()})
    else:
        checks["A2"] = CheckResult("PASS", "audited on grid: single point", 0.0)

    # A.3 continuity of Lambda(x, alpha, y) in (x, alpha): modulus over x-neighbours
    lam = np.array([[[_log_row_mgf(mats[g][y], gvals[g] @ a) for y in ys] for a in alphas] for g in range(len(xs))])
    if pairs:
        mods = [(np.abs(lam[i] - lam[j]).max(), i, j) for i, j, _ in pairs]
        mod, i, j = max(mods)
        ok = np.isfinite(mod)
        checks["A3"] = CheckResult("PASS" if ok else "FAIL", "audited on grid: max change of the one-step log-MGF",
                                   float(mod), {"x": xs[i].tolist(), "x_neighbour": xs[j].tolist()})
    else:
        checks["A3"] = CheckResult("PASS" if np.all(np.isfinite(lam)) else "FAIL", "audited on grid: single point")

    # A.4 bounded density ratios over the grid
    pos = mats > 0
    support_change = np.argwhere(pos.any(axis=0) & ~pos.all(axis=0))
    if len(support_change):
        y, z = map(int, support_change[0])
        g0 = int(np.flatnonzero(~pos[:, y, z])[0])
        g1 = int(np.flatnonzero(pos[:, y, z])[0])
        checks["A4"] = CheckResult("FAIL", "density vanishes at some grid points but not others", math.inf,
                                   {"y": y, "z": z, "x_zero": xs[g0].tolist(), "x_positive": xs[g1].tolist()})
    else:
        common = pos[0]
        vals = mats[:, common]
        ratio = float((vals.max(axis=0) / vals.min(axis=0)).max()) if vals.size else 1.0
        checks["A4"] = CheckResult("PASS", "max density ratio over grid pairs", ratio)

    # A.5 irreducibility + aperiodicity at every grid point
    l0s = []
    failure = None
    for g, P in enumerate(mats):
        info = ergodic_structure(P)
        if info["l0"] is None:
            failure = (g, info)
            break
        l0s.append(info["l0"])
    if failure is not None:
        g, info = failure
        witness = dict(info["witness"])
        witness["x"] = xs[g].tolist()
        reason = "reducible kernel" if not info["irreducible"] else "periodic kernel"
        checks["A5"] = CheckResult("FAIL", reason, None, witness)
        l0 = None
    else:
        l0 = max(l0s)
        checks["A5"] = CheckResult("PASS", "irreducible and aperiodic at every grid point", float(l0))

    # A.6 finite exponential moments (sup over grids)
    sup_g = float(lam.max())
    emb = model.kernel.space.embedding()
    d2 = emb.shape[1]
    if noise_alpha_grid is None:
        scales = np.unique(np.abs(alphas).max(axis=1))
        noise_alphas = np.concatenate([s * np.eye(d2) for s in scales] + [-s * np.eye(d2) for s in scales])
    else:
        noise_alphas = _grid_points(noise_alpha_grid, d2)
    sup_z = max(_log_row_mgf(P[y], emb @ a) for P in mats for y in ys for a in noise_alphas)
    ok = np.isfinite(sup_g) and np.isfinite(sup_z)
    checks["A6"] = CheckResult("PASS" if ok else "FAIL", "sup of log-MGFs over the grids",
                               float(max(sup_g, sup_z)), {"sup_update_mgf": sup_g, "sup_noise_mgf": float(sup_z)})

    # A.7 step sizes (only when a schedule is supplied)
    if schedule is not None:
        checks["A7"] = _check_schedule(schedule)
    return AssumptionReport(checks, l0, l0)


def _check_schedule(schedule):
    if schedule.kind == "constant":
        return CheckResult("FAIL", "constant steps do not vanish", float(schedule.eps), {"eps": schedule.eps})
    if schedule.kind == "custom":
        steps = np.asarray(schedule.steps)
        if np.any(np.diff(steps) > 0):
            k = int(np.flatnonzero(np.diff(steps) > 0)[0]) + 1
            return CheckResult("FAIL", "custom steps increase", None, {"k": k + 1})
        return CheckResult("PASS", "finite custom list: decay audited only up to its length", float(steps[-1]))
    return CheckResult("PASS", "steps positive, vanishing, non-summable", None)
