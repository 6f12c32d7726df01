"""Monte Carlo Laplace functionals and tube probabilities of ``X^n``.

For a bounded path functional ``F`` the estimate is

    -(1/beta_n) log( (1/N) sum_i exp(-beta_n F(X^n_i)) ),

computed in log space.  Sample ``i`` always uses random stream ``i`` of the
seed, so neither chunking nor thread count changes a result.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .sa_sim import Path, _Runner, time_grid


@dataclass
class LaplaceEstimate:
    n: int
    T: float
    N: int
    beta_n: int
    value: float
    stderr: float
    clamped: int = 0
    f_mean: float = float("nan")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("n", "T", "N", "beta_n", "value", "stderr", "clamped", "f_mean")}


@dataclass
class TubeEstimate:
    """Fraction of paths within ``delta`` of a reference path.

    When no sample stays in the tube ``p = 0`` and ``censored`` is set;
    ``log_rate`` is then the one-sided bound ``log(N)/beta_n`` (the true value
    is at least that), never ``inf``.
    """

    n: int
    T: float
    N: int
    beta_n: int
    delta: float
    hits: int
    p: float
    log_rate: float
    censored: bool
    info: dict = field(default_factory=dict)

    def to_dict(self):
        out = {k: getattr(self, k) for k in ("n", "T", "N", "beta_n", "delta", "hits", "p", "log_rate", "censored")}
        out["log_rate_kind"] = "lower_bound" if self.censored else "estimate"
        return out


# -- functionals ------------------------------------------------------------------------

class _SupTracker:
    """Running ``sup_t |X(t) - ref(t)|`` over the union of breakpoints."""

    def __init__(self, times, ref, stop_above=None):
        self.times = times
        self.ref = ref
        self.ref_at = ref(times)
        # reference breakpoints strictly inside each simulation step
        inner = ref.times[(ref.times > 0) & (ref.times < times[-1])]
        pos = np.searchsorted(times, inner, side="left")
        self.inner = {}
        for t, k in zip(inner, pos):
            if times[k] != t:
                self.inner.setdefault(int(k), []).append(float(t))
        self.stop_above = stop_above
        self.sup = None

    def start(self, X):
        self.sup = np.linalg.norm(X - self.ref_at[0], axis=1)

    def step(self, k, X, Xn):
        t0, t1 = self.times[k - 1], self.times[k]
        d = np.linalg.norm(Xn - self.ref_at[k], axis=1)
        np.maximum(self.sup, d, out=self.sup)
        for t in self.inner.get(k, ()):
            w = (t - t0) / (t1 - t0)
            Xt = X + w * (Xn - X)
            np.maximum(self.sup, np.linalg.norm(Xt - self.ref(t), axis=1), out=self.sup)
        return self.stop_above is not None and bool(np.all(self.sup > self.stop_above))


class SupDeviation:
    """``F(phi) = min(cap, sup_t |phi(t) - ref(t)|)``."""

    def __init__(self, ref: Path, cap=1.0):
        self.ref = ref
        self.cap = float(cap)
        self.bound = self.cap

    def __call__(self, path):
        from .sa_sim import deviation_sup
        return min(self.cap, deviation_sup(path, self.ref))

    def run_chunk(self, runner, seed, ids):
        tracker = _SupTracker(runner.grid.times, self.ref)
        runner.run(seed, ids, observer=tracker)
        return np.minimum(self.cap, tracker.sup)


class Constant:
    def __init__(self, c):
        self.c = float(c)
        self.bound = abs(self.c)

    def __call__(self, path):
        return self.c

    def run_chunk(self, runner, seed, ids):
        return np.full(len(ids), self.c)


def _functional_chunk(F, runner, seed, ids):
    if hasattr(F, "run_chunk"):
        return F.run_chunk(runner, seed, ids)
    values = runner.run(seed, ids, keep=True)
    times = runner.grid.times
    return np.array([F(Path(times, v)) for v in values])


def _map_chunks(fn, N, chunk, threads):
    ids = np.arange(N)
    chunks = [ids[i: i + chunk] for i in range(0, N, chunk)]
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        return list(pool.map(fn, chunks))


# -- Laplace functional --------------------------------------------------------------------

def log_mean_exp(a):
    a = np.asarray(a, dtype=float)
    c = a.max()
    return float(c + np.log(np.mean(np.exp(a - c))))


def jackknife_laplace(F_values, beta):
    """Estimate and jackknife standard error of ``-(1/beta) log mean exp(-beta F)``."""
    F = np.asarray(F_values, dtype=float)
    N = len(F)
    if N < 2:
        raise ValueError("need at least two samples")
    a = -beta * F
    c = a.max()
    w = np.exp(a - c)
    total = w.sum()
    value = -(c + math.log(total / N)) / beta
    top = int(np.argmax(a))
    rest = total - w
    # the largest term would cancel catastrophically; recompute it directly
    others = np.delete(a, top)
    c2 = others.max()
    rest_top_log = c2 + math.log(np.exp(others - c2).sum())
    with np.errstate(divide="ignore"):
        log_rest = c + np.log(rest)
    log_rest[top] = rest_top_log
    loo = -(log_rest - math.log(N - 1)) / beta
    se = math.sqrt((N - 1) / N * float(np.sum((loo - loo.mean()) ** 2)))
    return float(value), float(se)


def laplace_functional(model, schedule, F, n, T, N, seed, M=None, threads=1, chunk=256):
    """Monte Carlo Laplace functional of ``X^n`` on ``[0, T]``.

    ``F`` is a path functional (a callable on :class:`Path`, or one of the
    vectorised functionals here).  Values are clamped to ``[-M, M]``; the
    number of clamped samples is reported.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    grid = time_grid(schedule, n, T)
    runner = _Runner(model, grid)
    parts = _map_chunks(lambda ids: _functional_chunk(F, runner, seed, ids), N, chunk, threads)
    vals = np.concatenate(parts)
    M = getattr(F, "bound", None) if M is None else M
    clamped = 0
    if M is not None:
        clamped = int(np.sum(np.abs(vals) > M))
        vals = np.clip(vals, -M, M)
    if np.all(vals == vals[0]):
        value, se = float(vals[0]), 0.0
    else:
        value, se = jackknife_laplace(vals, grid.beta)
    return LaplaceEstimate(n, T, N, grid.beta, value, se, clamped, float(vals.mean()))


# -- tube probability ----------------------------------------------------------------------

def tube_probability(model, schedule, phi, delta, n, T, N, seed, threads=1, chunk=1024):
    """Fraction of ``N`` paths with ``sup_t |X^n(t) - phi(t)| <= delta``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    grid = time_grid(schedule, n, T)
    if math.isinf(delta):
        return TubeEstimate(n, T, N, grid.beta, delta, N, 1.0, 0.0, False)
    if abs(phi.T - T) > 1e-12 * max(1.0, T):
        raise ValueError("reference path horizon differs from T")
    runner = _Runner(model, grid)

    def one(ids):
        tracker = _SupTracker(grid.times, phi, stop_above=delta)
        runner.run(seed, ids, observer=tracker)
        return int(np.sum(tracker.sup <= delta))

    hits = sum(_map_chunks(one, N, chunk, threads))
    if hits == 0:
        return TubeEstimate(n, T, N, grid.beta, delta, 0, 0.0, math.log(N) / grid.beta, True,
                            {"note": "no sample stayed in the tube; log_rate is a lower bound"})
    p = hits / N
    return TubeEstimate(n, T, N, grid.beta, delta, hits, p, abs(math.log(p)) / grid.beta, False)


def laplace_bracket(estimate, inf_value, M, frac=0.15):
    """Compare an estimate with ``inf{F + I}``; violations are reported only."""
    lo, hi = inf_value - frac * M, inf_value + frac * M
    v = estimate.value if hasattr(estimate, "value") else float(estimate)
    return {"estimate": v, "inf_F_plus_I": float(inf_value), "lower": lo, "upper": hi,
            "inside": bool(lo <= v <= hi)}
