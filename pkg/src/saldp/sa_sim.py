"""The stochastic approximation recursion, its interpolation and the limit ODE.

Starting at index ``n`` the iterates are ``X^n_n = x0`` and

    X^n_{n+k+1} = X^n_{n+k} + eps_{n+k+1} g(X^n_{n+k}, Y_{n+k+1}),
    Y_{n+k+1} ~ rho_{X^n_{n+k}}(Y_{n+k}, .),

placed at times ``t_{n+k} - t_n`` and joined linearly.  The final step is cut
so that the path ends exactly at the horizon ``T``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernel import invariant_measure

_BLOCK = 2048  # uniforms drawn per stream at a time


@dataclass
class SAModel:
    """Update map ``g``, noise kernel and starting point of a recursion.

    ``g(X, Z)`` must be vectorised: ``X`` is ``(B, d1)``, ``Z`` an integer
    array ``(B,)`` of noise indices, result ``(B, d1)``.  ``step`` optionally
    replaces the additive update ``X + eps g(X, Z)`` (same shapes).
    ``hamiltonian``/``mean_drift`` are closed-form overrides for models whose
    noise is not finite.
    """

    kernel: object
    g: Callable | None
    x0: np.ndarray
    y0: int = 0
    step: Callable | None = None
    hamiltonian: Callable | None = None
    hamiltonian_grad: Callable | None = None
    mean_drift: Callable | None = None
    g_x_independent: bool = False
    name: str = "model"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))

    @property
    def d1(self):
        return self.x0.shape[0]

    @property
    def state_independent(self):
        """True when neither the kernel nor ``g`` depends on the parameter."""
        return bool(self.g_x_independent and self.kernel is not None and self.kernel.x_independent)

    def g_values(self, x):
        """``g(x, z)`` for every noise point, shape ``(S, d1)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        S = self.kernel.size
        return np.asarray(self.g(np.tile(x, (S, 1)), np.arange(S)), dtype=float).reshape(S, self.d1)

    def update(self, X, Z, eps):
        if self.step is not None:
            return self.step(X, Z, eps)
        return X + eps * self.g(X, Z)


@dataclass
class Path:
    """Piecewise-linear path through ``(times[j], values[j])``; ``times[0] = 0``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        self.values = v.reshape(len(self.times), -1)
        if len(self.times) < 2:
            raise ValueError("a path needs at least two breakpoints")
        if self.times[0] != 0.0:
            raise ValueError("paths start at time 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("breakpoint times must be strictly increasing")

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def start(self):
        return self.values[0]

    @property
    def end(self):
        return self.values[-1]

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def slopes(self):
        return np.diff(self.values, axis=0) / np.diff(self.times)[:, None]

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.column_stack([np.interp(t_arr, self.times, self.values[:, j]) for j in range(self.dim)])
        return out[0] if np.ndim(t) == 0 else out

    @classmethod
    def linear(cls, start, end, T, segments=1):
        s = np.linspace(0.0, T, segments + 1)
        a, b = np.atleast_1d(start).astype(float), np.atleast_1d(end).astype(float)
        return cls(s, a + (s / T)[:, None] * (b - a))

    def to_csv(self, fh, header=True):
        if header:
            fh.write("t," + ",".join(f"x_{j + 1}" for j in range(self.dim)) + "\n")
        for t, v in zip(self.times, self.values):
            fh.write(repr(float(t)) + "," + ",".join(repr(float(c)) for c in v) + "\n")


def deviation_sup(path_a, path_b, tol=1e-12):
    """Sup-norm distance between two piecewise-linear paths (exact: the
    difference is linear between consecutive union breakpoints)."""
    if abs(path_a.T - path_b.T) > tol * max(1.0, path_a.T):
        raise ValueError(f"horizon mismatch: {path_a.T} vs {path_b.T}")
    ts = np.union1d(path_a.times, np.minimum(path_b.times, path_a.T))
    diff = path_a(ts) - path_b(ts)
    return float(np.linalg.norm(diff, axis=1).max())


# -- sampling ---------------------------------------------------------------------

def stream(seed, index):
    """Counter-based generator for sample ``index`` under ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


@dataclass(frozen=True)
class TimeGrid:
    """Breakpoints of ``X^n`` on ``[0, T]`` and the step sizes feeding them."""

    n: int
    T: float
    beta: int
    times: np.ndarray
    eps: np.ndarray
    last_fraction: float  # portion of the final step kept before hitting T

    @property
    def steps(self):
        return len(self.eps)


def time_grid(schedule, n, T):
    beta = schedule.beta_n(n, T)
    if beta < 1:
        raise ValueError(f"no recursion step falls in the window (beta_n = {beta}); increase T or decrease n")
    tn = schedule.t_of(n)
    ts = schedule.times(n, n + beta + 1) - tn
    eps = np.asarray(schedule.step(np.arange(n + 1, n + beta + 2)), dtype=float)
    if ts[beta] >= T - 1e-12 * max(1.0, T):
        times = ts[: beta + 1].copy()
        times[-1] = T
        return TimeGrid(n, T, beta, times, eps[:beta], 1.0)
    times = ts[: beta + 2].copy()
    frac = (T - ts[beta]) / eps[beta]
    times[-1] = T
    return TimeGrid(n, T, beta, times, eps, float(frac))


def _sample(rows, u):
    cdf = np.cumsum(rows, axis=1)
    cdf /= cdf[:, -1:]
    return (cdf <= u[:, None]).sum(axis=1)


class _Runner:
    """Vectorised simulation of a batch of independent trajectories."""

    def __init__(self, model, grid):
        if model.kernel is None:
            raise ValueError("model has no finite noise kernel to simulate")
        self.model = model
        self.grid = grid

    def run(self, seed, ids, observer=None, keep=False):
        model, grid = self.model, self.grid
        B = len(ids)
        gens = [stream(seed, i) for i in ids]
        X = np.tile(model.x0, (B, 1))
        Y = np.full(B, int(model.y0), dtype=np.intp)
        K = grid.steps
        values = np.empty((B, K + 1, model.d1)) if keep else None
        if keep:
            values[:, 0] = X
        if observer is not None:
            observer.start(X)
        for start in range(0, K, _BLOCK):
            nb = min(_BLOCK, K - start)
            U = np.stack([g.random(nb) for g in gens])
            for j in range(nb):
                k = start + j
                Z = _sample(model.kernel.rows(X, Y), U[:, j])
                Xn = model.update(X, Z, grid.eps[k])
                if k == K - 1 and grid.last_fraction < 1.0:
                    Xn = X + grid.last_fraction * (Xn - X)
                if keep:
                    values[:, k + 1] = Xn
                if observer is not None and observer.step(k + 1, X, Xn):
                    return values
                X, Y = Xn, Z
        return values


def simulate_batch(model, schedule, n, T, seed, ids, threads=1, chunk=512):
    """Paths for streams ``ids``; returns ``(times, values[B, M, d1])``."""
    grid = time_grid(schedule, n, T)
    runner = _Runner(model, grid)
    ids = list(ids)
    chunks = [ids[i: i + chunk] for i in range(0, len(ids), chunk)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        parts = list(pool.map(lambda c: runner.run(seed, c, keep=True), chunks))
    return grid.times, np.concatenate(parts, axis=0)


def simulate_segment(model, schedule, n, T, seed):
    """One interpolated trajectory ``X^n`` on ``[0, T]`` (stream 0 of ``seed``)."""
    grid = time_grid(schedule, n, T)
    values = _Runner(model, grid).run(seed, [0], keep=True)
    return Path(grid.times, values[0])


def run_chain(model, schedule, n_steps, seed, start=0, record_every=1):
    """Plain recursion ``X_{start}, ..., X_{start+n_steps}`` from ``x0``.

    Returns ``(indices, X history, last noise state)``.
    """
    gen = stream(seed, 0)
    x = model.x0[None, :].copy()
    y = np.array([int(model.y0)], dtype=np.intp)
    keep = [0]
    hist = [x[0].copy()]
    eps = schedule.step(np.arange(start + 1, start + n_steps + 1))
    eps = np.atleast_1d(eps)
    for b0 in range(0, n_steps, _BLOCK):
        U = gen.random(min(_BLOCK, n_steps - b0))
        for j, u in enumerate(U):
            k = b0 + j
            y = _sample(model.kernel.rows(x, y), np.array([u]))
            x = model.update(x, y, eps[k])
            if (k + 1) % record_every == 0 or k + 1 == n_steps:
                keep.append(k + 1)
                hist.append(x[0].copy())
    return np.array(keep), np.array(hist), int(y[0])


def noise_chain(kernel, x, y0, n_steps, seed):
    """Noise trajectory ``Y_1..Y_n`` of the frozen kernel ``rho_x``."""
    P = kernel.matrix(x)
    cdf = np.cumsum(P, axis=1)
    cdf /= cdf[:, -1:]
    U = stream(seed, 0).random(n_steps)
    out = np.empty(n_steps, dtype=np.intp)
    y = int(y0)
    for k in range(n_steps):
        y = int(np.searchsorted(cdf[y], U[k], side="right"))
        out[k] = y
    return out


# -- averaged dynamics -------------------------------------------------------------

def g_bar(model, x):
    """Averaged drift ``sum_y g(x, y) pi_x(y)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if model.mean_drift is not None:
        return np.atleast_1d(np.asarray(model.mean_drift(x), dtype=float))
    pi = invariant_measure(model.kernel, x).pi
    return pi @ model.g_values(x)


def ode_limit(model, x0, T, dt):
    """Classical RK4 solution of ``x' = g_bar(x)`` sampled every ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = max(1, int(math.ceil(T / dt - 1e-9)))
    times = np.minimum(np.arange(steps + 1) * dt, T)
    times[-1] = T
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    out = [x.copy()]
    f = lambda z: g_bar(model, z)
    for k in range(steps):
        h = times[k + 1] - times[k]
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(x.copy())
    return Path(times, np.array(out))
