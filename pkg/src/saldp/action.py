"""Action functional on piecewise-linear paths and minimum-action search.

    I(phi) = int_0^T L(phi(t), phi'(t)) / h(t) dt

evaluated segment by segment with Gauss-Legendre quadrature.  Slopes are
constant on each segment, so one Legendre transform per node suffices (and
one per segment when the model does not depend on the parameter).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rate import RateEval, RateValue, local_rate
from .sa_sim import Path, g_bar, ode_limit

START_TOL = 1e-10


@dataclass
class ActionProblem:
    """Minimise ``I`` over paths with ``K`` equal segments on ``[0, T]``.

    ``x_end=None`` leaves the end point free.
    """

    model: object
    schedule: object
    T: float
    x0: np.ndarray | None = None
    x_end: np.ndarray | None = None
    K: int = 8
    nodes: int = 8

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("need at least one segment")
        if not self.T > 0:
            raise ValueError("T must be positive")
        self.x0 = self.model.x0 if self.x0 is None else np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.x_end is not None:
            self.x_end = np.atleast_1d(np.asarray(self.x_end, dtype=float))

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.K + 1)


@dataclass
class MinActionResult:
    path: Path
    value: RateValue
    converged: bool
    grad_norm: float
    iterations: int
    start_index: int
    starts: list = field(default_factory=list)


class _Integrand:
    """Quadrature bookkeeping shared by :func:`action` and its gradient."""

    def __init__(self, model, schedule, T, nodes):
        self.model = model
        self.schedule = schedule
        self.T = T
        self.xi, self.wi = np.polynomial.legendre.leggauss(nodes)
        self.const = model.state_independent
        self._ev = RateEval(model, model.x0) if self.const else None
        self._warm = None

    def ev(self, x):
        return self._ev if self.const else RateEval(self.model, x)

    def h(self, t):
        return np.asarray(self.schedule.h_limit(self.T, t), dtype=float)

    def segment(self, a, b, s0, s1, with_grad=False):
        """Integral over one segment from value ``a`` at ``s0`` to ``b`` at ``s1``."""
        dt = s1 - s0
        beta = (b - a) / dt
        theta = 0.5 * (self.xi + 1.0)
        ts = s0 + theta * dt
        ws = 0.5 * dt * self.wi / self.h(ts)
        total = 0.0
        ga = np.zeros_like(a)
        gb = np.zeros_like(a)
        if self.const:
            L = local_rate(self.model, a, beta, alpha0=self._warm, ev=self._ev)
            if L.infinite:
                return L, None, None
            self._warm = L.argmax
            total = float(L) * ws.sum()
            if with_grad:
                ga = -ws.sum() * L.argmax / dt
                gb = -ga
            return total, ga, gb
        warm = self._warm
        for th, w in zip(theta, ws):
            x = (1 - th) * a + th * b
            ev = self.ev(x)
            L = local_rate(self.model, x, beta, alpha0=warm, ev=ev)
            if L.infinite:
                return L, None, None
            warm = L.argmax
            total += w * float(L)
            if with_grad:
                dx = -_dx_hamiltonian(self.model, x, L.argmax)
                ga += w * ((1 - th) * dx - L.argmax / dt)
                gb += w * (th * dx + L.argmax / dt)
        self._warm = warm
        return total, ga, gb


def _dx_hamiltonian(model, x, alpha, h=1e-6):
    out = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        out[j] = (RateEval(model, x + e).H(alpha) - RateEval(model, x - e).H(alpha)) / (2 * h)
    return out


def _evaluate(integrand, path, with_grad=False):
    vals = path.values
    total = 0.0
    grad = np.zeros_like(vals) if with_grad else None
    per_segment = []
    for j in range(len(path.times) - 1):
        part, ga, gb = integrand.segment(vals[j], vals[j + 1], path.times[j], path.times[j + 1], with_grad)
        if isinstance(part, RateValue) and part.infinite:
            return RateValue.inf(reason="infinite local rate", segment=j), None
        total += part
        per_segment.append(part)
        if with_grad:
            grad[j] += ga
            grad[j + 1] += gb
    return RateValue(total, info={"segments": per_segment}), grad


def action(model, schedule, T, path, nodes=8, x0=None):
    """``I(path)``; tagged ``+inf`` if the path does not start at the model's
    initial point or a quadrature node has infinite local rate."""
    x0 = model.x0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    if abs(path.T - T) > 1e-12 * max(1.0, T):
        raise ValueError(f"path horizon {path.T} differs from T={T}")
    if np.max(np.abs(path.start - x0)) > START_TOL:
        return RateValue.inf(reason="path does not start at x0")
    return _evaluate(_Integrand(model, schedule, T, nodes), path)[0]


def action_and_grad(model, schedule, T, path, nodes=8):
    """Action and its gradient with respect to every breakpoint value.

    Uses the envelope identities ``dL/dbeta = alpha*`` and
    ``dL/dx = -dH/dx(x, alpha*)``; the latter by central differences.
    """
    return _evaluate(_Integrand(model, schedule, T, nodes), path, with_grad=True)


# -- minimum-action search ---------------------------------------------------------------

def _bfgs(fun, z0, gtol=1e-8, max_iter=300, max_step=0.5):
    z = z0.copy()
    f, g = fun(z)
    if not math.isfinite(f):
        return z, f, g, False, 0
    n = len(z)
    Hinv = np.eye(n) * min(1.0, 0.01 / max(np.linalg.norm(g), 1e-300))
    first = True
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) <= gtol:
            return z, f, g, True, it
        d = -Hinv @ g
        if d @ g >= 0:
            Hinv = np.eye(n)
            d = -g
        nd = np.linalg.norm(d)
        if nd > max_step:
            d *= max_step / nd
        step = 1.0
        accepted = False
        while step > 1e-12:
            zt = z + step * d
            ft, gt = fun(zt)
            if math.isfinite(ft) and ft <= f + 1e-4 * step * (g @ d):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return z, f, g, bool(np.linalg.norm(g) <= 1e3 * gtol), it
        s, yv = zt - z, gt - g
        sy = s @ yv
        if sy > 1e-14:
            if first:
                # rescale the initial inverse Hessian to the observed curvature
                Hinv = (sy / (yv @ yv)) * np.eye(n)
                first = False
            rho = 1.0 / sy
            I = np.eye(n)
            Hinv = (I - rho * np.outer(s, yv)) @ Hinv @ (I - rho * np.outer(yv, s)) + rho * np.outer(s, s)
        done = abs(f - ft) <= 1e-15 * max(1.0, abs(f)) and np.linalg.norm(gt) <= 1e3 * gtol
        z, f, g = zt, ft, gt
        if done:
            return z, f, g, True, it
    return z, f, g, bool(np.linalg.norm(g) <= gtol), max_iter


def min_action_path(problem, init=None):
    """Local minimiser of the discretised action over interior breakpoints.

    Starts from the straight line between the end points (towards the
    limit-ODE end point when the end is free), from the limit-ODE path itself
    when the end is free, and from
    ``init`` when given; the lowest value wins, ties going to the earliest
    start.
    """
    model = problem.model
    ts = problem.times
    K, d = problem.K, len(problem.x0)
    free_end = problem.x_end is None
    integ = _Integrand(model, problem.schedule, problem.T, problem.nodes)

    def assemble(z):
        body = z.reshape(-1, d)
        tail = [] if free_end else [problem.x_end]
        return np.vstack([problem.x0[None, :], body, *[t[None, :] for t in tail]])

    def fun(z):
        integ._warm = None
        val, grad = _evaluate(integ, Path(ts, assemble(z)), with_grad=True)
        if val.infinite:
            return math.inf, None
        return float(val), grad[1:K + 1].ravel() if free_end else grad[1:K].ravel()

    starts = []
    if free_end:
        ode = ode_limit(model, problem.x0, problem.T, problem.T / (16 * K))(ts)
        end = ode[-1]
    else:
        end = problem.x_end
    starts.append(problem.x0 + (ts / problem.T)[:, None] * (end - problem.x0))
    if free_end:
        starts.append(ode)
    if init is not None:
        starts.append(init(ts) if isinstance(init, Path) else np.asarray(init, dtype=float).reshape(K + 1, d))

    best = None
    records = []
    for i, vals in enumerate(starts):
        z0 = (vals[1:K + 1] if free_end else vals[1:K]).ravel()
        if z0.size == 0:
            v, _ = _evaluate(integ, Path(ts, assemble(z0)))
            res = (z0, float(v), np.zeros(0), True, 0)
        else:
            res = _bfgs(fun, z0)
        records.append({"start": i, "value": res[1], "converged": res[3]})
        if math.isfinite(res[1]) and (best is None or res[1] < best[1][1]):
            best = (i, res)
    if best is None:
        return MinActionResult(Path(ts, starts[0]), RateValue.inf(reason="every start has infinite action"),
                               False, math.inf, 0, -1, records)
    i, (z, f, g, ok, it) = best
    return MinActionResult(Path(ts, assemble(z)), RateValue(f), ok, float(np.linalg.norm(g)), it, i, records)


def equilibrium(model, x_guess, tol=1e-12, max_iter=100):
    """Zero of the averaged drift near ``x_guess`` (Newton, numeric Jacobian)."""
    x = np.atleast_1d(np.asarray(x_guess, dtype=float)).copy()
    for _ in range(max_iter):
        f = g_bar(model, x)
        if np.linalg.norm(f) <= tol:
            break
        J = np.empty((len(x), len(x)))
        for j in range(len(x)):
            e = np.zeros_like(x)
            e[j] = 1e-6
            J[:, j] = (g_bar(model, x + e) - g_bar(model, x - e)) / 2e-6
        x = x - np.linalg.solve(J, f)
    return x
