"""Step-size schedules and the time bookkeeping built on them.

Indexing convention: step sizes are ``eps_k`` for ``k >= 1`` and the recursion
moving an iterate *to* index ``k`` consumes ``eps_k``.  Partial sums
``t_n = eps_1 + ... + eps_n`` (with ``t_0 = 0``) are the interpolation times.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HARMONIC = "harmonic"
POLYNOMIAL = "polynomial"
CONSTANT = "constant"
CUSTOM = "custom"
KINDS = (HARMONIC, POLYNOMIAL, CONSTANT, CUSTOM)

# relative slack used when comparing a time against partial sums; absorbs the
# rounding of t_n + T so that e.g. constant 0.1 steps give floor(T/eps) exactly
_TIME_SLACK = 8 * np.finfo(float).eps


class ScheduleError(ValueError):
    pass


class ScheduleExhausted(IndexError):
    """A custom (finite) schedule was asked for a step it does not have."""


class LimitNotConverged(ScheduleError):
    def __init__(self, message, estimates=None):
        super().__init__(message)
        self.estimates = estimates


@dataclass(frozen=True)
class HLimitEstimate:
    value: float
    converged: bool
    estimates: tuple = ()


@dataclass
class StepSchedule:
    """Deterministic step sizes with a lazily grown cache of partial sums.

    Parameters
    ----------
    kind : one of ``harmonic`` (1/k), ``polynomial`` ((k+1)^-rho),
        ``constant`` (eps) or ``custom`` (explicit finite list).
    rho : exponent for the polynomial kind, in (0, 1).
    eps : step for the constant kind.
    steps : explicit ``eps_1, eps_2, ...`` for the custom kind.
    """

    kind: str = HARMONIC
    rho: float | None = None
    eps: float | None = None
    steps: Sequence[float] | None = None
    _t: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")
        if self.kind == POLYNOMIAL:
            if self.rho is None or not 0.0 < self.rho < 1.0:
                raise ScheduleError("polynomial schedule needs rho in (0, 1)")
        elif self.kind == CONSTANT:
            if self.eps is None or not self.eps > 0:
                raise ScheduleError("constant schedule needs eps > 0")
        elif self.kind == CUSTOM:
            if self.steps is None or len(self.steps) == 0:
                raise ScheduleError("custom schedule needs a non-empty list of steps")
            arr = np.asarray(self.steps, dtype=float)
            if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
                raise ScheduleError("custom steps must be finite and positive")
            self.steps = tuple(float(s) for s in arr)
        self._t = np.zeros(1)

    # -- construction helpers ------------------------------------------------
    @classmethod
    def harmonic(cls):
        return cls(HARMONIC)

    @classmethod
    def polynomial(cls, rho):
        return cls(POLYNOMIAL, rho=rho)

    @classmethod
    def constant(cls, eps):
        return cls(CONSTANT, eps=eps)

    @classmethod
    def custom(cls, steps):
        return cls(CUSTOM, steps=steps)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", HARMONIC)
        return cls(kind, **d)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == POLYNOMIAL:
            out["rho"] = self.rho
        elif self.kind == CONSTANT:
            out["eps"] = self.eps
        elif self.kind == CUSTOM:
            out["steps"] = list(self.steps)
        return out

    @property
    def length(self):
        """Number of available steps (``inf`` unless custom)."""
        return len(self.steps) if self.kind == CUSTOM else math.inf

    # -- step sizes ------------------------------------------------------------
    def step(self, k):
        """Step size(s) ``eps_k`` for ``k >= 1`` (scalar or integer array)."""
        k_arr = np.asarray(k)
        if np.any(k_arr < 1):
            raise ScheduleError("step index must be >= 1")
        if self.kind == HARMONIC:
            out = 1.0 / k_arr.astype(float)
        elif self.kind == POLYNOMIAL:
            out = (k_arr.astype(float) + 1.0) ** (-self.rho)
        elif self.kind == CONSTANT:
            out = np.full(k_arr.shape, float(self.eps))
        else:
            if np.any(k_arr > len(self.steps)):
                raise ScheduleExhausted(f"custom schedule has only {len(self.steps)} steps")
            out = np.asarray(self.steps)[k_arr - 1]
        return float(out) if np.ndim(out) == 0 else out

    # -- partial sums ------------------------------------------------------------
    def _ensure(self, n):
        """Make sure ``t_0..t_n`` are cached; returns the published array."""
        t = self._t
        if len(t) > n:
            return t
        if n > self.length:
            raise ScheduleExhausted(f"custom schedule has only {self.length} steps, asked for t_{n}")
        with self._lock:
            t = self._t
            if len(t) > n:
                return t
            old = len(t) - 1
            new = max(n, 2 * old, 1024)
            if self.kind == CUSTOM:
                new = min(new, len(self.steps))
            ks = np.arange(old + 1, new + 1)
            if self.kind == CONSTANT:
                # exact multiples avoid drift in floor(T/eps) style counts
                ext = ks * float(self.eps)
            else:
                ext = t[-1] + np.cumsum(self.step(ks))
            grown = np.concatenate([t, ext])
            self._t = grown  # publish after the array is complete
            return grown

    def t_of(self, n):
        """Interpolation time ``t_n``; ``t_0 = 0``."""
        if n < 0:
            raise ScheduleError("n must be >= 0")
        return float(self._ensure(int(n))[int(n)])

    def times(self, start, stop):
        """Array ``t_start, ..., t_stop`` (inclusive)."""
        t = self._ensure(int(stop))
        return t[int(start): int(stop) + 1].copy()

    def m_of(self, t):
        """Largest ``n`` with ``t_n <= t`` (closed on the left: ``m_of(t_n) == n``)."""
        if t < 0:
            raise ScheduleError("t must be >= 0")
        target = t + _TIME_SLACK * max(1.0, abs(t))
        arr = self._t
        while arr[-1] <= target:
            if len(arr) - 1 >= self.length:
                raise ScheduleExhausted("custom schedule ends before time %g" % t)
            arr = self._ensure(2 * (len(arr) - 1) + 1)
        return int(np.searchsorted(arr, target, side="right") - 1)

    def beta_n(self, n, T):
        """Number of recursion steps inside the window ``(t_n, t_n + T]``."""
        if T <= 0:
            raise ScheduleError("T must be positive")
        return self.m_of(self.t_of(n) + T) - n

    def h_n(self, n, T, t):
        """Piecewise-constant time scale ``beta_n * eps_{n+i-1}`` on ``[0, T)``.

        ``t`` may be a scalar or an array.  On the tail ``[t_{n+beta_n} - t_n, T)``
        the same rule is continued (``i = beta_n + 1``).
        """
        if n < 1:
            raise ScheduleError("h_n needs n >= 1")
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(t_arr >= T):
            raise ScheduleError("h_n is defined on [0, T)")
        beta = self.beta_n(n, T)
        tn = self.t_of(n)
        arr = self._ensure(n + beta + 2)
        local = arr[n: n + beta + 2] - tn
        # i - 1 = number of breakpoints t_{n+1}-t_n, ... lying at or below t
        i_minus_1 = np.searchsorted(local, t_arr + _TIME_SLACK * np.maximum(1.0, t_arr), side="right") - 1
        out = beta * self.step(n + i_minus_1)
        return float(out) if np.ndim(out) == 0 else out

    def h_limit(self, T, t, numeric=False):
        """Uniform limit ``h(t)`` of ``h_n`` as ``n -> inf``.

        Harmonic: ``exp(-t) (exp(T) - 1)``; polynomial: ``1``; constant: the
        (n-independent) value ``floor(T/eps) eps``.  Custom schedules, or any
        kind with ``numeric=True``, use an extrapolated numeric limit and raise
        :class:`LimitNotConverged` when the estimates do not settle.
        """
        t_arr = np.asarray(t, dtype=float)
        if numeric or self.kind == CUSTOM:
            est = self.h_limit_numeric(T, t_arr)
            if not est.converged:
                raise LimitNotConverged("numeric limit of h_n did not converge", est.estimates)
            return est.value
        if self.kind == HARMONIC:
            out = np.exp(-t_arr) * math.expm1(T)
        elif self.kind == POLYNOMIAL:
            out = np.ones_like(t_arr)
        else:
            out = np.full_like(t_arr, self.beta_n(1, T) * float(self.eps))
        return float(out) if np.ndim(out) == 0 else out

    def h_limit_numeric(self, T, t, ns=(10**3, 10**4, 10**5), tol=1e-3):
        """Aitken-extrapolated limit of ``h_n(t)`` over the start indices ``ns``."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        t_eval = np.minimum(t_arr, np.nextafter(T, 0.0))
        usable = []
        for n in ns:
            try:
                beta = self.beta_n(n, T)
                self._ensure(n + beta + 2)
            except ScheduleExhausted:
                continue
            usable.append(n)
        if len(usable) < 3:
            return HLimitEstimate(float("nan"), False, tuple(usable))
        vals = np.array([np.atleast_1d(self.h_n(n, T, t_eval)) for n in usable[-3:]])
        h1, h2, h3 = vals
        d1, d2 = h2 - h1, h3 - h2
        denom = d2 - d1
        safe = np.abs(denom) > 1e-14
        extrap = np.where(safe, h3 - np.where(safe, d2 * d2 / np.where(safe, denom, 1.0), 0.0), h3)
        converged = bool(np.all(np.abs(d2) <= np.maximum(np.abs(d1), 1e-12)) and np.all(np.abs(extrap - h3) <= tol))
        value = extrap if np.ndim(t) else extrap[0]
        return HLimitEstimate(value if np.ndim(value) else float(value), converged, tuple(map(tuple, vals)))
