"""Hamiltonian, local rate and empirical-measure rates on finite noise spaces.

At a frozen parameter ``x`` the tilted matrix

    K_alpha(y, z) = rho_x(y, z) exp(<alpha, g(x, z)>)

has a simple Perron root ``lambda(alpha)`` whenever ``rho_x`` is primitive, and
``H(x, alpha) = log lambda(alpha)``.  The local rate ``L(x, .)`` is its convex
conjugate.  A second, independent route to ``L`` minimises relative entropy
over stationary pair laws; :func:`local_rate_oracle` implements it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import ConvergenceError
from .kernel import invariant_measure, require_primitive

ALPHA_CAP = 1e3
INF_RESIDUAL = 1e-6


class RateValue(float):
    """A float that may be the tagged value ``+inf`` (``infinite=True``).

    Extra fields: ``argmax`` (the maximising dual vector, when one exists),
    ``converged`` and a free-form ``info`` dict.
    """

    def __new__(cls, value, infinite=False, argmax=None, converged=True, info=None):
        obj = super().__new__(cls, math.inf if infinite else float(value))
        obj.infinite = bool(infinite)
        obj.argmax = argmax
        obj.converged = converged
        obj.info = info or {}
        return obj

    @classmethod
    def inf(cls, **info):
        return cls(math.inf, infinite=True, converged=True, info=info)

    def __repr__(self):
        return "RateValue(+inf)" if self.infinite else f"RateValue({float(self)!r})"

    def to_json(self):
        return "inf" if self.infinite else float(self)


def is_infinite(v):
    return bool(getattr(v, "infinite", False)) or v == math.inf


def relative_entropy(p, q):
    """``sum p log(p/q)`` with ``0 log 0 = 0``; tagged ``+inf`` if ``p`` is not
    absolutely continuous with respect to ``q``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    pos = p > 0
    if np.any(pos & (q <= 0)):
        return RateValue.inf(reason="not absolutely continuous")
    return RateValue(float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos])))))


# -- Perron root ---------------------------------------------------------------------

@dataclass(frozen=True)
class PerronData:
    log_root: float
    left: np.ndarray
    right: np.ndarray
    residual: float


def perron(K, log_scale=0.0, tol=1e-10, max_squarings=80):
    """Perron root of a nonnegative primitive matrix ``exp(log_scale) K``.

    Repeated squaring of the max-normalised matrix drives it to the rank-one
    projector ``v u^T``; a few power steps then polish both vectors and the
    root is the Rayleigh quotient ``u^T K v / u^T v``.
    """
    K = np.asarray(K, dtype=float)
    S = K.shape[0]
    if S == 1:
        lam = K[0, 0]
        return PerronData(math.log(lam) + log_scale, np.ones(1), np.ones(1), 0.0)
    scale = K.max()
    A = K / scale
    M = A.copy()
    for _ in range(max_squarings):
        M2 = M @ M
        M2 /= M2.max()
        if np.max(np.abs(M2 - M)) < 1e-15:
            M = M2
            break
        M = M2
    v = M.sum(axis=1)
    u = M.sum(axis=0)
    for _ in range(3):
        v = A @ v
        v /= np.linalg.norm(v)
        u = u @ A
        u /= np.linalg.norm(u)
    lam = float(u @ A @ v / (u @ v))
    res = float(np.linalg.norm(A @ v - lam * v) / (lam * np.linalg.norm(v)))
    if not (lam > 0 and res <= tol):
        w, R = np.linalg.eig(A)
        j = int(np.argmax(w.real))
        lam = float(w[j].real)
        v = np.abs(R[:, j].real)
        wl, L = np.linalg.eig(A.T)
        u = np.abs(L[:, int(np.argmax(wl.real))].real)
        res = float(np.linalg.norm(A @ v - lam * v) / (lam * np.linalg.norm(v)))
        if not (lam > 0 and res <= max(tol, 1e-9)):
            raise ConvergenceError(f"Perron root did not converge (residual {res:.2e})", residual=res)
    return PerronData(math.log(lam) + math.log(scale) + log_scale, u, v, res)


# -- evaluator at a frozen parameter ------------------------------------------------

class RateEval:
    """Hamiltonian machinery at one parameter point ``x``.

    Built once per ``x``; afterwards read-only, so it may be shared.
    """

    def __init__(self, model, x):
        self.model = model
        self.x = np.atleast_1d(np.asarray(x, dtype=float))
        self.d1 = model.d1
        self._closed = model.hamiltonian is not None
        if self._closed:
            self.P = None
            self.G = None
            return
        self.P = model.kernel.matrix(self.x)
        require_primitive(self.P)
        self.G = model.g_values(self.x)
        self.lo = self.G.min(axis=0)
        self.hi = self.G.max(axis=0)

    # H -----------------------------------------------------------------------
    def _tilt(self, alpha):
        a = self.G @ alpha
        c = float(a.max())
        return self.P * np.exp(a - c)[None, :], c

    def perron_data(self, alpha):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        K, c = self._tilt(alpha)
        return perron(K, log_scale=c)

    def H(self, alpha):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        if self._closed:
            return float(self.model.hamiltonian(self.x, alpha))
        if not np.any(alpha):
            return 0.0
        return self.perron_data(alpha).log_root

    def grad(self, alpha):
        """Mean of ``g`` under the stationary pair law of the tilted chain."""
        return self.value_grad(alpha)[1]

    def value_grad(self, alpha):
        """``(H, grad H)`` from a single Perron solve."""
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        if self._closed:
            if self.model.hamiltonian_grad is not None:
                gr = np.atleast_1d(np.asarray(self.model.hamiltonian_grad(self.x, alpha), dtype=float))
            else:
                gr = _central_grad(self.H, alpha)
            return self.H(alpha), gr
        K, c = self._tilt(alpha)
        pd = perron(K, log_scale=c)
        W = pd.left[:, None] * K * pd.right[None, :]
        col = W.sum(axis=0)
        val = 0.0 if not np.any(alpha) else pd.log_root
        return val, col @ self.G / col.sum()

    def hess(self, alpha, h=1e-5):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        d = len(alpha)
        out = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            out[:, j] = (self.grad(alpha + e) - self.grad(alpha - e)) / (2 * h)
        return 0.5 * (out + out.T)

    def mean(self):
        if self._closed:
            return self.grad(np.zeros(self.d1))
        return invariant_measure(self.model.kernel, self.x).pi @ self.G


def _central_grad(f, alpha, h=1e-6):
    out = np.empty_like(alpha)
    for j in range(len(alpha)):
        e = np.zeros_like(alpha)
        e[j] = h
        out[j] = (f(alpha + e) - f(alpha - e)) / (2 * h)
    return out


def rate_eval(model, x):
    return RateEval(model, x)


def hamiltonian(model, x, alpha):
    """``H(x, alpha)``: log Perron root of the tilted kernel (or the model's
    closed form)."""
    return RateEval(model, x).H(alpha)


def hamiltonian_grad(model, x, alpha):
    return RateEval(model, x).grad(alpha)


def time_dep_hamiltonian(model, schedule, T, t, x, alpha):
    """``H(x, alpha h(t)) / h(t)`` with ``h`` the schedule's limiting time scale."""
    h = float(schedule.h_limit(T, t))
    return hamiltonian(model, x, np.asarray(alpha, dtype=float) * h) / h


# -- Legendre transform ---------------------------------------------------------------

def local_rate(model, x, beta, alpha0=None, tol=1e-11, max_iter=400, ev=None):
    """``L(x, beta) = sup_alpha <alpha, beta> - H(x, alpha)``.

    Damped Newton ascent from ``alpha0`` (default 0).  If the iterates reach
    ``|alpha| = ALPHA_CAP`` with ``beta - grad H`` still above ``INF_RESIDUAL``,
    ``beta`` is outside the closure of the gradient range and the tagged
    ``+inf`` is returned; otherwise the attained value is reported (``beta`` on
    the boundary of the range).
    """
    ev = ev or RateEval(model, x)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.shape != (ev.d1,):
        raise ValueError(f"beta must have {ev.d1} components")
    if not np.all(np.isfinite(beta)):
        return RateValue.inf(reason="non-finite velocity")
    if ev.G is not None:
        span = np.maximum(ev.hi - ev.lo, 1.0)
        if np.any(beta < ev.lo - 1e-12 * span) or np.any(beta > ev.hi + 1e-12 * span):
            return RateValue.inf(reason="outside the range of g")

    alpha = np.zeros(ev.d1) if alpha0 is None else np.array(alpha0, dtype=float)
    H0, g0 = ev.value_grad(alpha)
    f = float(alpha @ beta) - H0
    if not np.isfinite(f):
        alpha = np.zeros(ev.d1)
        H0, g0 = ev.value_grad(alpha)
        f = 0.0
    radius = 4.0
    mu = 0.0
    scale = max(1.0, float(np.linalg.norm(beta)))
    r = beta - g0
    for it in range(max_iter):
        rn = float(np.linalg.norm(r))
        if rn <= tol * scale:
            return RateValue(f, argmax=alpha, converged=True, info={"iterations": it, "residual": rn})
        Hs = ev.hess(alpha)
        step = None
        for _ in range(40):
            try:
                d = np.linalg.solve(Hs + (mu + 1e-12) * np.eye(ev.d1), r)
            except np.linalg.LinAlgError:
                mu = max(10 * mu, 1e-8)
                continue
            if not np.all(np.isfinite(d)):
                mu = max(10 * mu, 1e-8)
                continue
            if d @ r <= 0:
                d = r.copy()
            nd = float(np.linalg.norm(d))
            if nd > radius:
                d *= radius / nd
            trial = alpha + d
            na = float(np.linalg.norm(trial))
            if na > ALPHA_CAP:
                trial *= ALPHA_CAP / na
            Ht, gt = ev.value_grad(trial)
            ft = float(trial @ beta) - Ht
            if np.isfinite(ft) and ft >= f - 1e-15 * max(1.0, abs(f)):
                step = trial
                break
            radius *= 0.5
            mu = max(10 * mu, 1e-8)
        if step is None:
            break
        gain = ft - f
        alpha, f = step, ft
        r = beta - gt
        radius = min(2 * radius, ALPHA_CAP)
        mu *= 0.1
        if np.linalg.norm(alpha) >= ALPHA_CAP * (1 - 1e-9):
            break
        if gain <= 1e-16 * max(1.0, abs(f)) and np.linalg.norm(r) > tol * scale and radius < 1e-12:
            break
    rn = float(np.linalg.norm(r))
    at_cap = np.linalg.norm(alpha) >= ALPHA_CAP * (1 - 1e-9)
    if rn > INF_RESIDUAL and (at_cap or np.linalg.norm(alpha) > 0.5 * ALPHA_CAP):
        return RateValue.inf(reason="dual iterates diverged", residual=rn)
    return RateValue(f, argmax=alpha, converged=rn <= 1e-8 * scale,
                     info={"iterations": max_iter, "residual": rn, "boundary": bool(at_cap)})


# -- coupling programme ------------------------------------------------------------------

@dataclass
class CouplingSolution:
    value: RateValue
    gamma: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def _interior_start(A, b, n, zero_tol=1e-10):
    """Point of ``{A v = b, v >= 0}`` maximising its smallest entry, plus the
    mask of entries that vanish on the whole polytope."""
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b,
                  bounds=[(0, None)] * n + [(0, 1)], method="highs")
    if res.status == 2:
        return None, None
    if res.status != 0:
        raise ConvergenceError(f"feasibility LP failed: {res.message}")
    v, t = res.x[:n], res.x[-1]
    if t > zero_tol:
        return v, np.ones(n, dtype=bool)
    # some entries are forced to zero: find which can be positive
    alive = np.zeros(n, dtype=bool)
    acc = np.zeros(n)
    count = 0
    for e in range(n):
        if alive[e]:
            continue
        ce = np.zeros(n)
        ce[e] = -1.0
        r = linprog(ce, A_eq=A, b_eq=b, bounds=[(0, None)] * n, method="highs")
        if r.status == 0 and -r.fun > zero_tol:
            alive |= r.x > zero_tol
            acc += r.x
            count += 1
    if count == 0:
        return v, v > zero_tol
    return acc / count, alive


def _kl_newton(A, b, logref, row_of, free_rows, v0, tol=1e-13, max_iter=200):
    """Minimise ``sum v log(v / (m_row ref))`` over ``{A v = b, v > 0}``.

    ``m_row`` is either the row mass of ``v`` (``free_rows=True``, the
    stationary-pair programme) or absorbed in ``logref``.
    """
    n = len(v0)
    nrows = int(row_of.max()) + 1 if n else 0

    def parts(v):
        if free_rows:
            m = np.bincount(row_of, weights=v, minlength=nrows)
            lg = np.log(v) - np.log(m[row_of]) - logref
            return m, lg
        return None, np.log(v) - logref

    def obj(v):
        _, lg = parts(v)
        return float(v @ lg)

    v = v0.copy()
    f = obj(v)
    dec = math.inf
    for it in range(max_iter):
        m, lg = parts(v)
        Hm = np.diag(1.0 / v)
        if free_rows:
            same = row_of[:, None] == row_of[None, :]
            Hm = Hm - same / m[row_of][:, None]
        k = A.shape[0]
        KKT = np.block([[Hm, A.T], [A, np.zeros((k, k))]])
        rhs = np.concatenate([-lg, b - A @ v])
        sol = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
        d = sol[:n]
        dec = float(-(lg @ d))
        if dec <= 2 * tol:
            break
        neg = d < 0
        step = min(1.0, 0.99 * float(np.min(-v[neg] / d[neg]))) if np.any(neg) else 1.0
        while step > 1e-14:
            vt = v + step * d
            if np.all(vt > 0):
                ft = obj(vt)
                if ft <= f + 0.25 * step * (lg @ d):
                    break
            step *= 0.5
        else:
            break
        v, f = vt, ft
    return v, f, {"iterations": it + 1, "decrement": dec}


def _pair_program(P, rows, cols, fixed_marg=None, G=None, beta=None):
    """Shared builder for the two relative-entropy programmes on ``supp P``."""
    S = P.shape[0]
    keep = [(y, z) for y in rows for z in cols if P[y, z] > 0]
    if not keep:
        return None
    idx = np.array(keep)
    row_of_abs, col_of = idx[:, 0], idx[:, 1]
    n = len(keep)
    cons, rhs = [], []
    if fixed_marg is None:
        for s in range(S):
            a = (row_of_abs == s).astype(float) - (col_of == s).astype(float)
            if np.any(a):
                cons.append(a)
                rhs.append(0.0)
        cons.append(np.ones(n))
        rhs.append(1.0)
        for j in range(G.shape[1]):
            cons.append(G[col_of, j])
            rhs.append(float(beta[j]))
    else:
        for s in rows:
            cons.append((row_of_abs == s).astype(float))
            rhs.append(float(fixed_marg[s]))
        for s in cols:
            cons.append((col_of == s).astype(float))
            rhs.append(float(fixed_marg[s]))
    return idx, np.array(cons), np.array(rhs)


def _independent_rows(A, tol=1e-10):
    """Indices of a maximal linearly independent subset of the rows of ``A``."""
    chosen = []
    for i in range(A.shape[0]):
        if np.linalg.matrix_rank(A[chosen + [i]], tol) > len(chosen):
            chosen.append(i)
    return np.array(chosen, dtype=int)


def _solve_pairs(P, idx, A, b, free_rows, fixed_marg=None):
    n = len(idx)
    v0, alive = _interior_start(A, b, n)
    if v0 is None:
        return CouplingSolution(RateValue.inf(reason="no coupling satisfies the constraints"))
    idx, A_use, v_use = idx[alive], A[:, alive], v0[alive]
    logref = np.log(P[idx[:, 0], idx[:, 1]])
    if not free_rows:
        logref = logref + np.log(fixed_marg[idx[:, 0]])
    _, r_row = np.unique(idx[:, 0], return_inverse=True)
    # drop redundant constraints so the KKT system is well posed
    piv = _independent_rows(A_use)
    A_use, b_use = A_use[piv], b[piv]
    v, f, info = _kl_newton(A_use, b_use, logref, r_row, free_rows, v_use)
    gamma = np.zeros_like(P)
    gamma[idx[:, 0], idx[:, 1]] = v
    info["constraint_residual"] = float(np.abs(A_use @ v - b_use).max()) if len(b_use) else 0.0
    return CouplingSolution(RateValue(max(f, 0.0) if f > -1e-12 else f, converged=info["decrement"] < 1e-10,
                                      info=info), gamma, info)


def local_rate_oracle(model, x, beta, tol=1e-12):
    """``L(x, beta)`` as ``inf R(gamma || mu (x) rho_x)`` over pair laws ``gamma``
    with equal marginals ``mu`` and ``sum_z g(x, z) mu(z) = beta``.

    Independent of :func:`local_rate`: no eigenvalues, no dual variables.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    P = model.kernel.matrix(x)
    G = model.g_values(x)
    S = P.shape[0]
    built = _pair_program(P, range(S), range(S), G=G, beta=beta)
    if built is None:
        return RateValue.inf(reason="empty support")
    idx, A, b = built
    sol = _solve_pairs(P, idx, A, b, free_rows=True)
    sol.value.info["gamma"] = sol.gamma
    return sol.value


def coupling_solution(model, x, beta):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    P = model.kernel.matrix(x)
    G = model.g_values(x)
    idx, A, b = _pair_program(P, range(P.shape[0]), range(P.shape[0]), G=G, beta=np.atleast_1d(beta))
    return _solve_pairs(P, idx, A, b, free_rows=True)


def empirical_rate_J(model, x, mu):
    """``inf R(gamma || mu (x) rho_x)`` over couplings with both marginals ``mu``."""
    mu = np.asarray(mu, dtype=float)
    P = model.kernel.matrix(np.atleast_1d(np.asarray(x, dtype=float)))
    if mu.shape != (P.shape[0],) or np.any(mu < 0) or abs(mu.sum() - 1) > 1e-10:
        raise ValueError("mu must be a probability vector on the noise space")
    supp = [s for s in range(len(mu)) if mu[s] > 0]
    built = _pair_program(P, supp, supp, fixed_marg=mu)
    if built is None:
        return RateValue.inf(reason="empty support")
    idx, A, b = built
    return _solve_pairs(P, idx, A, b, free_rows=False, fixed_marg=mu).value


def dv_rate(model, x, mu, tol=1e-12, max_iter=200):
    """``sup_{u > 0} sum_y mu(y) log(u(y) / (rho_x u)(y))`` by Newton ascent in
    ``w = log u`` (gauge fixed at the heaviest point of ``mu``)."""
    mu = np.asarray(mu, dtype=float)
    P = model.kernel.matrix(np.atleast_1d(np.asarray(x, dtype=float)))
    S = len(mu)
    anchor = int(np.argmax(mu))
    free = np.array([s for s in range(S) if s != anchor], dtype=int)
    supp = mu > 0
    logP = np.where(P > 0, np.log(np.where(P > 0, P, 1.0)), -np.inf)

    def value(w):
        lse = _row_lse(logP[supp] + w[None, :])
        return float(mu[supp] @ (w[supp] - lse))

    def grad_hess(w):
        Z = logP[supp] + w[None, :]
        p = np.exp(Z - _row_lse(Z)[:, None])
        m = mu[supp]
        g = mu - m @ p
        Hm = -(np.diag(m @ p) - (p.T * m) @ p)
        return g, Hm

    w = np.zeros(S)
    f = value(w)
    for it in range(max_iter):
        g, Hm = grad_hess(w)
        gf, Hf = g[free], Hm[np.ix_(free, free)]
        if np.linalg.norm(gf) <= tol:
            break
        try:
            d = np.linalg.solve(Hf - 1e-14 * np.eye(len(free)), -gf)
        except np.linalg.LinAlgError:
            d = gf.copy()
        if d @ gf <= 0:
            d = gf.copy()
        step = 1.0
        while step > 1e-14:
            wt = w.copy()
            wt[free] += step * d
            ft = value(wt)
            if ft >= f + 1e-4 * step * (gf @ d):
                break
            step *= 0.5
        else:
            break
        w, f = wt, ft
    return RateValue(f, argmax=np.exp(w - w.max()), converged=bool(np.linalg.norm(grad_hess(w)[0][free]) <= 1e-8),
                     info={"iterations": it + 1})


def _row_lse(Z):
    c = Z.max(axis=1)
    return c + np.log(np.exp(Z - c[:, None]).sum(axis=1))
