"""Ready-made recursions: toy chains, SGD for logistic regression,
persistent contrastive divergence for a small RBM and Wang-Landau.

Every model here lives on a finite noise space small enough for exact
enumeration, which gives the oracles used in the tests.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from . import kernel as kern
from .sa_sim import SAModel, run_chain

# -- toy models ---------------------------------------------------------------------------


def bernoulli_model(p=0.5, x0=0.0):
    """I.i.d. Bernoulli(p) noise with ``g(x, z) = z``."""
    k = kern.iid([1 - p, p], points=[[0.0], [1.0]])
    return SAModel(k, lambda X, Z: np.broadcast_to(Z[:, None].astype(float), (len(Z), 1)).copy(),
                   [x0], g_x_independent=True, name="bernoulli", params={"p": p, "x0": x0})


def two_state_model(a=0.3, b=0.4, kappa=0.0, x0=0.0):
    """Two-state chain (flip rates modulated by ``tanh x``) with ``g = z - x``."""
    k = kern.two_state(a, b, kappa)
    return SAModel(k, lambda X, Z: Z[:, None] - X, [x0], name="two_state",
                   params={"a": a, "b": b, "kappa": kappa, "x0": x0})


def finite_model(P, G, x0=None):
    """Fixed kernel ``P`` and parameter-free update table ``G[z]`` (shape ``(S, d1)``)."""
    P = np.asarray(P, dtype=float)
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    x0 = np.zeros(G.shape[1]) if x0 is None else x0
    return SAModel(kern.fixed(P), lambda X, Z: G[Z], x0, g_x_independent=True, name="finite",
                   params={"matrix": P.tolist(), "g": G.tolist()})


def gaussian_additive(b, sigma, x0):
    """``g(x, y) = b(x) + y`` with ``y ~ N(0, sigma^2 I)``; closed-form
    ``H = <alpha, b(x)> + sigma^2 |alpha|^2 / 2`` (no finite kernel)."""
    b_fn = b if callable(b) else (lambda x, c=np.asarray(b, dtype=float): c)
    s2 = float(sigma) ** 2
    return SAModel(None, None, x0,
                   hamiltonian=lambda x, a: float(a @ b_fn(x) + 0.5 * s2 * (a @ a)),
                   hamiltonian_grad=lambda x, a: b_fn(x) + s2 * a,
                   mean_drift=b_fn, name="gaussian", params={"sigma": sigma})


# -- SGD for logistic regression ------------------------------------------------------------

def affine_features(xi):
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    return np.concatenate([[1.0], xi])


@dataclass
class LogisticDataset:
    """Examples ``(xi_m, upsilon_m)`` with labels in {-1, +1}.

    ``features`` holds ``phi(xi_m)`` row-wise (affine map by default).
    """

    xi: np.ndarray
    labels: np.ndarray
    features: np.ndarray = None

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        if self.xi.ndim == 1:
            self.xi = self.xi[:, None]
        self.labels = np.asarray(self.labels, dtype=float)
        if len(self.labels) < 1 or len(self.labels) != len(self.xi):
            raise ValueError("need one label per example and at least one example")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if self.features is None:
            self.features = np.array([affine_features(x) for x in self.xi])
        self.features = np.asarray(self.features, dtype=float)

    @property
    def M(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    def margins(self, X):
        """``upsilon_m x^T phi_m`` for a batch of parameters: ``(B, M)``."""
        return np.atleast_2d(X) @ (self.features * self.labels[:, None]).T

    def nll(self, x):
        """``sum_m -log sigm(upsilon_m x^T phi_m)``."""
        return float(np.sum(np.logaddexp(0.0, -self.margins(x)[0])))

    def nll_grad(self, x, m=None):
        """Per-example gradients ``-upsilon_m phi_m (1 - sigm(margin_m))``, shape ``(M, d)``
        (row ``m`` only when ``m`` is given)."""
        w = 1.0 - expit(self.margins(x)[0])
        G = -(self.labels * w)[:, None] * self.features
        return G if m is None else G[m]

    @classmethod
    def default(cls):
        """Six one-dimensional points that no line separates."""
        return cls([-1.5, -0.5, 0.5, 1.5, -1.0, 1.0], [-1, -1, 1, 1, 1, -1])


def sgd_logistic_model(data: LogisticDataset, x0=None):
    """SGD on the negative log-likelihood: a uniformly drawn example ``m`` and
    ``g(x, m) = -grad G_m(x)``."""
    M = data.M
    signed = data.features * data.labels[:, None]
    x0 = np.zeros(data.dim) if x0 is None else x0

    def g(X, Z):
        marg = np.einsum("bd,bd->b", X, signed[Z])
        return (1.0 - expit(marg))[:, None] * signed[Z]

    k = kern.iid(np.full(M, 1.0 / M), points=data.features)
    return SAModel(k, g, x0, name="sgd_logistic",
                   params={"xi": data.xi.tolist(), "labels": data.labels.tolist()})


def sgd_hamiltonian_closed(data: LogisticDataset, x, alpha):
    """``log (1/M) sum_m exp(-<alpha, grad G_m(x)>)``."""
    a = -data.nll_grad(np.atleast_1d(x)) @ np.atleast_1d(alpha)
    return float(logsumexp(a) - math.log(data.M))


# -- restricted Boltzmann machine ---------------------------------------------------------------

MAX_UNITS = 12


def _bits(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=float).reshape(2 ** n, n)


@dataclass
class RBMSpec:
    """Binary RBM with energy ``E(v, h) = -v^T W h - v^T b_V - h^T b_H``.

    ``data`` holds the observed visible vectors.  The parameter vector is
    ``x = (W.ravel(), b_V, b_H)``; the noise state ``(v, h)`` is encoded as
    ``index(v) * 2**d_H + index(h)`` with big-endian bit order.
    """

    W: np.ndarray
    b_V: np.ndarray
    b_H: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b_V = np.asarray(self.b_V, dtype=float)
        self.b_H = np.asarray(self.b_H, dtype=float)
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        dV, dH = self.W.shape
        if self.b_V.shape != (dV,) or self.b_H.shape != (dH,) or self.data.shape[1] != dV:
            raise ValueError("inconsistent RBM dimensions")
        if dV + dH > MAX_UNITS:
            raise ValueError(f"d_V + d_H = {dV + dH} exceeds the enumeration bound {MAX_UNITS}")
        if not np.all(np.isin(self.data, (0.0, 1.0))):
            raise ValueError("observations must be binary")

    @property
    def dV(self):
        return self.W.shape[0]

    @property
    def dH(self):
        return self.W.shape[1]

    @property
    def x(self):
        return np.concatenate([self.W.ravel(), self.b_V, self.b_H])

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        n = self.dV * self.dH
        return x[:n].reshape(self.dV, self.dH), x[n: n + self.dV], x[n + self.dV:]

    @classmethod
    def random(cls, dV=3, dH=3, M=5, scale=0.5, seed=0):
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((dV, dH)), scale * rng.standard_normal(dV),
                   scale * rng.standard_normal(dH), rng.integers(0, 2, (M, dV)))


def _energy_grad(V, H):
    """``grad_x E`` for rows of ``V`` and ``H``: ``-(v h^T, v, h)`` flattened."""
    outer = -(V[:, :, None] * H[:, None, :]).reshape(len(V), -1)
    return np.hstack([outer, -V, -H])


def rbm_gibbs_matrix(spec: RBMSpec, x):
    """Block-Gibbs kernel ``p(h1 | v0) p(v1 | h1)`` over the joint states."""
    W, bV, bH = spec.unpack(x)
    Vs, Hs = _bits(spec.dV), _bits(spec.dH)
    ph = expit(Vs @ W + bH)                      # (2^dV, dH): P(h_j = 1 | v)
    pv = expit(Hs @ W.T + bV)                    # (2^dH, dV): P(v_i = 1 | h)
    Ph = np.prod(np.where(Hs[None, :, :] == 1, ph[:, None, :], 1 - ph[:, None, :]), axis=2)   # [v0, h1]
    Pv = np.prod(np.where(Vs[None, :, :] == 1, pv[:, None, :], 1 - pv[:, None, :]), axis=2)   # [h1, v1]
    # rho[(v0, h0), (v1, h1)] = Ph[v0, h1] Pv[h1, v1], independent of h0
    core = Ph[:, None, :] * Pv.T[None, :, :]    # [v0, v1, h1]
    nV, nH = len(Vs), len(Hs)
    rows = core.reshape(nV, nV * nH)
    return np.repeat(rows, nH, axis=0)


def rbm_states(spec: RBMSpec):
    """``(V, H)`` arrays listing the visible and hidden parts of every joint state."""
    Vs, Hs = _bits(spec.dV), _bits(spec.dH)
    return np.repeat(Vs, len(Hs), axis=0), np.tile(Hs, (len(Vs), 1))


def rbm_positive_phase(spec: RBMSpec, x):
    """``(1/M) sum_m E_{h | v^m} grad_x E(v^m, h)`` (closed form through sigmoids)."""
    W, _, bH = spec.unpack(x)
    V = spec.data
    P = expit(V @ W + bH)
    return _energy_grad(V, P).mean(axis=0)


def rbm_model(spec: RBMSpec, x0=None):
    """PCD as a recursion: noise follows the block-Gibbs chain and

        g(x, y) = grad_x E(y; x) - (1/M) sum_m E_{h | v^m} grad_x E(v^m, h; x),

    whose stationary mean is the log-likelihood gradient (ascent)."""
    Vj, Hj = rbm_states(spec)
    grads_y = _energy_grad(Vj, Hj)
    S = len(Vj)
    x0 = spec.x if x0 is None else x0
    space = kern.FiniteNoiseSpace(S, points=np.hstack([Vj, Hj]))
    k = kern.StateKernel(space, lambda x: rbm_gibbs_matrix(spec, spec.x if x is None else x), name="rbm_gibbs",
                         params={"dV": spec.dV, "dH": spec.dH})

    def g(X, Z):
        out = grads_y[Z].copy()
        for b in range(len(Z)):
            out[b] -= rbm_positive_phase(spec, X[b])
        return out

    return SAModel(k, g, x0, name="rbm", params={"dV": spec.dV, "dH": spec.dH})


def rbm_joint_law(spec: RBMSpec, x):
    """Exact ``p(v, h | x)`` by enumeration, in the model's state order."""
    W, bV, bH = spec.unpack(x)
    V, H = rbm_states(spec)
    negE = np.einsum("si,ij,sj->s", V, W, H) + V @ bV + H @ bH
    return np.exp(negE - logsumexp(negE))


def rbm_log_likelihood(spec: RBMSpec, x):
    """``(1/M) sum_m log p(v^m | x)`` by enumeration."""
    W, bV, bH = spec.unpack(x)
    Hs = _bits(spec.dH)

    def log_marg(V):
        negE = (V @ W) @ Hs.T + (V @ bV)[:, None] + (Hs @ bH)[None, :]
        return logsumexp(negE, axis=1)

    V, H = rbm_states(spec)
    negE = np.einsum("si,ij,sj->s", V, W, H) + V @ bV + H @ bH
    return float(log_marg(spec.data).mean() - logsumexp(negE))


def rbm_exact_gradient(spec: RBMSpec, x):
    """Log-likelihood gradient ``E_model[grad E] - E_data[grad E]`` by enumeration."""
    V, H = rbm_states(spec)
    p = rbm_joint_law(spec, x)
    return p @ _energy_grad(V, H) - rbm_positive_phase(spec, x)


# -- Wang-Landau ----------------------------------------------------------------------------------

@dataclass
class WangLandauSpec:
    """Strata ``i = 1..d`` with non-negative weights ``f_i`` on a common finite set.

    ``weights[i, s] = f_i(s)``; the union space keeps the pairs ``(s, i)``
    with ``f_i(s) > 0``.  ``x(i)`` is the normalised mass of stratum ``i``.
    """

    weights: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        mass = self.weights.sum(axis=1)
        if np.any(mass <= 0):
            raise ValueError(f"stratum {int(np.argmin(mass))} has zero weight")
        pts = np.argwhere(self.weights > 0)
        self.stratum = pts[:, 0]
        self.point = pts[:, 1]
        self.f = self.weights[self.stratum, self.point]
        self.sizes = np.bincount(self.stratum, minlength=self.d)

    @property
    def d(self):
        return self.weights.shape[0]

    @property
    def size(self):
        return len(self.f)

    def true_x(self):
        m = self.weights.sum(axis=1)
        return m / m.sum()

    def free_energy_differences(self):
        """``-log(x(i)/x(1))`` from the exact masses."""
        m = self.weights.sum(axis=1)
        return -np.log(m / m[0])


def _ising_ring_energy(n, J=1.0, field_=0.0):
    s = 2 * _bits(n) - 1
    return -J * np.sum(s * np.roll(s, -1, axis=1), axis=1) - field_ * s.sum(axis=1)


def multicanonical_spec(n=4, J=0.5, field_=0.0):
    """Ising ring on ``n`` sites, strata = distinct energy levels, ``f_i = exp(-E)``
    restricted to level ``i``."""
    E = _ising_ring_energy(n, J, field_)
    levels = np.unique(np.round(E, 12))
    W = np.array([np.where(np.isclose(E, e), np.exp(-E), 0.0) for e in levels])
    return WangLandauSpec(W, [float(e) for e in levels])


def free_energy_spec(n=3, temperatures=(1.0, 0.5), J=1.0):
    """Copies ``i`` of an Ising ring at inverse temperatures ``omega_i``:
    ``f_i(s, omega) = exp(-omega_i E(s)) 1{omega = omega_i}``."""
    E = _ising_ring_energy(n, J)
    d = len(temperatures)
    S = len(E)
    W = np.zeros((d, d * S))
    for i, om in enumerate(temperatures):
        W[i, i * S:(i + 1) * S] = np.exp(-om * E)
    return WangLandauSpec(W, [float(t) for t in temperatures])


def symmetric_spec(points_per_stratum=2):
    """Two strata carrying equal total weight."""
    k = points_per_stratum
    W = np.zeros((2, 2 * k))
    W[0, :k] = np.linspace(1.0, 2.0, k)
    W[1, k:] = W[0, :k][::-1]
    return WangLandauSpec(W)


def wl_proposal(spec: WangLandauSpec):
    """Half the time a uniform point of the current stratum, otherwise a
    uniform stratum and then a uniform point in it."""
    same = (spec.stratum[:, None] == spec.stratum[None, :]) / spec.sizes[spec.stratum][None, :]
    other = 1.0 / (spec.d * spec.sizes[spec.stratum])[None, :]
    return 0.5 * same + 0.5 * np.broadcast_to(other, same.shape)


def wl_matrix(spec: WangLandauSpec, x, Q=None):
    """Metropolis-Hastings kernel with target ``pi(s, i) ~ f_i(s) / x(i)``."""
    Q = wl_proposal(spec) if Q is None else Q
    target = spec.f / np.asarray(x, dtype=float)[spec.stratum]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (target[None, :] * Q.T) / (target[:, None] * Q)
    acc = np.minimum(1.0, np.nan_to_num(ratio, nan=0.0, posinf=1.0))
    P = Q * acc
    np.fill_diagonal(P, 0.0)
    P[np.diag_indices_from(P)] = 1.0 - P.sum(axis=1)
    return P


def wang_landau_model(spec: WangLandauSpec, x0=None, y0=0):
    """Wang-Landau as a recursion on the normalised weights ``x``.

    The update is the exact two-line rule: multiply ``phi(I)`` by
    ``1 + eps`` and renormalise, i.e.
    ``x(i) <- x(i) (1 + eps 1{I = i}) / (1 + eps x(I))``.  Its first-order
    increment ``g(x, (s, j)) = x(j) (e_j - x)`` is exposed for rate
    computations.
    """
    d = spec.d
    x0 = np.full(d, 1.0 / d) if x0 is None else np.asarray(x0, dtype=float)
    Q = wl_proposal(spec)
    strat = spec.stratum
    k = kern.StateKernel(kern.FiniteNoiseSpace(spec.size, points=np.column_stack([spec.point, strat])),
                         lambda x: wl_matrix(spec, np.full(d, 1.0 / d) if x is None else x, Q),
                         name="wang_landau", params={"d": d})
    eye = np.eye(d)

    def g(X, Z):
        j = strat[Z]
        xj = X[np.arange(len(Z)), j]
        return xj[:, None] * (eye[j] - X)

    def step(X, Z, eps):
        j = strat[Z]
        xj = X[np.arange(len(Z)), j]
        out = X.copy()
        out[np.arange(len(Z)), j] *= 1.0 + eps
        return out / (1.0 + eps * xj)[:, None]

    return SAModel(k, g, x0, y0=y0, step=step, name="wang_landau", params={"d": d})


@dataclass
class WLRun:
    steps: np.ndarray
    x: np.ndarray
    last_noise: int

    @property
    def final(self):
        return self.x[-1]


def run_wang_landau(spec, schedule, k, seed, record_every=100):
    model = wang_landau_model(spec)
    steps, xs, y = run_chain(model, schedule, k, seed, record_every=record_every)
    return WLRun(steps, xs, y)


def wl_free_energy_differences(run_or_x):
    """``-log(x(i)/x(1))`` for the final weights of a run (or a weight vector)."""
    x = run_or_x.final if isinstance(run_or_x, WLRun) else np.asarray(run_or_x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("weights must be positive")
    out = -np.log(x / x[0])
    out[0] = 0.0
    return out
