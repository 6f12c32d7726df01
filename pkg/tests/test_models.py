import itertools
import math

import numpy as np
import pytest

from saldp import models as M
from saldp.kernel import stationary_distribution
from saldp.sa_sim import g_bar
from saldp.schedule import StepSchedule


# -- SGD ---------------------------------------------------------------------------------

def test_logistic_gradient_matches_finite_differences():
    data = M.LogisticDataset.default()
    x = np.array([0.3, -0.7])
    fd = np.array([(data.nll(x + h) - data.nll(x - h)) / 2e-6 for h in np.eye(2) * 1e-6])
    np.testing.assert_allclose(data.nll_grad(x).sum(axis=0), fd, atol=1e-7)


def test_sgd_update_is_negative_example_gradient():
    data = M.LogisticDataset.default()
    m = M.sgd_logistic_model(data)
    x = np.array([0.2, 0.5])
    np.testing.assert_allclose(m.g_values(x), -data.nll_grad(x), atol=1e-15)
    # at the origin every sigmoid is 1/2
    np.testing.assert_allclose(m.g_values(np.zeros(2)), 0.5 * data.labels[:, None] * data.features)
    np.testing.assert_allclose(g_bar(m, x), -data.nll_grad(x).mean(axis=0), atol=1e-12)


def test_logistic_dataset_validation():
    with pytest.raises(ValueError):
        M.LogisticDataset([0.0, 1.0], [1, 0])
    with pytest.raises(ValueError):
        M.LogisticDataset([0.0, 1.0], [1])


# -- RBM ---------------------------------------------------------------------------------

def _brute_log_likelihood(spec, x):
    W, bV, bH = spec.unpack(x)
    states = list(itertools.product((0, 1), repeat=spec.dV + spec.dH))
    negE = {s: np.array(s[:spec.dV]) @ W @ np.array(s[spec.dV:]) + np.array(s[:spec.dV]) @ bV
            + np.array(s[spec.dV:]) @ bH for s in states}
    logZ = math.log(sum(math.exp(v) for v in negE.values()))
    total = 0.0
    for v in spec.data:
        total += math.log(sum(math.exp(negE[tuple(int(a) for a in v) + h])
                              for h in itertools.product((0, 1), repeat=spec.dH)))
    return total / len(spec.data) - logZ


def test_rbm_log_likelihood_matches_brute_force():
    spec = M.RBMSpec.random(3, 2, M=4, seed=3)
    assert M.rbm_log_likelihood(spec, spec.x) == pytest.approx(_brute_log_likelihood(spec, spec.x), abs=1e-12)


def test_rbm_gibbs_invariant_law_is_joint_law():
    spec = M.RBMSpec.random(3, 3, seed=0)
    P = M.rbm_gibbs_matrix(spec, spec.x)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-14)
    pi = stationary_distribution(P).pi
    assert 0.5 * np.abs(pi - M.rbm_joint_law(spec, spec.x)).sum() <= 1e-10


def test_rbm_exact_gradient_matches_finite_differences():
    spec = M.RBMSpec.random(2, 3, seed=5)
    x = spec.x
    grad = M.rbm_exact_gradient(spec, x)
    fd = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = 1e-6
        fd[j] = (M.rbm_log_likelihood(spec, x + e) - M.rbm_log_likelihood(spec, x - e)) / 2e-6
    np.testing.assert_allclose(grad, fd, atol=1e-8)


def test_rbm_mean_drift_is_likelihood_gradient():
    spec = M.RBMSpec.random(2, 2, seed=1)
    m = M.rbm_model(spec)
    np.testing.assert_allclose(g_bar(m, spec.x), M.rbm_exact_gradient(spec, spec.x), atol=1e-10)


def test_rbm_spec_validation():
    with pytest.raises(ValueError):
        M.RBMSpec(np.zeros((2, 2)), np.zeros(3), np.zeros(2), [[0, 1]])
    with pytest.raises(ValueError):
        M.RBMSpec(np.zeros((7, 6)), np.zeros(7), np.zeros(6), [[0] * 7])
    with pytest.raises(ValueError):
        M.RBMSpec(np.zeros((2, 2)), np.zeros(2), np.zeros(2), [[0, 2]])


# -- Wang-Landau -----------------------------------------------------------------------------

def test_wl_kernel_targets_reweighted_law():
    spec = M.multicanonical_spec()
    x = np.array([0.5, 0.3, 0.2])
    P = M.wl_matrix(spec, x)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-14)
    target = spec.f / x[spec.stratum]
    target /= target.sum()
    np.testing.assert_allclose(target @ P, target, atol=1e-14)


def test_wl_true_weights_are_a_zero_of_the_drift():
    spec = M.multicanonical_spec()
    m = M.wang_landau_model(spec)
    assert np.abs(g_bar(m, spec.true_x())).max() < 1e-12
    assert np.abs(g_bar(m, m.x0)).max() > 1e-3


def test_wl_exact_update_stays_normalised():
    spec = M.symmetric_spec()
    m = M.wang_landau_model(spec)
    X = np.array([[0.3, 0.7], [0.5, 0.5]])
    out = m.update(X, np.array([0, 3]), 0.25)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    np.testing.assert_allclose(out[0], np.array([0.3 * 1.25, 0.7]) / (1 + 0.25 * 0.3))


def test_multicanonical_spec_masses():
    spec = M.multicanonical_spec(n=4, J=0.5)
    # energies of a 4-ring with J = 1/2: -2 (2 states), 0 (12), +2 (2)
    masses = np.array([2 * math.exp(2), 12.0, 2 * math.exp(-2)])
    np.testing.assert_allclose(spec.true_x(), masses / masses.sum())


def test_free_energy_spec_differences():
    spec = M.free_energy_spec(n=3, temperatures=(1.0, 0.5))
    spins = 2 * np.array(list(itertools.product((0, 1), repeat=3))) - 1
    E = -np.sum(spins * np.roll(spins, -1, axis=1), axis=1)
    Z = [np.exp(-om * E).sum() for om in (1.0, 0.5)]
    assert spec.free_energy_differences()[1] == pytest.approx(-math.log(Z[1] / Z[0]))


def test_wang_landau_run_converges_on_symmetric_spec():
    spec = M.symmetric_spec()
    run = M.run_wang_landau(spec, StepSchedule.harmonic(), 10_000, seed=0)
    assert np.abs(run.final - 0.5).max() < 0.05
    np.testing.assert_allclose(run.x.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        M.wl_free_energy_differences([0.5, 0.0])


def test_sgd_hamiltonian_special_cases():
    data = M.LogisticDataset([-1.0, 2.0], [1, -1])
    x = np.array([0.3, -0.2])
    assert M.sgd_hamiltonian_closed(data, x, [0.0, 0.0]) == 0.0
    # two examples, alpha = (1, 1): log of the mean of exp(-<alpha, grad G_m>)
    a, b = -data.nll_grad(x) @ np.ones(2)
    assert M.sgd_hamiltonian_closed(data, x, [1.0, 1.0]) == pytest.approx(math.log((math.exp(a) + math.exp(b)) / 2))
    same = M.LogisticDataset([1.0, 1.0], [1, 1])
    G = same.nll_grad(x)[0]
    assert M.sgd_hamiltonian_closed(same, x, [0.4, -1.0]) == pytest.approx(-G @ [0.4, -1.0])


def test_rbm_zero_weights_give_fair_hidden_units():
    spec = M.RBMSpec(np.zeros((2, 3)), np.array([0.3, -0.1]), np.zeros(3), [[0, 1]])
    P = M.rbm_gibbs_matrix(spec, spec.x)
    np.testing.assert_allclose(P.reshape(4 * 8, 4, 8).sum(axis=1), 1 / 8)
    assert np.all(P > 0)


def test_wang_landau_single_stratum_and_normalisation():
    one = M.WangLandauSpec([[1.0, 2.0, 3.0]])
    run = M.run_wang_landau(one, StepSchedule.harmonic(), 500, seed=0, record_every=1)
    assert np.all(run.x == 1.0)
    run = M.run_wang_landau(M.multicanonical_spec(), StepSchedule.harmonic(), 2000, seed=0, record_every=1)
    assert np.abs(run.x.sum(axis=1) - 1).max() <= 1e-12 and np.all(run.x > 0)
    equal = M.free_energy_spec(temperatures=(1.0, 1.0))
    np.testing.assert_allclose(equal.free_energy_differences(), 0.0, atol=1e-15)
    assert M.wl_free_energy_differences([0.2, 0.8])[0] == 0.0
