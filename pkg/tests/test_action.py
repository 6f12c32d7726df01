import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from scipy.special import rel_entr

from saldp import models as M
from saldp.action import ActionProblem, action, action_and_grad, equilibrium, min_action_path
from saldp.sa_sim import Path, deviation_sup, g_bar, ode_limit
from saldp.schedule import StepSchedule

KL_075 = float(rel_entr(0.75, 0.5) + rel_entr(0.25, 0.5))


def test_single_segment_bernoulli_action(harmonic):
    m = M.bernoulli_model(0.5)
    v = action(m, harmonic, 1.0, Path.linear([0.0], [0.75], 1.0))
    assert float(v) == pytest.approx(KL_075, abs=1e-10)


def test_unit_time_scale_gives_T_times_rate():
    m = M.bernoulli_model(0.5)
    v = action(m, StepSchedule.polynomial(0.5), 2.0, Path.linear([0.0], [1.0], 2.0, segments=3))
    assert float(v) == pytest.approx(2.0 * float(rel_entr(0.5, 0.5) * 2), abs=1e-12)
    v = action(m, StepSchedule.polynomial(0.5), 2.0, Path.linear([0.0], [1.2], 2.0))
    assert float(v) == pytest.approx(2.0 * float(rel_entr(0.6, 0.5) + rel_entr(0.4, 0.5)), abs=1e-10)


def test_action_infinite_cases(harmonic):
    m = M.bernoulli_model(0.5)
    assert action(m, harmonic, 1.0, Path.linear([0.1], [0.5], 1.0)).infinite
    assert action(m, harmonic, 1.0, Path.linear([0.0], [1.5], 1.0)).infinite
    with pytest.raises(ValueError):
        action(m, harmonic, 1.0, Path.linear([0.0], [0.5], 2.0))


def test_action_of_ode_is_zero(harmonic):
    m = M.two_state_model(0.3, 0.4, 0.5)
    ode = ode_limit(m, m.x0, 1.0, 1 / 64)
    assert float(action(m, harmonic, 1.0, ode)) < 1e-5


def test_gradient_matches_finite_differences(harmonic):
    m = M.two_state_model(0.3, 0.4, 0.5)
    p = Path(np.linspace(0, 1, 4), [[0.0], [0.25], [0.4], [0.5]])
    _, grad = action_and_grad(m, harmonic, 1.0, p)
    for j in (1, 2, 3):
        h = 1e-5
        up, dn = p.values.copy(), p.values.copy()
        up[j, 0] += h
        dn[j, 0] -= h
        fd = (float(action(m, harmonic, 1.0, Path(p.times, up)))
              - float(action(m, harmonic, 1.0, Path(p.times, dn)))) / (2 * h)
        assert grad[j, 0] == pytest.approx(fd, abs=1e-5)


def test_two_segment_minimum_matches_scalar_search(harmonic):
    m = M.bernoulli_model(0.5)
    prob = ActionProblem(m, harmonic, 1.0, x_end=[0.6], K=2)
    res = min_action_path(prob)

    def f(mid):
        return float(action(m, harmonic, 1.0, Path([0.0, 0.5, 1.0], [0.0, mid, 0.6])))

    ref = minimize_scalar(f, bounds=(0.05, 0.45), method="bounded", options={"xatol": 1e-10})
    assert float(res.value) == pytest.approx(ref.fun, abs=1e-8)
    assert res.path.values[1, 0] == pytest.approx(ref.x, abs=1e-4)
    # the time scale is not flat, so the optimum is not the straight line
    assert abs(ref.x - 0.3) > 1e-3


def test_free_end_minimum_follows_ode(harmonic):
    m = M.two_state_model(0.3, 0.4, 0.5)
    res = min_action_path(ActionProblem(m, harmonic, 1.0, K=6))
    assert float(res.value) < 5e-4
    assert deviation_sup(res.path, ode_limit(m, m.x0, 1.0, 1e-3)) < 0.02


def test_infeasible_end_point(harmonic):
    m = M.bernoulli_model(0.5)
    res = min_action_path(ActionProblem(m, harmonic, 1.0, x_end=[2.0], K=3))
    assert res.value.infinite and res.start_index == -1


def test_problem_validation(harmonic):
    m = M.bernoulli_model(0.5)
    with pytest.raises(ValueError):
        ActionProblem(m, harmonic, 1.0, K=0)
    with pytest.raises(ValueError):
        ActionProblem(m, harmonic, -1.0)


def test_equilibrium_of_two_state():
    m = M.two_state_model(0.3, 0.4, 0.5)
    x = equilibrium(m, [0.4])
    assert np.abs(g_bar(m, x)).max() < 1e-10
    assert 0 < x[0] < 1
    assert not math.isclose(x[0], 3 / 7, abs_tol=1e-3)


def test_quadrature_converges(harmonic):
    m = M.two_state_model(0.3, 0.4, 0.5)
    p = Path(np.linspace(0, 1, 5), [[0.0], [0.1], [0.2], [0.3], [0.35]])
    a8 = float(action(m, harmonic, 1.0, p, nodes=8))
    a16 = float(action(m, harmonic, 1.0, p, nodes=16))
    assert abs(a8 - a16) < 1e-6


def test_refinement_does_not_increase_minimum(harmonic):
    m = M.bernoulli_model(0.5)
    vals = [float(min_action_path(ActionProblem(m, harmonic, 1.0, x_end=[0.75], K=K)).value) for K in (1, 2, 4)]
    assert vals[0] == pytest.approx(KL_075, abs=1e-10)
    assert vals[1] <= vals[0] + 1e-8 and vals[2] <= vals[1] + 1e-8


def test_paths_away_from_ode_cost_something(harmonic):
    m = M.two_state_model(0.3, 0.4, 0.5)
    ode = ode_limit(m, m.x0, 1.0, 1e-2)
    shifted = Path(np.linspace(0, 1, 9), ode(np.linspace(0, 1, 9)) + np.linspace(0, 0.15, 9)[:, None])
    assert deviation_sup(shifted, ode) >= 0.1
    assert float(action(m, harmonic, 1.0, shifted)) > 1e-3
