import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mewguide.datasets import GmmObservable, prinz_potential, sample_boltzmann_1d
from mewguide.maxent import (ConvergenceError, InfeasibleTargetError, MaxEntProblem, dual,
                             estimate_lambda, observable_matrix, reweight)

from oracles import brute_force_maxent


def ident(x):
    return x[:, 0]


def test_zero_lambda_uniform(rng):
    x = rng.standard_normal((50, 1))
    assert np.allclose(reweight(x, [ident], [0.0]), 1 / 50)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=40), st.floats(-5, 5))
def test_weights_normalised(values, lam):
    w = reweight(np.array(values)[:, None], [ident], [lam])
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(w >= 0)


def test_tilted_normal_mean():
    x = np.random.default_rng(0).standard_normal((1_000_000, 1))
    w = reweight(x, [ident], [-1.0])
    mean = w @ x[:, 0]
    # standard error of a weighted mean via the effective sample size
    se = np.sqrt(np.sum(w**2 * (x[:, 0] - mean) ** 2))
    assert abs(mean - 1.0) < 3 * se


def test_estimate_lambda_tilting_case():
    x = np.random.default_rng(1).standard_normal((200_000, 1))
    prob = MaxEntProblem(x, [ident], [1.0])
    lam = estimate_lambda(prob)
    assert lam[0] == pytest.approx(-1.0, abs=0.02)
    w = reweight(x, [ident], lam)
    assert abs(w @ x[:, 0] - 1.0) < 1e-6


def test_reference_target_gives_zero_lambda(rng):
    x = rng.standard_normal((1000, 1))
    lam = estimate_lambda(MaxEntProblem(x, [ident], [x.mean()]))
    assert abs(lam[0]) < 1e-6


def test_matches_brute_force(rng):
    for _ in range(5):
        n = int(rng.integers(5, 21))
        v = rng.uniform(-1, 1, n)
        target = float(rng.uniform(np.quantile(v, 0.3), np.quantile(v, 0.7)))
        lam = estimate_lambda(MaxEntProblem(v[:, None], [ident], [target]))
        w = reweight(v[:, None], [ident], lam)
        w_bf, kl_bf = brute_force_maxent(v, target)
        kl = float(np.sum(w * np.log(n * w)))
        assert kl <= kl_bf + 1e-6
        assert np.allclose(w, w_bf, atol=1e-4)


def test_dual_non_increasing(rng):
    x = rng.standard_normal((500, 2))
    obs = [ident, lambda s: s[:, 1] ** 2]
    _, info = estimate_lambda(MaxEntProblem(x, obs, [0.5, 1.4]), return_info=True)
    d = np.array(info["dual"])
    assert np.all(np.diff(d) <= 1e-12)
    assert np.max(np.abs(info["residuals"])) <= 1e-6


def test_dual_value_at_zero(rng):
    x = rng.standard_normal((10, 1))
    v = observable_matrix(x, [ident])
    assert dual(v, np.array([0.3]), np.zeros(1)) == pytest.approx(np.log(10))


def test_infeasible_target_named(rng):
    x = rng.uniform(0, 1, (100, 1))
    ident.name = "position"
    with pytest.raises(InfeasibleTargetError, match="position"):
        estimate_lambda(MaxEntProblem(x, [ident], [2.0]))


def test_convergence_error_carries_residuals(rng):
    x = rng.standard_normal((100, 1))
    with pytest.raises(ConvergenceError) as err:
        estimate_lambda(MaxEntProblem(x, [ident], [1.5], tolerance=1e-300, max_iter=1))
    assert err.value.residuals.shape == (1,)


def test_problem_validation():
    with pytest.raises(ValueError):
        MaxEntProblem(np.zeros((0, 1)), [ident], [0.0])
    with pytest.raises(ValueError):
        MaxEntProblem(np.zeros((3, 1)), [ident], [0.0, 1.0])
    with pytest.raises(ValueError):
        reweight(np.zeros((3, 1)), [ident], [np.inf])


def test_quadwell_multiplier_negative():
    # raising the GMM expectation of an unbiased sample needs a negative multiplier
    pot = prinz_potential(0.23)
    obs = GmmObservable(scale=21.3)
    x = sample_boltzmann_1d(pot, 20000, seed=0)
    target = obs.value(x[:, None] if x.ndim == 1 else x).mean() * 1.2
    lam = estimate_lambda(MaxEntProblem(x, [obs], [target]))
    assert lam.shape == (1,) and lam[0] < 0
