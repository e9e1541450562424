import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mewguide.diffusion import NoiseSchedule
from mewguide.excess_work import (accumulate_work, gaussian_shift_oracle, kl_bound,
                                  lipschitz_integral, w2_bound, weighted_ledger)
from mewguide.guidance import ConstantGuidance
from mewguide.samplers import TimeGrid, reverse_sde_sample
from mewguide.score_model import AnalyticGaussianScore

from oracles import (gaussian_shift, kl_bound_constant, w2_bound_constant, work_constant)

normal = AnalyticGaussianScore(dim=1)


def constant_batch(c, d=1, steps=500, n=4):
    model = AnalyticGaussianScore(dim=d)
    return reverse_sde_sample(model, guidance=ConstantGuidance([c] * d),
                              grid=TimeGrid.reverse(steps), n=n, seed=0)


def test_oracle_constants():
    assert work_constant(1.0, 1) == pytest.approx(33.5008, abs=1e-4)
    assert kl_bound_constant(1.0, 1) == pytest.approx(5.025, abs=1e-12)
    assert w2_bound_constant(1.0, 1) == pytest.approx(72.111, abs=1e-3)


@pytest.mark.parametrize("steps,tol", [(500, 0.02), (1000, 0.01)])
@pytest.mark.parametrize("c,d", [(0.3, 1), (1.0, 2)])
def test_constant_field_matches_quadrature(steps, tol, c, d):
    b = constant_batch(c, d, steps)
    assert accumulate_work(b) == pytest.approx(work_constant(c, d), rel=tol)
    assert kl_bound(b) == pytest.approx(kl_bound_constant(c, d), rel=tol)
    assert w2_bound(b) == pytest.approx(w2_bound_constant(c, d), rel=tol)


def test_refinement_stable():
    a = accumulate_work(constant_batch(0.5, steps=500))
    b = accumulate_work(constant_batch(0.5, steps=1000))
    assert abs(a - b) / b < 0.02


def test_zero_field_zero_work():
    b = reverse_sde_sample(normal, n=5, seed=0)
    assert accumulate_work(b) == 0.0 and kl_bound(b) == 0.0 and w2_bound(b) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10))
def test_quadratic_scaling_on_frozen_records(c):
    b = reverse_sde_sample(normal, guidance=ConstantGuidance([0.7]), n=3, seed=1,
                           grid=TimeGrid.reverse(50))
    scaled = dataclasses.replace(b, h=c * b.h)
    assert accumulate_work(scaled) == pytest.approx(c * c * accumulate_work(b), rel=1e-12,
                                                    abs=1e-300)


def test_ledger_shape_and_sign(rng):
    b = reverse_sde_sample(normal, guidance=ConstantGuidance([0.2]), n=7, seed=2,
                           grid=TimeGrid.reverse(40))
    b = dataclasses.replace(b, h=rng.standard_normal(b.h.shape))
    led = weighted_ledger(b, NoiseSchedule(), 1.0)
    assert led.per_step.shape == (40,) and led.per_chain.shape == (7,)
    assert np.all(led.per_chain >= 0)
    assert accumulate_work(b, squared=False) > 0


def test_missing_records():
    b = reverse_sde_sample(normal, n=3, seed=0, grid=TimeGrid.reverse(10))
    with pytest.raises(ValueError):
        accumulate_work(dataclasses.replace(b, h=np.zeros((3, 3, 1))))


def test_lipschitz_monotone():
    b = constant_batch(0.4, steps=200)
    vals = [w2_bound(b, lipschitz=L) for L in (0.0, 0.5, 1.0, 3.0)]
    assert all(a <= c for a, c in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        w2_bound(b, lipschitz=-1.0)


def test_lipschitz_integral_profiles():
    t = np.linspace(0, 1, 11)
    assert np.allclose(lipschitz_integral(t, 2.0), 2 * t)
    assert np.allclose(lipschitz_integral(t, lambda s: 2.0), 2 * t)
    assert np.allclose(lipschitz_integral(t, np.full(11, 2.0)), 2 * t)
    with pytest.raises(ValueError):
        lipschitz_integral(t, -np.ones(11))


@pytest.mark.parametrize("kind", ["sde", "ode"])
def test_shift_oracle_matches_moment_ode(kind):
    for c in (0.1, 0.5, 1.0):
        m, kl, w2 = gaussian_shift_oracle(c, kind=kind)
        mean, var = gaussian_shift(c, kind)
        assert m == pytest.approx(mean, rel=1e-8)
        assert var == pytest.approx(1.0, abs=1e-8)
        assert kl == pytest.approx(0.5 * mean**2, rel=1e-8) and w2 == pytest.approx(mean**2)
    with pytest.raises(ValueError):
        gaussian_shift_oracle(0.1, kind="heun")


def test_bounds_dominate_gaussian_family():
    rng = np.random.default_rng(5)
    for c in rng.uniform(1e-3, 1.0, 10):
        b = constant_batch(c, steps=500, n=2)
        mean, _ = gaussian_shift(c, "sde")
        assert kl_bound(b) >= 0.5 * mean**2
        assert w2_bound(b) >= mean**2
