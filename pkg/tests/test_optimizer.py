import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mewguide.guidance import ConstantGuidance, ZeroGuidance
from mewguide.optimizer import (EvalResult, MewObjective, SearchSpace, evaluate, observable_l1,
                                path_l1, search)
from mewguide.score_model import AnalyticGaussianScore
from mewguide.guidance import Guidance


class Identity:
    def value(self, x):
        return x[:, 0]


def quadratic(p):
    return (p["a"] - 1.3) ** 2 + 2 * (p["b"] + 2.1) ** 2


square = SearchSpace({"a": (-5, 5), "b": (-5, 5)})


def test_observable_l1_values(rng):
    x = rng.standard_normal((20, 1))
    assert observable_l1(x, [Identity()], [x.mean()]) == pytest.approx(0.0, abs=1e-24)
    assert observable_l1(np.full((4, 1), 2.0), [Identity()], [0.0]) == 4.0
    assert observable_l1(x[::-1], [Identity()], [0.5]) == pytest.approx(
        observable_l1(x, [Identity()], [0.5]), rel=1e-12)


def test_path_l1_values():
    x = np.arange(10.0)[:, None]
    assert path_l1(x, lambda s: s[:, 0] >= 0) == 0.0
    assert path_l1(x, lambda s: s[:, 0] < 0) == 1.0
    assert path_l1(x, lambda s: s[:, 0] < 5) == 0.5
    with pytest.raises(ValueError):
        path_l1(np.zeros((0, 1)), lambda s: s[:, 0] > 0)


def make_objective(gamma, factory=lambda p: ConstantGuidance([p["c"]])):
    return MewObjective(factory, AnalyticGaussianScore(1), lambda s: float(np.mean(s[:, 0] ** 2)),
                        gamma=gamma, n=50, n_steps=50, seed=3)


def test_evaluate_gamma_zero_and_linearity():
    params = {"c": 0.4}
    r0 = evaluate(make_objective(0.0), params)
    assert r0.total == r0.l1
    r1 = evaluate(make_objective(0.01), params)
    r2 = evaluate(make_objective(0.02), params)
    assert (r2.total - r2.l1) == pytest.approx(2 * (r1.total - r1.l1), rel=1e-12)
    assert r1.delta_w > 0


def test_zero_strength_matches_unguided():
    obj = make_objective(0.5, factory=lambda p: ZeroGuidance())
    r = evaluate(obj, {})
    base = obj.sample(None)
    assert r.delta_w == 0.0 and r.l1 == float(np.mean(base.samples[:, 0] ** 2))


def test_evaluate_deterministic():
    a = evaluate(make_objective(0.1), {"c": 0.2})
    b = evaluate(make_objective(0.1), {"c": 0.2})
    assert tuple(a) == tuple(b)


class NanGuidance(Guidance):
    def field(self, x, t, model, schedule):
        return np.full_like(x, np.nan)


def test_degenerate_evaluation_flagged():
    r = evaluate(make_objective(0.1, factory=lambda p: NanGuidance()), {})
    assert r.failed and r.total == 1e3 and r.degenerate_fraction == 1.0


def test_objective_validation():
    with pytest.raises(ValueError):
        make_objective(-1.0)
    with pytest.raises(ValueError):
        MewObjective(None, None, None, n=0)


def test_candidates_argmin():
    cands = [{"a": 1.0, "b": -2.0}, {"a": 0.0, "b": 0.0}, {"a": 1.3, "b": -2.1}]
    res = search(quadratic, square, candidates=cands)
    assert res.best_params == cands[2] and len(res.trace) == 3


def test_grid_enumerates_points():
    res = search(quadratic, square, budget=16, strategy="grid")
    pts = sorted((r["params"]["a"], r["params"]["b"]) for r in res.trace)
    ax = np.linspace(-5, 5, 4)
    assert len(pts) == 16
    assert np.allclose(pts, sorted((a, b) for a in ax for b in ax), atol=1e-12)


def test_random_deterministic_and_in_bounds():
    a = search(quadratic, square, budget=20, strategy="random", seed=4)
    b = search(quadratic, square, budget=20, strategy="random", seed=4)
    assert a.trace == b.trace
    assert all(square.contains(r["params"]) for r in a.trace)
    assert a.best_value == min(r["total"] for r in a.trace)


def test_gp_ei_finds_quadratic_optimum():
    hits = 0
    for seed in range(10):
        res = search(quadratic, square, budget=50, strategy="gp-ei", seed=seed)
        hits += np.hypot(res.best_params["a"] - 1.3, res.best_params["b"] + 2.1) < 0.1
        assert res.best_value == min(r["total"] for r in res.trace)
        assert square.contains(res.best_params)
    assert hits >= 9


def test_failed_points_recorded():
    def fn(p):
        if p["a"] > 0:
            return EvalResult(1e3, np.nan, np.nan, True)
        return EvalResult(quadratic(p), quadratic(p), 0.0)
    res = search(fn, square, budget=12, strategy="gp-ei", seed=0)
    assert len(res.trace) == 12
    assert not any(r["failed"] for r in res.trace if r["params"]["a"] <= 0)
    assert res.best_params["a"] <= 0


def test_search_errors():
    with pytest.raises(ValueError):
        search(quadratic, square, budget=0)
    with pytest.raises(ValueError):
        search(quadratic, square, budget=5, strategy="hedge")
    with pytest.raises(ValueError):
        SearchSpace({"a": (1.0, 1.0)})
    with pytest.raises(ValueError):
        SearchSpace({"a": (0.0, 1.0, "log")})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
def test_log_space_round_trip(u):
    sp = SearchSpace({"x": (0.01, 1.0, "log"), "y": (-20.0, 20.0), "z": (0.1, 5.0, "log")})
    p = sp.to_params(np.array(u))
    assert sp.contains(p)
    assert np.allclose(sp.to_unit(p), u, atol=1e-9)


def test_log_space_midpoint():
    sp = SearchSpace({"x": (0.01, 1.0, "log")})
    assert sp.to_params(np.array([0.5]))["x"] == pytest.approx(0.1)
