import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mewguide.diffusion import NoiseSchedule
from mewguide.guidance import (ExpSchedule, LossGuidance, ObservableGuidance, PathGuidance,
                               SigmoidSchedule, eta_exp, kde_log_score, latent_kde_baseline,
                               sigmoid_bandwidth, sigmoid_strength, stochastic_reverse_baseline)
from mewguide.datasets import GmmObservable
from mewguide.samplers import LatentPathSet, TimeGrid, encode
from mewguide.score_model import AnalyticGaussianScore

sched = NoiseSchedule()
normal = AnalyticGaussianScore(dim=1)
coords = st.floats(-5, 5, allow_nan=False)


class Identity:
    """O(x) = x in one dimension."""

    def value(self, x):
        return x[:, 0]

    def grad(self, x):
        return np.ones_like(x)


def test_eta_exp_values():
    assert eta_exp(ExpSchedule(1.0, 2.0), 0.5) == pytest.approx(np.exp(-1.0), abs=1e-12)
    assert eta_exp(ExpSchedule(1.0, 2.0), 0.5) == pytest.approx(0.36788, abs=1e-5)
    assert eta_exp(ExpSchedule(3.0, 7.0), 1.0) == 3.0
    for t in np.linspace(0, 1, 6):
        assert eta_exp(ExpSchedule(2.5, 0.0), t) == 2.5
    with pytest.raises(ValueError):
        eta_exp(ExpSchedule(1.0, 1.0), 1.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 1))
def test_eta_exp_bounded(eta_init, kappa, t):
    v = eta_exp(ExpSchedule(eta_init, kappa), t)
    assert 0.0 <= v <= eta_init * (1 + 1e-12)


def test_sigmoid_limits():
    flat = SigmoidSchedule(2.0, 0.0, 0.3)
    for t in np.linspace(0, 1, 5):
        assert sigmoid_strength(flat, t) == pytest.approx(1.0)
        assert sigmoid_bandwidth(flat, t) == pytest.approx(2.5)
    steep = SigmoidSchedule(2.0, 1e4, 0.5)
    assert sigmoid_strength(steep, 0.2) == pytest.approx(2.0)
    assert sigmoid_strength(steep, 0.8) == pytest.approx(0.0, abs=1e-12)


def test_bad_bandwidth_rejected():
    with pytest.raises(ValueError):
        SigmoidSchedule(-2.0, 0.0, 0.5).check_bandwidth()
    paths = LatentPathSet(np.linspace(0, 1, 3), np.zeros((1, 3, 1)))
    with pytest.raises(ValueError):
        PathGuidance(paths, SigmoidSchedule(1.0, 0.0, 0.5), SigmoidSchedule(-1.5, 0.0, 0.5))


def test_kde_single_point(rng):
    x, p = rng.standard_normal((6, 2)), rng.standard_normal((1, 2))
    assert np.allclose(kde_log_score(x, p, 0.7), (p - x) / 0.49)


def test_kde_symmetry_and_flatness():
    pts = np.array([[-1.0, 0.0], [1.0, 0.0]])
    g = kde_log_score(np.array([[0.0, 0.4]]), pts, 0.5)
    assert abs(g[0, 0]) < 1e-12
    assert np.max(np.abs(kde_log_score(np.array([[3.0, -2.0]]), pts, 1e6))) < 1e-10
    with pytest.raises(ValueError):
        kde_log_score(np.zeros((1, 2)), np.zeros((0, 2)), 1.0)
    with pytest.raises(ValueError):
        kde_log_score(np.zeros((1, 2)), pts, 0.0)


def test_kde_finite_far_from_points():
    g = kde_log_score(np.array([[1e3, -1e3]]), np.array([[0.0, 0.0], [1.0, 1.0]]), 1e-3)
    assert np.all(np.isfinite(g))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(coords, coords), min_size=1, max_size=5), coords, coords, coords,
       coords, st.floats(0.1, 3.0))
def test_kde_translation_equivariant(pts, x0, x1, c0, c1, h):
    pts = np.array(pts)
    x = np.array([[x0, x1]])
    c = np.array([c0, c1])
    assert np.allclose(kde_log_score(x, pts, h), kde_log_score(x + c, pts + c, h), atol=1e-7)


def test_path_field_cases():
    times = np.linspace(0, 1, 11)
    one = LatentPathSet(times, np.tile(times[None, :, None], (1, 1, 2)))
    strong = SigmoidSchedule(1.5, 0.0, 0.5)
    bw = SigmoidSchedule(0.2, 0.0, 0.5)
    pg = PathGuidance(one, strong, bw)
    on_path = np.array([[0.3, 0.3]])
    assert np.allclose(pg.field(on_path, 0.3), 0.0)
    zero = PathGuidance(one, SigmoidSchedule(0.0, 0.0, 0.5), bw)
    assert np.all(zero.field(np.ones((4, 2)), 0.6) == 0)
    # two mirror paths about the x axis
    states = np.zeros((2, 11, 2))
    states[0, :, 1], states[1, :, 1] = 1.0, -1.0
    sym = PathGuidance(LatentPathSet(times, states), strong, bw)
    f = sym.field(np.array([[0.4, 0.0]]), 0.5)
    assert abs(f[0, 1]) < 1e-12


def test_path_field_formula(rng):
    times = np.linspace(0, 1, 11)
    paths = LatentPathSet(times, rng.standard_normal((3, 11, 2)))
    s, b = SigmoidSchedule(2.0, 5.0, 0.4), SigmoidSchedule(0.3, -3.0, 0.6)
    x = rng.standard_normal((5, 2))
    pts = paths.states[:, 7]
    expect = s.strength(0.7) * kde_log_score(x, pts, b.bandwidth(0.7))
    assert np.allclose(PathGuidance(paths, s, b).field(x, 0.7), expect)


def test_observable_field_closed_form(rng):
    # O(x) = x and s = -x give dx0_hat/dx_t = alpha_t, so h = -eta * lambda * alpha_t
    og = ObservableGuidance([Identity()], [0.8], ExpSchedule(1.7, 2.0))
    for t in (0.05, 0.3, 0.6, 0.95):
        x = rng.standard_normal((9, 1))
        h = og.field(x, t, normal, sched)
        expect = -eta_exp(og.schedule, t) * 0.8 * sched.alpha(t)
        assert np.allclose(h, expect, rtol=1e-10)


def test_observable_field_trivial_zeros(rng):
    x = rng.standard_normal((5, 1))
    for og in (ObservableGuidance([Identity()], [0.0], ExpSchedule(1.0, 1.0)),
               ObservableGuidance([Identity()], [1.0], ExpSchedule(0.0, 1.0))):
        assert np.all(og.field(x, 0.5, normal, sched) == 0)
    with pytest.raises(ValueError):
        ObservableGuidance([Identity()], [1.0, 2.0], ExpSchedule(1.0, 1.0))


def test_observable_jvp_matches_fd(quadwell_model, rng):
    obs = GmmObservable()
    sch = ExpSchedule(5.0, 2.0)
    exact = ObservableGuidance([obs], [-0.5], sch, jacobian_mode="jvp")
    approx = ObservableGuidance([obs], [-0.5], sch, jacobian_mode="fd")
    errs = []
    for _ in range(100):
        x = rng.uniform(-1.2, 1.2, (1, 1))
        t = rng.uniform(0.02, 0.98)
        a = exact.field(x, t, quadwell_model, sched)
        b = approx.field(x, t, quadwell_model, sched)
        errs.append(np.abs(a - b).max() / max(np.abs(a).max(), 1e-8))
    assert max(errs) < 1e-3


def test_loss_field_clip_and_kernel_max(rng):
    guides = np.array([[0.5]])
    strength = SigmoidSchedule(2.0, 0.0, 0.5)
    lg = LossGuidance(guides, strength, 0.05, clip=0.3)
    for t in (0.1, 0.5, 0.9):
        h = lg.field(3 * rng.standard_normal((50, 1)), t, normal, sched)
        assert np.max(np.linalg.norm(h, axis=1)) <= strength.strength(t) * 0.3 * (1 + 1e-12)
    # x0_hat = alpha_t * x for the N(0,1) score, so this x maps onto the guide
    t = 0.4
    x = guides / sched.alpha(t)
    assert np.allclose(lg.field(x, t, normal, sched), 0.0, atol=1e-9)
    off = LossGuidance(guides, SigmoidSchedule(0.0, 0.0, 0.5), 0.1)
    assert np.all(off.field(rng.standard_normal((3, 1)), 0.5, normal, sched) == 0)
    with pytest.raises(ValueError):
        LossGuidance(guides, strength, 0.0)
    with pytest.raises(ValueError):
        LossGuidance(guides, strength, 0.1, clip=-1.0)


def test_lkde_zero_noise_single_guide(quadwell_model):
    x0 = np.array([[0.27]])
    paths = encode(quadwell_model, x0, grid=TimeGrid.forward(500))
    out = latent_kde_baseline(quadwell_model, paths, 0.0, 8, seed=3, grid=TimeGrid.reverse(500))
    assert np.all(out == out[0])
    assert abs(out[0, 0] - 0.27) < 1e-3
    with pytest.raises(ValueError):
        latent_kde_baseline(quadwell_model, paths, -0.1, 4)


def test_sr_small_t_mid_returns_guides():
    times = np.linspace(0, 1, 101)
    states = np.stack([np.full(101, 0.4), np.full(101, -0.6)])[:, :, None]
    paths = LatentPathSet(times, states)
    out = stochastic_reverse_baseline(normal, paths, 1e-4, 3, seed=0)
    assert np.allclose(out[:3], 0.4, atol=0.05) and np.allclose(out[3:], -0.6, atol=0.05)
    again = stochastic_reverse_baseline(normal, paths, 0.5, 3, seed=0)
    assert np.array_equal(again, stochastic_reverse_baseline(normal, paths, 0.5, 3, seed=0))
    with pytest.raises(ValueError):
        stochastic_reverse_baseline(normal, paths, 0.0, 3)
