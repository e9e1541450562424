"""Score perturbations ``h(x, t)`` and their time schedules.

Each guidance object exposes ``field(x, t, model, schedule)`` returning an
``(n, d)`` array, and ``evaluate`` which also returns the model score so
samplers can reuse a shared forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .diffusion import ALPHA_FLOOR
from .samplers import TimeGrid, latent_lookup, pf_ode_sample, reverse_sde_sample


@dataclass(frozen=True)
class ExpSchedule:
    """``eta(t) = eta_init * exp(-kappa * (1 - t))``."""

    eta_init: float
    kappa: float

    def __call__(self, t):
        return eta_exp(self, t)


def eta_exp(schedule, t):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return schedule.eta_init * np.exp(-schedule.kappa * (1.0 - t))


@dataclass(frozen=True)
class SigmoidSchedule:
    """Step-like schedule with free-sign gain and shift.

    ``strength(t) = init * (1 - logistic(gain * (t - shift)))`` and
    ``bandwidth(t) = init + logistic(gain * (t - shift))``.
    """

    init: float
    gain: float
    shift: float

    def _logistic(self, t):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        return float(expit(self.gain * (t - self.shift)))

    def strength(self, t):
        return self.init * (1.0 - self._logistic(t))

    def bandwidth(self, t):
        return self.init + self._logistic(t)

    def check_bandwidth(self):
        # logistic is monotone, so the minimum over [0, 1] sits at an endpoint
        low = min(self.bandwidth(0.0), self.bandwidth(1.0))
        if not low > 0.0:
            raise ValueError(f"bandwidth schedule {self} is not positive on [0, 1]")
        return self


def sigmoid_strength(schedule, t):
    return schedule.strength(t)


def sigmoid_bandwidth(schedule, t):
    return schedule.bandwidth(t)


def kde_log_score(x, points, h):
    """Gradient of ``log sum_i exp(-|x - p_i|^2 / (2 h^2))`` with respect to ``x``."""
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise ValueError("kde_log_score needs at least one kernel centre")
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    diff = points[None, :, :] - x[:, None, :]
    logk = -np.sum(diff * diff, axis=2) / (2.0 * h * h)
    w = np.exp(logk - logsumexp(logk, axis=1, keepdims=True))
    return np.einsum("nm,nmd->nd", w, diff) / (h * h)


class Guidance:
    """Base class; subclasses implement :meth:`field`."""

    def field(self, x, t, model, schedule):
        raise NotImplementedError

    def evaluate(self, x, t, model, schedule):
        return model.score(x, t), self.field(x, t, model, schedule)

    def __call__(self, x, t, model, schedule):
        return self.field(x, t, model, schedule)


class ZeroGuidance(Guidance):
    def field(self, x, t, model, schedule):
        return np.zeros_like(np.asarray(x, dtype=float))


class ConstantGuidance(Guidance):
    """Spatially and temporally constant field, used by the analytic checks."""

    def __init__(self, value):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))

    def field(self, x, t, model, schedule):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.value, x.shape).copy()


def _score_and_jacobian(model, x, t, mode, fd_step):
    if mode == "jvp":
        d = x.shape[1]
        cols, s = [], None
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            s_j, col = model.score_and_jvp(x, t, e)
            s = s_j if s is None else s
            cols.append(col)
        return s, np.stack(cols, axis=2)
    if mode == "fd":
        d = x.shape[1]
        cols = []
        for j in range(d):
            e = np.zeros(d)
            e[j] = fd_step
            cols.append((model.score(x + e, t) - model.score(x - e, t)) / (2 * fd_step))
        return model.score(x, t), np.stack(cols, axis=2)
    raise ValueError(f"unknown jacobian mode {mode!r}")


def _pullback(vec, jac, alpha, sigma):
    """``(dx0_hat / dx_t)^T vec`` with ``dx0_hat/dx_t = (I + sigma^2 J) / alpha``."""
    return (vec + sigma**2 * np.einsum("nij,ni->nj", jac, vec)) / alpha


class ObservableGuidance(Guidance):
    """``h = -eta(t) * sum_i lambda_i grad_{x_t} O_i(x0_hat(x_t))``.

    ``observables`` are objects with ``value(x)`` and ``grad(x)`` on
    ``(n, d)`` arrays.  ``jacobian_mode`` is ``"jvp"`` (exact, forward mode)
    or ``"fd"`` (central differences of the score).
    """

    def __init__(self, observables, lambdas, schedule, jacobian_mode="jvp", fd_step=1e-4):
        self.observables = list(observables)
        self.lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
        if len(self.observables) != self.lambdas.size:
            raise ValueError("need one Lagrange multiplier per observable")
        self.schedule = schedule
        self.jacobian_mode = jacobian_mode
        self.fd_step = fd_step
        self.n_ill_conditioned = 0

    def evaluate(self, x, t, model, schedule):
        x = np.asarray(x, dtype=float)
        eta = float(eta_exp(self.schedule, t))
        if eta == 0.0 or not np.any(self.lambdas):
            return model.score(x, t), np.zeros_like(x)
        alpha, sigma = schedule.marginal(t)
        if alpha < ALPHA_FLOOR:
            self.n_ill_conditioned += 1
            return model.score(x, t), np.zeros_like(x)
        s, jac = _score_and_jacobian(model, x, t, self.jacobian_mode, self.fd_step)
        x0 = (x + sigma**2 * s) / alpha
        g = sum(lam * obs.grad(x0) for lam, obs in zip(self.lambdas, self.observables))
        return s, -eta * _pullback(g, jac, alpha, sigma)

    def field(self, x, t, model, schedule):
        return self.evaluate(x, t, model, schedule)[1]


class PathGuidance(Guidance):
    """``h = eta(t) * grad log sum_i K_{h(t)}(x, X_t^i)`` over encoded guide paths."""

    def __init__(self, paths, strength, bandwidth):
        self.paths = paths
        self.strength = strength
        self.bandwidth = bandwidth.check_bandwidth()

    def field(self, x, t, model=None, schedule=None):
        x = np.asarray(x, dtype=float)
        eta = self.strength.strength(t)
        if eta == 0.0:
            return np.zeros_like(x)
        return eta * kde_log_score(x, latent_lookup(self.paths, t), self.bandwidth.bandwidth(t))


class LossGuidance(Guidance):
    """Data-space KDE evaluated at the Tweedie mean, pulled back to ``x_t``.

    The pulled-back gradient is clipped to norm ``clip`` per chain before
    scaling by the strength schedule.
    """

    def __init__(self, guide_points, strength, bandwidth, clip=1.0, jacobian_mode="jvp",
                 fd_step=1e-4):
        self.guide_points = np.asarray(guide_points, dtype=float)
        self.strength = strength
        if isinstance(bandwidth, SigmoidSchedule):
            bandwidth.check_bandwidth()
        elif not bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        self.bandwidth = bandwidth
        if clip is not None and not clip > 0:
            raise ValueError("clip threshold must be positive")
        self.clip = clip
        self.jacobian_mode = jacobian_mode
        self.fd_step = fd_step
        self.n_ill_conditioned = 0

    def _h(self, t):
        if isinstance(self.bandwidth, SigmoidSchedule):
            return self.bandwidth.bandwidth(t)
        return float(self.bandwidth)

    def evaluate(self, x, t, model, schedule):
        x = np.asarray(x, dtype=float)
        eta = self.strength.strength(t)
        if eta == 0.0:
            return model.score(x, t), np.zeros_like(x)
        alpha, sigma = schedule.marginal(t)
        if alpha < ALPHA_FLOOR:
            self.n_ill_conditioned += 1
            return model.score(x, t), np.zeros_like(x)
        s, jac = _score_and_jacobian(model, x, t, self.jacobian_mode, self.fd_step)
        x0 = (x + sigma**2 * s) / alpha
        v = _pullback(kde_log_score(x0, self.guide_points, self._h(t)), jac, alpha, sigma)
        if self.clip is not None:
            norm = np.linalg.norm(v, axis=1, keepdims=True)
            v = v * np.minimum(1.0, self.clip / np.maximum(norm, 1e-300))
        return s, eta * v

    def field(self, x, t, model, schedule):
        return self.evaluate(x, t, model, schedule)[1]


def latent_kde_baseline(model, paths, noise, n, seed=0, schedule=None, grid=None):
    """Decode ``n`` draws from a Gaussian KDE on the encoded endpoints with the unguided PF ODE."""
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng([seed, 0x6B6465])
    centres = paths.endpoints
    idx = rng.integers(0, centres.shape[0], size=n)
    z = centres[idx] + noise * rng.standard_normal((n, centres.shape[1]))
    return pf_ode_sample(model, schedule, None, grid or TimeGrid.reverse(), x_init=z,
                         seed=seed).samples


def stochastic_reverse_baseline(model, paths, t_mid, n_per_guide, seed=0, schedule=None,
                                steps_per_unit=500):
    """Restart the reverse SDE at ``t_mid`` from each guide's latent state."""
    if not 0.0 < t_mid <= 1.0:
        raise ValueError("t_mid must lie in (0, 1]")
    start = np.repeat(latent_lookup(paths, t_mid), n_per_guide, axis=0)
    grid = TimeGrid(t_mid, 0.0, max(1, int(round(steps_per_unit * t_mid))))
    return reverse_sde_sample(model, schedule, None, grid, x_init=start, seed=seed).samples
