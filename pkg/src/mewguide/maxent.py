"""Maximum-entropy reweighting of a reference sample set.

The reweighted density is ``p'(x) ∝ p(x) exp(-sum_i lambda_i O_i(x))``.
Multipliers are found by minimising the convex dual

    D(lambda) = log sum_j exp(-sum_i lambda_i O_i(x_j)) + sum_i lambda_i o_i

whose gradient is ``o - E_w[O]`` and whose Hessian is ``Cov_w[O]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


class InfeasibleTargetError(ValueError):
    """A target lies outside the range of observable values on the samples."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


def observable_matrix(samples, observables):
    """``(N, M)`` array with ``O_i(x_j)`` in column ``i``."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    cols = [np.asarray(obs.value(samples) if hasattr(obs, "value") else obs(samples), dtype=float)
            for obs in observables]
    return np.stack([c.reshape(-1) for c in cols], axis=1)


def _log_weights(values, lambdas):
    logits = -values @ lambdas
    return logits - logsumexp(logits)


def reweight(samples, observables, lambdas):
    """Normalised maxent weights for ``samples`` at multipliers ``lambdas``."""
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if not np.all(np.isfinite(lambdas)):
        raise ValueError("lambdas must be finite")
    values = observable_matrix(samples, observables)
    return np.exp(_log_weights(values, lambdas))


@dataclass
class MaxEntProblem:
    samples: np.ndarray
    observables: list
    targets: np.ndarray
    tolerance: float = 1e-6
    max_iter: int = 200

    def __post_init__(self):
        self.targets = np.atleast_1d(np.asarray(self.targets, dtype=float))
        if len(self.observables) != self.targets.size:
            raise ValueError("need one target per observable")
        if len(self.samples) == 0:
            raise ValueError("maxent needs a non-empty sample set")


def dual(values, targets, lambdas):
    return float(logsumexp(-values @ lambdas) + lambdas @ targets)


def estimate_lambda(problem, return_info=False):
    """Damped Newton on the dual with backtracking.

    Falls back to a plain gradient step when the weighted covariance is
    too ill-conditioned to invert.  ``info["dual"]`` records the dual value
    after every accepted step.
    """
    values = observable_matrix(problem.samples, problem.observables)
    targets = problem.targets
    lo, hi = values.min(axis=0), values.max(axis=0)
    for i, (o, a, b) in enumerate(zip(targets, lo, hi)):
        if not a < o < b:
            name = getattr(problem.observables[i], "name", f"observable {i}")
            raise InfeasibleTargetError(
                f"target {o:.6g} for {name} lies outside the sample range [{a:.6g}, {b:.6g}]")

    lam = np.zeros(targets.size)
    history = [dual(values, targets, lam)]
    for it in range(problem.max_iter + 1):
        w = np.exp(_log_weights(values, lam))
        mean = w @ values
        resid = mean - targets
        if np.max(np.abs(resid)) <= problem.tolerance:
            break
        if it == problem.max_iter:
            raise ConvergenceError(
                f"maxent did not converge in {problem.max_iter} iterations; "
                f"residuals {resid.tolist()}", resid)
        grad = targets - mean
        centred = values - mean
        hess = (centred * w[:, None]).T @ centred
        step = None
        if np.linalg.cond(hess) < 1e12:
            step = -np.linalg.solve(hess, grad)
        if step is None or not np.all(np.isfinite(step)):
            step = -grad
        f0 = history[-1]
        slope = grad @ step
        a = 1.0
        while a > 1e-12:
            f1 = dual(values, targets, lam + a * step)
            if f1 <= f0 + 1e-4 * a * slope:
                break
            a *= 0.5
        else:
            f1 = f0
            a = 0.0
        lam = lam + a * step
        history.append(min(f1, f0))
        if a == 0.0:
            # no descent possible; one last residual check then give up
            w = np.exp(_log_weights(values, lam))
            resid = w @ values - targets
            if np.max(np.abs(resid)) <= problem.tolerance:
                break
            raise ConvergenceError(f"maxent line search stalled; residuals {resid.tolist()}",
                                   resid)
    if return_info:
        return lam, {"iterations": it, "dual": history, "residuals": resid}
    return lam
