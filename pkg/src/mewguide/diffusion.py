"""Variance-preserving diffusion coefficients.

Time runs over ``[0, 1]`` with ``t = 1`` the Gaussian prior and ``t = 0``
the data end.  The forward process is

    dx = -0.5 * beta(t) * x dt + sqrt(beta(t)) dw

with a linear ``beta`` schedule, which gives the closed-form marginals
``x_t = alpha_t * x_0 + sigma_t * eps``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tweedie divides by alpha_t; below this the posterior mean is not trusted.
ALPHA_FLOOR = 1e-12


class IllConditionedError(ValueError):
    """Raised when alpha_t is too small for a Tweedie estimate."""


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"diffusion time must lie in [0, 1], got {t}")
    return t


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta VP-SDE schedule.

    Parameters
    ----------
    beta_min, beta_max : float
        Values of ``beta(t)`` at ``t = 0`` and ``t = 1``.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if not (self.beta_min > 0 and self.beta_max > 0):
            raise ValueError("beta_min and beta_max must be positive")

    def beta(self, t):
        t = _check_time(t)
        return self.beta_min + (self.beta_max - self.beta_min) * t

    def integrated_beta(self, t):
        """Closed form of ``int_0^t beta(s) ds``."""
        t = _check_time(t)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def marginal(self, t):
        """Return ``(alpha_t, sigma_t)``.

        ``sigma_t`` is computed from ``expm1`` so that ``alpha^2 + sigma^2 = 1``
        holds to rounding even for small ``t``.
        """
        B = self.integrated_beta(t)
        alpha = np.exp(-0.5 * B)
        sigma = np.sqrt(-np.expm1(-B))
        return alpha, sigma

    def alpha(self, t):
        return self.marginal(t)[0]

    def sigma(self, t):
        return self.marginal(t)[1]

    def diffusion(self, t):
        """``g(t) = sqrt(beta(t))``."""
        return np.sqrt(self.beta(t))

    def drift_diffusion(self, x, t):
        """Forward-SDE drift ``f(x, t)`` and diffusion ``g(t)``."""
        b = self.beta(t)
        return -0.5 * b * np.asarray(x, dtype=float), np.sqrt(b)

    def posterior_mean(self, x_t, t, score):
        """Tweedie estimate ``(x_t + sigma_t^2 * score) / alpha_t``.

        Raises :class:`IllConditionedError` when ``alpha_t`` underflows the
        floor; callers decide how to degrade.
        """
        alpha, sigma = self.marginal(t)
        if np.any(alpha < ALPHA_FLOOR):
            raise IllConditionedError(f"alpha_t={float(np.min(alpha)):.3e} below floor")
        return (np.asarray(x_t, dtype=float) + sigma**2 * np.asarray(score)) / alpha

    def to_dict(self):
        return {"beta_min": self.beta_min, "beta_max": self.beta_max}
