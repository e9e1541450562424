"""Synthetic systems: 1D Boltzmann densities and a three-arc 2D dataset.

The 1D sampler tabulates ``exp(-beta U)`` on a dense grid and draws by
inverting the trapezoid CDF, so expectations computed with
:meth:`Potential1D.expectation` are the ground truth the samplers target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

N_GRID = 2**16 + 1


def prinz_energy(x):
    """Quadruple-well energy on ``[-1, 1]`` with minima near -0.74, -0.22, 0.27, 0.67."""
    x = np.asarray(x, dtype=float)
    return 4.0 * (x**8 + 0.8 * np.exp(-80.0 * x**2) + 0.2 * np.exp(-80.0 * (x - 0.5) ** 2)
                  + 0.5 * np.exp(-40.0 * (x + 0.5) ** 2))


@dataclass(frozen=True)
class Potential1D:
    """Boltzmann density ``p(x) ∝ exp(-beta U(x))`` on a closed interval."""

    energy: object
    beta: float = 1.0
    support: tuple = (-1.0, 1.0)
    n_grid: int = N_GRID

    def __post_init__(self):
        a, b = self.support
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ValueError("support must be a finite, non-empty interval")
        if self.n_grid < 2**14:
            raise ValueError("quadrature grid needs at least 2**14 points")
        _, dens = self.density_grid()
        z = np.trapezoid(dens, self.grid)
        if not (np.isfinite(z) and z > 0):
            raise ValueError("exp(-beta U) is not integrable on the support")

    @property
    def grid(self):
        return np.linspace(self.support[0], self.support[1], self.n_grid)

    def density_grid(self):
        """Normalised density on :attr:`grid`."""
        x = self.grid
        u = np.asarray(self.energy(x), dtype=float) * np.ones_like(x)
        if not np.all(np.isfinite(u)):
            raise ValueError("energy is not finite on the support")
        logp = -self.beta * (u - u.min())
        dens = np.exp(logp)
        return x, dens / np.trapezoid(dens, x)

    def cdf_grid(self):
        x, dens = self.density_grid()
        cdf = cumulative_trapezoid(dens, x, initial=0.0)
        return x, cdf / cdf[-1]

    def expectation(self, f):
        """Quadrature expectation of ``f`` (a callable on 1D arrays)."""
        x, dens = self.density_grid()
        vals = np.asarray(f(x[:, None]), dtype=float).reshape(x.size)
        return float(np.trapezoid(vals * dens, x))


def sample_boltzmann_1d(potential, n, seed=0):
    """``(n, 1)`` samples by inverse-CDF lookup on the quadrature grid."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x, cdf = potential.cdf_grid()
    u = np.random.default_rng(seed).random(n)
    return np.interp(u, cdf, x)[:, None]


def prinz_potential(beta=1.0):
    return Potential1D(prinz_energy, beta=beta)


def biased_potential(potential, slope):
    """Tilted potential ``U(x) + slope * x`` on the same support."""
    if not np.isfinite(slope):
        raise ValueError("slope must be finite")
    base = potential.energy

    def energy(x):
        x = np.asarray(x, dtype=float)
        return base(x) + slope * x

    return Potential1D(energy, beta=potential.beta, support=potential.support,
                       n_grid=potential.n_grid)


@dataclass(frozen=True)
class GmmObservable:
    """``O(x) = scale * sum_k w_k N(x; mu_k, var_k)`` on the first coordinate."""

    means: tuple = (0.30, -0.24, 0.69, -0.71)
    variances: tuple = (0.01, 0.01, 0.01, 0.01)
    weights: tuple = (0.35, 0.22, 0.27, 0.16)
    scale: float = 1.0
    name: str = "gmm"

    def __post_init__(self):
        if not (len(self.means) == len(self.variances) == len(self.weights)):
            raise ValueError("GMM parameter lists must have equal length")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("GMM weights must sum to 1")
        if min(self.variances) <= 0:
            raise ValueError("GMM variances must be positive")

    def _components(self, x):
        x = np.asarray(x, dtype=float)
        x = x.reshape(x.shape[0], -1)[:, 0] if x.ndim > 1 else x
        mu, var, w = (np.asarray(v, dtype=float) for v in (self.means, self.variances,
                                                             self.weights))
        diff = x[:, None] - mu
        comp = self.scale * w * np.exp(-0.5 * diff * diff / var) / np.sqrt(2 * np.pi * var)
        return diff, var, comp

    def value(self, x):
        return self._components(x)[2].sum(axis=1)

    def grad(self, x):
        """Gradient as an array shaped like ``x`` (zero beyond the first coordinate)."""
        x = np.asarray(x, dtype=float)
        diff, var, comp = self._components(x)
        g1 = -(comp * diff / var).sum(axis=1)
        if x.ndim == 1:
            return g1
        out = np.zeros_like(x.reshape(x.shape[0], -1))
        out[:, 0] = g1
        return out

    __call__ = value


@dataclass(frozen=True)
class Arc:
    center: tuple
    radius: float
    theta_start: float
    theta_end: float

    def points(self, theta):
        c = np.asarray(self.center, dtype=float)
        return c + self.radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)


def _default_arcs():
    # two interleaved moons plus a rare arc (id 2) hanging off the left end of
    # the first one, 0.2 away from it and well clear of the second
    return (Arc((0.0, 0.0), 1.0, 0.0, np.pi),
            Arc((1.0, 0.5), 1.0, np.pi, 2 * np.pi),
            Arc((-2.2, 0.0), 1.0, np.pi, 2 * np.pi))


@dataclass(frozen=True)
class MoonSpec:
    arcs: tuple = field(default_factory=_default_arcs)
    noise: float = 0.04
    rare_fraction: float = 0.025
    rare_arc: int = 2
    band: float = 0.12

    def __post_init__(self):
        if not 0.0 < self.rare_fraction < 1.0:
            raise ValueError("rare_fraction must lie in (0, 1)")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if not 0 <= self.rare_arc < len(self.arcs):
            raise ValueError("rare_arc must index one of the arcs")


def three_moons(spec=None, n=10000, seed=0):
    """``(points (n, 2), labels (n,))`` with ``round(rare_fraction * n)`` rare-arc points."""
    spec = spec or MoonSpec()
    rng = np.random.default_rng(seed)
    n_rare = int(round(spec.rare_fraction * n))
    common = [i for i in range(len(spec.arcs)) if i != spec.rare_arc]
    counts = np.full(len(spec.arcs), 0)
    counts[spec.rare_arc] = n_rare
    base, extra = divmod(n - n_rare, len(common))
    for j, i in enumerate(common):
        counts[i] = base + (1 if j < extra else 0)
    pts, labels = [], []
    for i, arc in enumerate(spec.arcs):
        theta = rng.uniform(arc.theta_start, arc.theta_end, counts[i])
        p = arc.points(theta)
        if spec.noise > 0:
            p = p + spec.noise * rng.standard_normal(p.shape)
        pts.append(p)
        labels.append(np.full(counts[i], i))
    pts, labels = np.concatenate(pts), np.concatenate(labels)
    order = rng.permutation(n)
    return pts[order], labels[order]


def moon_membership(x, spec=None, arc_id=None):
    """True where a point lies within ``band`` of the arc's circle and inside its angular span."""
    spec = spec or MoonSpec()
    arc = spec.arcs[spec.rare_arc if arc_id is None else arc_id]
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    d = x - np.asarray(arc.center)
    r = np.hypot(d[:, 0], d[:, 1])
    theta = np.mod(np.arctan2(d[:, 1], d[:, 0]) - arc.theta_start, 2 * np.pi)
    span = arc.theta_end - arc.theta_start
    # tolerate rounding at the span edges
    in_span = (theta <= span + 1e-12) | (theta >= 2 * np.pi - 1e-12)
    return (np.abs(r - arc.radius) <= spec.band) & in_span


def rare_region(spec=None):
    spec = spec or MoonSpec()
    return lambda x: moon_membership(x, spec)
