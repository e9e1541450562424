"""Schedule search for the objective ``L1 + gamma * Delta W``.

``search`` is derivative-free: a full grid, uniform random draws, or a
Gaussian-process surrogate with expected improvement.  All candidates are
evaluated with the same sampler seed so that the search compares
parameters rather than noise realisations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel, WhiteKernel

from .diffusion import NoiseSchedule
from .excess_work import accumulate_work
from .samplers import TimeGrid, pf_ode_sample, reverse_sde_sample


def observable_l1(samples, observables, targets):
    """Mean squared gap between target and empirical observable expectations."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) == 0:
        raise ValueError("observable_l1 needs samples")
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    means = np.array([np.mean(obs.value(samples)) for obs in observables])
    return float(np.mean((targets - means) ** 2))


def path_l1(samples, region_test):
    """One minus the fraction of samples inside the target region."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) == 0:
        raise ValueError("path_l1 needs samples")
    return float(1.0 - np.mean(region_test(samples)))


@dataclass(frozen=True)
class SearchSpace:
    """Box over named parameters, e.g. ``{"eta_init": (1, 20), "kappa": (1, 20)}``.

    An entry ``(lo, hi, "log")`` is searched uniformly in ``log`` of the
    parameter; ``lo`` must then be positive.
    """

    bounds: dict

    def __post_init__(self):
        for k, v in self.bounds.items():
            if len(v) not in (2, 3) or (len(v) == 3 and v[2] not in ("linear", "log")):
                raise ValueError(f"bounds for {k} must be (lo, hi) or (lo, hi, 'linear'|'log')")
            lo, hi = v[0], v[1]
            if not lo < hi:
                raise ValueError(f"empty interval for {k}: [{lo}, {hi}]")
            if self._is_log(k) and not lo > 0:
                raise ValueError(f"log-scaled parameter {k} needs a positive lower bound")

    def _is_log(self, name):
        v = self.bounds[name]
        return len(v) == 3 and v[2] == "log"

    @property
    def names(self):
        return list(self.bounds)

    @property
    def dim(self):
        return len(self.bounds)

    @property
    def lower(self):
        return np.array([v[0] for v in self.bounds.values()], dtype=float)

    @property
    def upper(self):
        return np.array([v[1] for v in self.bounds.values()], dtype=float)

    @property
    def log_mask(self):
        return np.array([self._is_log(k) for k in self.names], dtype=bool)

    def _warp(self, x):
        return np.where(self.log_mask, np.log(np.where(self.log_mask, x, 1.0)), x)

    def to_params(self, u):
        """Map a point of the unit cube to a parameter dict."""
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        lo, hi = self._warp(self.lower), self._warp(self.upper)
        z = lo + u * (hi - lo)
        x = np.where(self.log_mask, np.exp(z), z)
        # keep endpoints exact after the exp round trip
        x = np.clip(x, self.lower, self.upper)
        return {k: float(v) for k, v in zip(self.names, x)}

    def to_unit(self, params):
        x = np.array([params[k] for k in self.names], dtype=float)
        lo, hi = self._warp(self.lower), self._warp(self.upper)
        return (self._warp(x) - lo) / (hi - lo)

    def contains(self, params):
        x = np.array([params[k] for k in self.names], dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def grid(self, per_dim):
        axes = [np.linspace(0.0, 1.0, per_dim)] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return [self.to_params(u) for u in np.stack([m.ravel() for m in mesh], axis=1)]

    def to_dict(self):
        return {k: list(v) for k, v in self.bounds.items()}


@dataclass
class EvalResult:
    total: float
    l1: float
    delta_w: float
    failed: bool = False
    degenerate_fraction: float = 0.0
    batch: object = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.total, self.l1, self.delta_w))


@dataclass
class MewObjective:
    """Guided-sampler objective.

    ``guidance_factory(params)`` builds a guidance field and ``l1(samples)``
    scores the terminal samples.  ``kind`` picks the reverse SDE or the
    PF ODE.
    """

    guidance_factory: object
    model: object
    l1: object
    gamma: float = 1e-3
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    kind: str = "sde"
    n: int = 1000
    n_steps: int = 500
    seed: int = 0
    squared: bool = True
    max_degenerate: float = 0.5
    penalty: float = 1e3
    block_size: int = 512
    n_workers: int = 1

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.n < 1:
            raise ValueError("sample count must be >= 1")
        if self.kind not in ("sde", "ode"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")

    def sample(self, guidance):
        run = reverse_sde_sample if self.kind == "sde" else pf_ode_sample
        return run(self.model, self.schedule, guidance, TimeGrid.reverse(self.n_steps), n=self.n,
                   seed=self.seed, block_size=self.block_size, n_workers=self.n_workers)

    def __call__(self, params):
        return evaluate(self, params)


def evaluate(objective, params):
    """Run the guided sampler once and return ``L1 + gamma * Delta W`` with its parts."""
    batch = objective.sample(objective.guidance_factory(params))
    frac = batch.degenerate_fraction
    if frac > objective.max_degenerate or len(batch) == 0:
        return EvalResult(objective.penalty, np.nan, np.nan, True, frac, batch)
    l1 = float(objective.l1(batch.samples))
    dw = accumulate_work(batch, objective.schedule, objective.squared)
    return EvalResult(l1 + objective.gamma * dw, l1, dw, False, frac, batch)


@dataclass
class SearchResult:
    best_params: dict
    best_value: float
    trace: list

    def trace_rows(self, names):
        rows = []
        for rec in self.trace:
            rows.append([rec["params"][k] for k in names]
                        + [rec["l1"], rec["delta_w"], rec["total"], int(rec["failed"])])
        return rows


def _record(fn, params):
    out = fn(params)
    if isinstance(out, EvalResult):
        return {"params": params, "total": float(out.total), "l1": float(out.l1),
                "delta_w": float(out.delta_w), "failed": bool(out.failed)}
    val = float(out)
    return {"params": params, "total": val, "l1": val, "delta_w": 0.0, "failed": False}


def _expected_improvement(gp, u, best):
    mu, sd = gp.predict(np.atleast_2d(u), return_std=True)
    sd = np.maximum(sd, 1e-12)
    z = (best - mu) / sd
    return (best - mu) * norm.cdf(z) + sd * norm.pdf(z)


def _propose(gp, space, best, rng, n_random=1024, n_starts=3):
    cand = rng.random((n_random, space.dim))
    ei = _expected_improvement(gp, cand, best)
    starts = cand[np.argsort(-ei)[:n_starts]]
    best_u, best_ei = starts[0], ei.max()
    for u0 in starts:
        res = minimize(lambda u: -_expected_improvement(gp, u, best)[0], u0,
                       method="L-BFGS-B", bounds=[(0.0, 1.0)] * space.dim)
        if np.isfinite(res.fun) and -res.fun > best_ei:
            best_u, best_ei = np.clip(res.x, 0.0, 1.0), -res.fun
    return best_u


def _surrogate_targets(trace, log_target):
    y = np.array([r["total"] for r in trace])
    ok = ~np.array([r["failed"] for r in trace]) & np.isfinite(y)
    # failed points enter the surrogate at the worst successful value
    y = np.where(ok, y, y[ok].max() if ok.any() else 1.0)
    if log_target:
        # totals span orders of magnitude; on a log scale the surrogate still
        # resolves differences among the good points
        y = np.log(np.maximum(y, 1e-12))
    return y


def search(fn, space, budget=64, strategy="gp-ei", seed=0, candidates=None, n_init=None,
           log_target=True):
    """Minimise ``fn(params)`` over ``space``.

    ``fn`` returns an :class:`EvalResult` or a float.  With ``candidates``
    given, exactly those points are evaluated.  ``grid`` enumerates
    ``floor(budget ** (1/d))`` points per dimension.  ``gp-ei`` starts from
    a scrambled Sobol design and fits the surrogate to ``log(total)``
    (floored at 1e-12) unless ``log_target`` is false.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    trace = []
    if candidates is not None:
        for p in candidates:
            trace.append(_record(fn, dict(p)))
    elif strategy == "grid":
        per_dim = max(1, int(np.floor(budget ** (1.0 / space.dim) + 1e-9)))
        for p in space.grid(per_dim):
            trace.append(_record(fn, p))
    elif strategy == "random":
        for u in rng.random((budget, space.dim)):
            trace.append(_record(fn, space.to_params(u)))
    elif strategy == "gp-ei":
        n_init = n_init or min(budget, max(5, 2 * space.dim + 1))
        sobol = qmc.Sobol(space.dim, scramble=True, seed=rng)
        with warnings.catch_warnings():
            # Sobol balance warning for non-power-of-two sizes
            warnings.simplefilter("ignore", UserWarning)
            design = sobol.random(n_init)
        for u in design:
            trace.append(_record(fn, space.to_params(u)))
        kernel = (ConstantKernel(1.0, (1e-3, 1e3))
                  * RBF(np.full(space.dim, 0.3), (1e-2, 1e1))
                  + WhiteKernel(1e-6, (1e-10, 1e-1)))
        while len(trace) < budget:
            U = np.array([space.to_unit(r["params"]) for r in trace])
            y = _surrogate_targets(trace, log_target)
            gp = GaussianProcessRegressor(kernel, normalize_y=True, n_restarts_optimizer=1,
                                          random_state=int(rng.integers(2**31)))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                gp.fit(U, y)
            u = _propose(gp, space, y.min(), rng)
            trace.append(_record(fn, space.to_params(u)))
    else:
        raise ValueError(f"unknown search strategy {strategy!r}")
    i = int(np.argmin([r["total"] for r in trace]))
    return SearchResult(dict(trace[i]["params"]), trace[i]["total"], trace)
