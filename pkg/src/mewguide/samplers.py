"""Reverse-SDE and probability-flow ODE samplers, and latent path encoding.

All samplers take an optional guidance object whose field ``h(x, t)`` is
added to the model score.  Chains are integrated in fixed, index-aligned
blocks and every chain draws its randomness from its own stream seeded by
``(seed, chain_index)``, so results do not depend on how blocks are spread
over workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diffusion import NoiseSchedule

# Chains whose state exceeds this magnitude are treated as diverged.
BLOWUP = 1e8


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n_steps`` steps from ``t_start`` to ``t_end``."""

    t_start: float = 1.0
    t_end: float = 0.0
    n_steps: int = 500

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        for t in (self.t_start, self.t_end):
            if not 0.0 <= t <= 1.0:
                raise ValueError("grid endpoints must lie in [0, 1]")
        if self.t_start == self.t_end:
            raise ValueError("grid must span a non-empty interval")

    @property
    def knots(self):
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    @classmethod
    def reverse(cls, n_steps=500, t_start=1.0):
        return cls(t_start, 0.0, n_steps)

    @classmethod
    def forward(cls, n_steps=500, t_end=1.0):
        return cls(0.0, t_end, n_steps)


@dataclass
class TrajectoryBatch:
    """Output of a sampler run.

    ``h`` holds the guidance field evaluated at the pre-step state of every
    step, shape ``(n_steps, n_kept, d)``; ``times`` and ``dts`` are the
    matching step start times and signed step sizes.
    """

    samples: np.ndarray
    initial: np.ndarray
    times: np.ndarray
    dts: np.ndarray
    h: np.ndarray
    chain_ids: np.ndarray
    n_requested: int
    degenerate_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    states: np.ndarray | None = None

    @property
    def n_degenerate(self):
        return int(self.degenerate_ids.size)

    @property
    def degenerate_fraction(self):
        return self.n_degenerate / self.n_requested if self.n_requested else 0.0

    def __len__(self):
        return self.samples.shape[0]


@dataclass
class LatentPathSet:
    """PF-ODE trajectories of guiding samples; ``states[i, k]`` is chain ``i`` at ``times[k]``."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape[1] != self.times.size:
            raise ValueError("states must have one entry per time knot")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("latent path times must be strictly increasing")

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[2]

    @property
    def origins(self):
        return self.states[:, 0]

    @property
    def endpoints(self):
        return self.states[:, -1]


def latent_lookup(paths, t):
    """States of all guiding paths at time ``t`` by linear interpolation between knots."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    times = paths.times
    if len(paths) == 0:
        return paths.states[:, 0] if paths.states.ndim == 3 else np.zeros((0, 1))
    if t <= times[0]:
        return paths.states[:, 0]
    if t >= times[-1]:
        return paths.states[:, -1]
    k = int(np.searchsorted(times, t, side="right")) - 1
    if times[k] == t:
        return paths.states[:, k]
    w = (t - times[k]) / (times[k + 1] - times[k])
    return (1.0 - w) * paths.states[:, k] + w * paths.states[:, k + 1]


def _chain_streams(seed, ids, dim, n_noise):
    """Prior draws and per-step noise for each chain from its own stream."""
    x1 = np.empty((ids.size, dim))
    noise = np.empty((n_noise, ids.size, dim))
    for j, i in enumerate(ids):
        rng = np.random.default_rng([seed, int(i)])
        x1[j] = rng.standard_normal(dim)
        if n_noise:
            noise[:, j] = rng.standard_normal((n_noise, dim))
    return x1, noise


def _score_and_field(model, schedule, guidance, x, t):
    if guidance is None:
        return model.score(x, t), None
    return guidance.evaluate(x, t, model, schedule)


def _flag_bad(x, bad):
    now = ~np.all(np.isfinite(x), axis=1) | np.any(np.abs(x) > BLOWUP, axis=1)
    if np.any(now):
        bad |= now
        x[bad] = 0.0
    return bad


def _run_block(kind, model, schedule, guidance, knots, ids, seed, x_init, keep_path):
    dim = model.dim
    n_steps = knots.size - 1
    n_noise = n_steps if kind == "sde" else 0
    x1, noise = _chain_streams(seed, ids, dim, n_noise)
    x = x1 if x_init is None else np.array(x_init, dtype=float)
    start = x.copy()
    bad = np.zeros(ids.size, dtype=bool)
    hs = np.zeros((n_steps, ids.size, dim))
    path = np.empty((ids.size, n_steps + 1, dim)) if keep_path else None
    if keep_path:
        path[:, 0] = x
    for k in range(n_steps):
        t, t_next = float(knots[k]), float(knots[k + 1])
        dt = t_next - t
        if kind == "ode" and t == 0.0:
            # the score is undefined at sigma = 0: take one explicit step with
            # the velocity at the far end of the interval
            s, h = _score_and_field(model, schedule, guidance, x, t_next)
            if h is not None:
                hs[k] = h
                s = s + h
            x = x - 0.5 * float(schedule.beta(t_next)) * (x + s) * dt
            bad = _flag_bad(x, bad)
            if keep_path:
                path[:, k + 1] = x
            continue
        s, h = _score_and_field(model, schedule, guidance, x, t)
        if h is not None:
            hs[k] = h
            s = s + h
        beta = float(schedule.beta(t))
        drift = -0.5 * beta * x - (beta if kind == "sde" else 0.5 * beta) * s
        if kind == "sde":
            x = x + drift * dt
            if k < n_steps - 1:
                x = x + np.sqrt(beta * abs(dt)) * noise[k]
        elif t_next == 0.0:
            # Euler into the data end; no corrector evaluation at sigma = 0
            x = x + drift * dt
        else:
            x_pred = x + drift * dt
            beta_n = float(schedule.beta(t_next))
            s_n = model.score(x_pred, t_next)
            if h is not None:
                s_n = s_n + h
            drift_n = -0.5 * beta_n * x_pred - 0.5 * beta_n * s_n
            x = x + 0.5 * dt * (drift + drift_n)
        bad = _flag_bad(x, bad)
        if keep_path:
            path[:, k + 1] = x
    return x, start, hs, bad, path


def _sample(kind, model, schedule, guidance, grid, n, seed, x_init, keep_path,
            block_size, n_workers):
    schedule = schedule or NoiseSchedule()
    knots = grid.knots
    dim = model.dim
    if x_init is not None:
        x_init = np.asarray(x_init, dtype=float).reshape(-1, dim)
        n = x_init.shape[0]
    blocks = [np.arange(a, min(a + block_size, n)) for a in range(0, n, block_size)]

    def work(ids):
        xi = None if x_init is None else x_init[ids]
        return _run_block(kind, model, schedule, guidance, knots, ids, seed, xi, keep_path)

    if n_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(ids) for ids in blocks]

    n_steps = knots.size - 1
    if results:
        x = np.concatenate([r[0] for r in results])
        start = np.concatenate([r[1] for r in results])
        hs = np.concatenate([r[2] for r in results], axis=1)
        bad = np.concatenate([r[3] for r in results])
        path = np.concatenate([r[4] for r in results]) if keep_path else None
    else:
        x = np.zeros((0, dim))
        start = np.zeros((0, dim))
        hs = np.zeros((n_steps, 0, dim))
        bad = np.zeros(0, dtype=bool)
        path = np.zeros((0, n_steps + 1, dim)) if keep_path else None
    ok = ~bad
    return TrajectoryBatch(
        samples=x[ok],
        initial=start[ok],
        times=knots[:-1].copy(),
        dts=np.diff(knots),
        h=hs[:, ok],
        chain_ids=np.flatnonzero(ok),
        n_requested=n,
        degenerate_ids=np.flatnonzero(bad),
        states=None if path is None else path[ok],
    )


def reverse_sde_sample(model, schedule=None, guidance=None, grid=None, n=1000, seed=0,
                       x_init=None, keep_path=False, block_size=512, n_workers=1):
    """Euler-Maruyama integration of ``dx = [f - g^2 (s + h)] dt + g dw`` from ``grid.t_start`` down.

    The last step adds no noise.  Non-finite chains are dropped from
    ``samples`` and listed in ``degenerate_ids``.
    """
    grid = grid or TimeGrid.reverse()
    return _sample("sde", model, schedule, guidance, grid, n, seed, x_init, keep_path,
                   block_size, n_workers)


def pf_ode_sample(model, schedule=None, guidance=None, grid=None, n=1000, seed=0,
                  x_init=None, keep_path=False, block_size=512, n_workers=1):
    """Heun integration of ``dx/dt = f - g^2 (s + h) / 2``; ``seed`` only draws the prior points."""
    grid = grid or TimeGrid.reverse()
    return _sample("ode", model, schedule, guidance, grid, n, seed, x_init, keep_path,
                   block_size, n_workers)


def encode(model, x0, schedule=None, grid=None):
    """Integrate the unguided PF ODE forward from each guiding sample.

    Returns the states at every knot of ``grid`` (which must run upwards).
    """
    grid = grid or TimeGrid.forward()
    if grid.t_end <= grid.t_start:
        raise ValueError("encoding grid must run forward in time")
    x0 = np.asarray(x0, dtype=float).reshape(-1, model.dim)
    if x0.shape[0] == 0:
        return LatentPathSet(grid.knots, np.zeros((0, grid.n_steps + 1, model.dim)))
    if not np.all(np.isfinite(x0)):
        raise ValueError("guiding samples must be finite")
    batch = pf_ode_sample(model, schedule, None, grid, x_init=x0, keep_path=True,
                          block_size=max(1, x0.shape[0]))
    if batch.n_degenerate:
        raise FloatingPointError(
            f"PF-ODE encoding diverged for guiding sample(s) {batch.degenerate_ids.tolist()}")
    return LatentPathSet(grid.knots, batch.states)
