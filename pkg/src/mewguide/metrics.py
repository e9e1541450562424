"""Sample-quality metrics: histogram KL, 1D Wasserstein, Vendi score, success rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform


@dataclass(frozen=True)
class HistogramSpec:
    low: float = -1.2
    high: float = 1.2
    bins: int = 100
    eps: float = 1e-10

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("need at least two bins")
        if not (np.isfinite(self.low) and np.isfinite(self.high) and self.low < self.high):
            raise ValueError("histogram range must be finite and non-empty")


def _frequencies(x, spec):
    x = np.clip(np.asarray(x, dtype=float).reshape(-1), spec.low, spec.high)
    counts, _ = np.histogram(x, bins=spec.bins, range=(spec.low, spec.high))
    p = counts / max(counts.sum(), 1) + spec.eps
    return p / p.sum()


def kl_hist(p_samples, q_samples, spec=None):
    """KL(p || q) between smoothed bin frequencies.

    Samples outside the range are clipped into the edge bins so no mass is
    silently dropped.
    """
    spec = spec or HistogramSpec()
    if np.size(p_samples) == 0 or np.size(q_samples) == 0:
        raise ValueError("kl_hist needs non-empty sample sets")
    p = _frequencies(p_samples, spec)
    q = _frequencies(q_samples, spec)
    return float(max(np.sum(p * np.log(p / q)), 0.0))


def wasserstein_1d(a, b):
    """W1 as the integral of ``|F_a^{-1}(u) - F_b^{-1}(u)|`` over ``u`` in (0, 1).

    Empirical quantile functions are step functions, so the integral is exact
    on the merged set of breakpoints ``i/n`` and ``j/m``.
    """
    a = np.sort(np.asarray(a, dtype=float).reshape(-1))
    b = np.sort(np.asarray(b, dtype=float).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d needs non-empty sample sets")
    u = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
    du = np.diff(np.concatenate([[0.0], u]))
    # quantile index at the left end of each interval
    left = np.concatenate([[0.0], u[:-1]])
    ia = np.minimum(np.floor(left * a.size + 1e-12).astype(int), a.size - 1)
    ib = np.minimum(np.floor(left * b.size + 1e-12).astype(int), b.size - 1)
    return float(np.sum(np.abs(a[ia] - b[ib]) * du))


def median_bandwidth(samples):
    d = pdist(np.asarray(samples, dtype=float).reshape(len(samples), -1))
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def vendi(samples, bandwidth=None):
    """Vendi score with the Gaussian similarity ``exp(-|x - y|^2 / (2 bw^2))``.

    ``bandwidth`` defaults to the median non-zero pairwise distance.
    """
    x = np.asarray(samples, dtype=float)
    x = x.reshape(x.shape[0], -1)
    n = x.shape[0]
    if n == 0:
        raise ValueError("vendi needs at least one sample")
    bw = median_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not bw > 0:
        raise ValueError("bandwidth must be positive")
    sq = squareform(pdist(x, "sqeuclidean")) if n > 1 else np.zeros((1, 1))
    lam = np.linalg.eigvalsh(np.exp(-sq / (2 * bw * bw)) / n)
    if np.any(lam < -1e-8):
        raise ValueError(f"similarity matrix is not PSD (min eigenvalue {lam.min():.3e})")
    lam = lam[lam > 0]
    return float(np.exp(-np.sum(lam * np.log(lam))))


def success_rate(samples, region_test):
    samples = np.asarray(samples, dtype=float)
    if len(samples) == 0:
        raise ValueError("success_rate needs a non-empty sample set")
    return float(np.mean(region_test(samples)))
