"""Small MLP score network, denoising score matching, EMA and checkpoints.

The network predicts the noise ``eps`` and is converted to a score with
``s = -eps_hat / sigma_t``.  Everything is plain numpy on a flat parameter
vector so that forward-mode input derivatives (``score_jvp``) are exact and
training is bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule

CHECKPOINT_FORMAT = "mewguide-checkpoint"
CHECKPOINT_VERSION = 1

SIGMA_CLAMP = 1e-5


def time_embedding(t, n_rows):
    """Three sinusoidal features of ``t``, broadcast to ``n_rows``."""
    t = np.broadcast_to(np.asarray(t, dtype=float), (n_rows,))
    return np.stack(
        [np.sin(0.5 * np.pi * t), np.cos(0.5 * np.pi * t), np.sin(np.pi * t)], axis=1
    )


def _silu(z):
    s = 0.5 + 0.5 * np.tanh(0.5 * z)
    return z * s, s


def _silu_prime(z, s):
    return s * (1.0 + z * (1.0 - s))


class MlpScoreNet:
    """eps-predicting MLP ``[x, emb(t)] -> eps_hat`` with SiLU activations.

    Parameters
    ----------
    input_dim : int
        Data dimension (1 or 2 in this package).
    schedule : NoiseSchedule
        Used to turn the noise prediction into a score.
    hidden_dim, n_hidden_layers : int
        Width and depth of the hidden stack.
    params : ndarray, optional
        Flat parameter vector.  When omitted a fan-in scaled uniform init is
        drawn from ``seed`` with the output layer set to zero.
    """

    time_embed_dim = 3

    def __init__(self, input_dim, schedule=None, hidden_dim=64, n_hidden_layers=3,
                 params=None, seed=0):
        if input_dim < 1:
            raise ValueError("input_dim must be positive")
        if n_hidden_layers < 2:
            raise ValueError("n_hidden_layers must be >= 2")
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.n_hidden_layers = int(n_hidden_layers)
        self.schedule = schedule or NoiseSchedule()
        sizes = [self.input_dim + self.time_embed_dim]
        sizes += [self.hidden_dim] * self.n_hidden_layers + [self.input_dim]
        self.sizes = sizes
        self._shapes = [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]
        self.n_params = sum(a * b + b for a, b in self._shapes)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        params = np.array(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params
        self.layers = self._views(self.params)

    @property
    def dim(self):
        return self.input_dim

    def _views(self, flat):
        out, k = [], 0
        for a, b in self._shapes:
            W = flat[k:k + a * b].reshape(a, b)
            k += a * b
            out.append((W, flat[k:k + b]))
            k += b
        return out

    def _init_params(self, rng):
        flat = np.zeros(self.n_params)
        for i, (W, b) in enumerate(self._views(flat)):
            if i == len(self._shapes) - 1:
                continue  # zero output layer: the initial score is identically 0
            bound = 1.0 / math.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)
        return flat

    def with_params(self, params):
        return MlpScoreNet(self.input_dim, self.schedule, self.hidden_dim,
                           self.n_hidden_layers, params=params)

    def architecture(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "n_hidden_layers": self.n_hidden_layers,
            "time_embed_dim": self.time_embed_dim,
            "activation": "silu",
        }

    def _inputs(self, x, t):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.input_dim == 1 else x[None, :]
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected points of dimension {self.input_dim}, got {x.shape[-1]}")
        return x, np.concatenate([x, time_embedding(t, x.shape[0])], axis=1)

    def _forward(self, inp, tangent=None, cache=None):
        a, da = inp, tangent
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            z = a @ W + b
            dz = None if da is None else da @ W
            if i == last:
                return z, dz
            a, s = _silu(z)
            if cache is not None:
                cache.append((z, s, a))
            if da is not None:
                da = _silu_prime(z, s) * dz

    def eps(self, x, t):
        _, inp = self._inputs(x, t)
        return self._forward(inp)[0]

    def _inv_sigma(self, t, n):
        sigma = np.broadcast_to(self.schedule.sigma(t), (n,))
        return 1.0 / np.maximum(sigma, SIGMA_CLAMP)[:, None]

    def score(self, x, t):
        x, inp = self._inputs(x, t)
        return -self._forward(inp)[0] * self._inv_sigma(t, x.shape[0])

    def score_and_jvp(self, x, t, v):
        """Score and the exact directional input derivative ``(ds/dx) v``."""
        x, inp = self._inputs(x, t)
        v = np.broadcast_to(np.asarray(v, dtype=float), x.shape)
        tangent = np.concatenate([v, np.zeros((x.shape[0], self.time_embed_dim))], axis=1)
        e, de = self._forward(inp, tangent)
        inv = self._inv_sigma(t, x.shape[0])
        return -e * inv, -de * inv

    def score_jvp(self, x, t, v):
        return self.score_and_jvp(x, t, v)[1]

    # -- training -------------------------------------------------------

    def loss_and_grad(self, x_t, t, eps):
        """Mean squared eps-prediction error and its gradient wrt ``params``."""
        _, inp = self._inputs(x_t, t)
        n = inp.shape[0]
        cache = []
        out, _ = self._forward(inp, cache=cache)
        resid = out - eps
        loss = float(np.sum(resid * resid) / n)
        grad = np.zeros_like(self.params)
        gviews = self._views(grad)
        delta = 2.0 * resid / n
        acts = [inp] + [c[2] for c in cache]
        for i in range(len(self.layers) - 1, -1, -1):
            gW, gb = gviews[i]
            gW[...] = acts[i].T @ delta
            gb[...] = delta.sum(axis=0)
            if i == 0:
                break
            z, s, _ = cache[i - 1]
            delta = (delta @ self.layers[i][0].T) * _silu_prime(z, s)
        return loss, grad


class AnalyticGaussianScore:
    """Exact VP score for Gaussian data ``N(mean, var * I)``.

    With the default standard-normal data the score is ``-x`` for all ``t``.
    """

    def __init__(self, dim=1, mean=0.0, var=1.0, schedule=None):
        self.input_dim = int(dim)
        self.mean = mean
        self.var = float(var)
        self.schedule = schedule or NoiseSchedule()

    @property
    def dim(self):
        return self.input_dim

    def _prec(self, t):
        alpha, sigma = self.schedule.marginal(t)
        return alpha, 1.0 / (alpha**2 * self.var + sigma**2)

    def score(self, x, t):
        x = np.asarray(x, dtype=float)
        alpha, prec = self._prec(t)
        return -(x - alpha * self.mean) * np.reshape(prec, (-1, 1) if np.ndim(prec) else ())

    def score_jvp(self, x, t, v):
        _, prec = self._prec(t)
        v = np.broadcast_to(np.asarray(v, dtype=float), np.shape(x))
        return -v * np.reshape(prec, (-1, 1) if np.ndim(prec) else ())

    def score_and_jvp(self, x, t, v):
        return self.score(x, t), self.score_jvp(x, t, v)


class LinearScore:
    """``s(x) = x @ W.T``; the Jacobian is ``W`` everywhere."""

    def __init__(self, W, schedule=None):
        self.W = np.atleast_2d(np.asarray(W, dtype=float))
        self.input_dim = self.W.shape[0]
        self.schedule = schedule or NoiseSchedule()

    @property
    def dim(self):
        return self.input_dim

    def score(self, x, t):
        return np.asarray(x, dtype=float) @ self.W.T

    def score_jvp(self, x, t, v):
        return np.broadcast_to(np.asarray(v, dtype=float), np.shape(x)) @ self.W.T

    def score_and_jvp(self, x, t, v):
        return self.score(x, t), self.score_jvp(x, t, v)


class ZeroScore(LinearScore):
    def __init__(self, dim=1, schedule=None):
        super().__init__(np.zeros((dim, dim)), schedule)


def score_jacobian(model, x, t):
    """Full input Jacobian ``ds/dx`` of shape ``(n, d, d)`` from ``d`` JVPs."""
    x = np.asarray(x, dtype=float)
    d = x.shape[1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        cols.append(model.score_jvp(x, t, e))
    return np.stack(cols, axis=2)


# -- EMA -----------------------------------------------------------------


@dataclass
class EmaWeights:
    shadow: np.ndarray
    decay: float = 0.99

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("EMA decay must lie in (0, 1)")
        self.shadow = np.array(self.shadow, dtype=float)

    def update(self, weights):
        """``shadow <- decay * shadow + (1 - decay) * weights`` (in place)."""
        weights = np.asarray(weights, dtype=float)
        if weights.shape != self.shadow.shape:
            raise ValueError(f"EMA shape mismatch: {self.shadow.shape} vs {weights.shape}")
        self.shadow *= self.decay
        self.shadow += (1.0 - self.decay) * weights
        return self


def ema_update(ema, weights):
    """Functional form of :meth:`EmaWeights.update`."""
    return EmaWeights(ema.shadow.copy(), ema.decay).update(weights)


# -- training --------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 15000
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.99
    hidden_dim: int = 64
    n_hidden_layers: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _dsm_batch(rng, data, schedule, batch_size):
    x0 = data[rng.integers(0, data.shape[0], size=batch_size)]
    t = rng.uniform(0.0, 1.0, size=batch_size)
    eps = rng.standard_normal(x0.shape)
    alpha, sigma = schedule.marginal(t)
    return alpha[:, None] * x0 + sigma[:, None] * eps, t, eps


def train_dsm(dataset, schedule=None, config=None, log=None):
    """Denoising score matching with Adam and an EMA shadow.

    One "epoch" here is one optimizer step on a minibatch drawn with
    replacement.  ``log``, if given, receives ``(step, train_loss,
    heldout_loss)`` tuples every 100 steps and at the last step.

    Returns ``(net, ema)`` where ``net`` carries the raw weights.
    """
    schedule = schedule or NoiseSchedule()
    config = config or TrainConfig()
    data = np.asarray(dataset, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.size == 0:
        raise ValueError("cannot train on an empty dataset")
    if not np.all(np.isfinite(data)):
        raise ValueError("dataset contains non-finite samples")

    rng = np.random.default_rng(config.seed)
    net = MlpScoreNet(data.shape[1], schedule, config.hidden_dim, config.n_hidden_layers,
                      seed=int(rng.integers(2**31)))
    ema = EmaWeights(net.params.copy(), config.ema_decay)
    heldout = _dsm_batch(np.random.default_rng([config.seed, 1]), data, schedule, 1024)

    m = np.zeros_like(net.params)
    v = np.zeros_like(net.params)
    b1, b2 = config.beta1, config.beta2
    for step in range(1, config.epochs + 1):
        x_t, t, eps = _dsm_batch(rng, data, schedule, config.batch_size)
        loss, grad = net.loss_and_grad(x_t, t, eps)
        if not math.isfinite(loss):
            raise FloatingPointError(f"DSM loss became {loss} at step {step}")
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        mhat = m / (1 - b1**step)
        vhat = v / (1 - b2**step)
        net.params -= config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)
        ema.update(net.params)
        if log is not None and (step == 1 or step % 100 == 0 or step == config.epochs):
            log.append((step, loss, net.loss_and_grad(*heldout)[0]))
    return net, ema


def heldout_loss(net, dataset, seed=1, n=1024):
    data = np.asarray(dataset, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    x_t, t, eps = _dsm_batch(np.random.default_rng([seed, 1]), data, net.schedule, n)
    return net.loss_and_grad(x_t, t, eps)[0]


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, net, ema, config=None, extra=None):
    """Write a JSON text checkpoint; floats are stored with ``repr`` precision."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "schedule": net.schedule.to_dict(),
        "architecture": net.architecture(),
        "ema_decay": ema.decay,
        "weights": net.params.tolist(),
        "ema_weights": ema.shadow.tolist(),
    }
    if config is not None:
        doc["config"] = config
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1))
    return Path(path)


def load_checkpoint(path):
    """Return ``(net, ema)`` from a checkpoint written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found; run `mewguide train` first")
    doc = json.loads(path.read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a mewguide checkpoint")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    arch = doc["architecture"]
    schedule = NoiseSchedule(**doc["schedule"])
    net = MlpScoreNet(arch["input_dim"], schedule, arch["hidden_dim"], arch["n_hidden_layers"],
                      params=np.array(doc["weights"]))
    ema = EmaWeights(np.array(doc["ema_weights"]), doc["ema_decay"])
    return net, ema


def sampling_net(net, ema):
    """Network carrying the EMA weights, which is what samplers should use."""
    return net.with_params(ema.shadow)
