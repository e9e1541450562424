"""Experiment configuration as nested dataclasses with a JSON round trip.

Precedence is flags > file > defaults: :func:`load_config` reads a JSON
file over the defaults for the named experiment and :func:`apply_overrides`
then applies ``key.sub=value`` strings whose values are parsed as JSON.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass

FORMAT_VERSION = 1

EXPERIMENTS = ("obs_toy", "obs_toy_ablation", "path_moons", "path_moons_ablation",
               "baselines_lkde_sr", "bounds_check")

SYSTEMS = ("quadruple_well", "three_moons", "gaussian_oracle")


@dataclass
class SystemBlock:
    name: str = "quadruple_well"
    # quadruple well
    beta: float = 0.23
    slope: float = 4.0
    observable_scale: float = 21.3
    # three moons
    moon_noise: float = 0.04
    rare_fraction: float = 0.025
    band: float = 0.12


@dataclass
class ModelBlock:
    hidden_dim: int = 64
    n_hidden_layers: int = 3
    epochs: int = 15000
    batch_size: int = 256
    learning_rate: float = 1e-3
    ema_decay: float = 0.99
    seed: int = 0
    n_train: int = 20000
    data_seed: int = 1
    # noise schedule the model is trained and sampled with
    beta_min: float = 0.1
    beta_max: float = 20.0


@dataclass
class SamplerBlock:
    kind: str = "sde"
    n_steps: int = 500
    n: int = 1000
    seed: int = 0
    block_size: int = 512
    n_workers: int = 1


@dataclass
class GuidanceBlock:
    type: str = "none"
    params: dict = field(default_factory=dict)
    clip: float = 1.0
    jacobian_mode: str = "jvp"
    squared_work: bool = True
    guide_csv: str | None = None
    n_guides: int = 20
    lkde_noise: float = 0.05
    sr_t_mid: float = 0.5


@dataclass
class OptimizerBlock:
    space: dict = field(default_factory=lambda: {"eta_init": [1.0, 20.0], "kappa": [1.0, 20.0]})
    gamma: float = 1e-3
    budget: int = 64
    strategy: str = "gp-ei"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    search_n: int = 500
    search_steps: int = 250


@dataclass
class MetricsBlock:
    hist_low: float = -1.2
    hist_high: float = 1.2
    bins: int = 100
    vendi_bandwidth: float | None = None
    lipschitz: float = 0.0
    n_eval: int = 5000
    n_gt: int = 100000


@dataclass
class ExperimentConfig:
    experiment: str = "obs_toy"
    system: SystemBlock = field(default_factory=SystemBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    sampler: SamplerBlock = field(default_factory=SamplerBlock)
    guidance: GuidanceBlock = field(default_factory=GuidanceBlock)
    optimizer: OptimizerBlock = field(default_factory=OptimizerBlock)
    metrics: MetricsBlock = field(default_factory=MetricsBlock)
    output_dir: str | None = None
    format_version: int = FORMAT_VERSION

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def validate(self):
        if self.system.name not in SYSTEMS:
            raise ValueError(f"unknown system {self.system.name!r}")
        if self.sampler.kind not in ("sde", "ode"):
            raise ValueError(f"unknown sampler kind {self.sampler.kind!r}")
        if self.sampler.n_steps < 1 or self.sampler.n < 0:
            raise ValueError("sampler needs n_steps >= 1 and n >= 0")
        if self.guidance.type not in ("observable", "path", "loss", "lkde", "sr", "none"):
            raise ValueError(f"unknown guidance type {self.guidance.type!r}")
        if self.optimizer.gamma < 0 or self.optimizer.budget < 1:
            raise ValueError("optimizer needs gamma >= 0 and budget >= 1")
        if self.optimizer.strategy not in ("grid", "random", "gp-ei"):
            raise ValueError(f"unknown search strategy {self.optimizer.strategy!r}")
        for k, v in self.optimizer.space.items():
            if len(v) not in (2, 3) or not v[0] < v[1]:
                raise ValueError(f"search interval for {k} must be [lo, hi] or [lo, hi, scale]")
        if self.metrics.bins < 2 or not self.metrics.hist_low < self.metrics.hist_high:
            raise ValueError("histogram needs >= 2 bins over a non-empty range")
        if not 0 < self.model.beta_min < self.model.beta_max:
            raise ValueError("schedule needs 0 < beta_min < beta_max")
        if self.model.epochs < 1 or self.model.n_train < 1:
            raise ValueError("model needs epochs >= 1 and n_train >= 1")
        return self


def _from_dict(cls, d):
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise KeyError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = getattr(cls(), name) if name in known else None
        if is_dataclass(default) and isinstance(value, dict):
            kwargs[name] = _from_dict(type(default), value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _path_space():
    return {"strength_init": [0.1, 5.0, "log"], "strength_gain": [-20.0, 20.0],
            "strength_shift": [0.0, 1.0], "bw_init": [0.01, 1.0, "log"],
            "bw_gain": [-20.0, 20.0], "bw_shift": [0.0, 1.0]}


def default_config(experiment="obs_toy"):
    """Defaults for one of the reproduction pipelines."""
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    cfg = ExperimentConfig(experiment=experiment)
    if experiment in ("obs_toy", "obs_toy_ablation"):
        cfg.guidance.type = "observable"
        if experiment == "obs_toy_ablation":
            cfg.optimizer.seeds = list(range(10))
    elif experiment in ("path_moons", "path_moons_ablation", "baselines_lkde_sr"):
        cfg.system.name = "three_moons"
        cfg.model.n_train = 10000
        cfg.guidance.type = {"baselines_lkde_sr": "lkde"}.get(experiment, "path")
        cfg.optimizer.space = _path_space()
        cfg.optimizer.gamma = 0.03
        cfg.optimizer.budget = 50
        cfg.optimizer.seeds = [0]
        cfg.optimizer.search_n = 1000
        cfg.metrics.vendi_bandwidth = 0.1
        cfg.metrics.n_eval = 1000
        if experiment == "baselines_lkde_sr":
            cfg.optimizer.seeds = [0, 1, 2, 3, 4]
    else:
        cfg.system.name = "gaussian_oracle"
        cfg.guidance.type = "none"
    return cfg


def load_config(path=None, experiment=None):
    """Defaults for ``experiment`` updated by the JSON file at ``path``."""
    base = default_config(experiment or "obs_toy").to_dict()
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        if experiment is None and "experiment" in user:
            base = default_config(user["experiment"]).to_dict()
        _merge(base, user)
    return ExperimentConfig.from_dict(base).validate()


def _merge(base, update):
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict) and k not in ("params", "space"):
            _merge(base[k], v)
        else:
            base[k] = copy.deepcopy(v)


def apply_overrides(cfg, overrides):
    """Apply ``["sampler.n=200", "guidance.type=\\"path\\""]``-style overrides."""
    d = cfg.to_dict()
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise KeyError(f"unknown config key {key!r}")
            node = node[p]
        if parts[-1] not in node and not (len(parts) > 1 and parts[-2] in ("params", "space")):
            raise KeyError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return ExperimentConfig.from_dict(d).validate()
