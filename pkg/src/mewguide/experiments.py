"""Reproduction pipelines for the synthetic experiments.

Every pipeline writes ``{root}/{experiment_id}/{artifact}.{csv|json}``.
Artifacts embed the resolved config and a format version and contain no
timestamps, so reruns with the same config are byte-identical.  Trained
models are cached under ``{root}/models`` keyed by a hash of the system and
model blocks; training is deterministic, so the cache only saves time.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from . import datasets as ds
from .config import FORMAT_VERSION, ExperimentConfig, default_config
from .diffusion import NoiseSchedule
from .excess_work import accumulate_work, gaussian_shift_oracle, kl_bound, w2_bound
from .guidance import (ConstantGuidance, ExpSchedule, LossGuidance, ObservableGuidance,
                       PathGuidance, SigmoidSchedule, latent_kde_baseline,
                       stochastic_reverse_baseline)
from .maxent import MaxEntProblem, estimate_lambda
from .metrics import HistogramSpec, kl_hist, success_rate, vendi, wasserstein_1d
from .optimizer import MewObjective, SearchSpace, observable_l1, path_l1, search
from .samplers import TimeGrid, encode, pf_ode_sample, reverse_sde_sample
from .score_model import (AnalyticGaussianScore, TrainConfig, load_checkpoint,
                          sampling_net, save_checkpoint, train_dsm)

log = logging.getLogger(__name__)

OUTPUT_ENV = "MEWGUIDE_OUTPUT"

# offsets separating the seed streams of search, final evaluation and data
EVAL_SEED = 10_000
GT_SEED = 12_345
LAMBDA_SEED = 777


def output_root(override=None):
    return Path(override or os.environ.get(OUTPUT_ENV, "runs"))


# -- artifact I/O ------------------------------------------------------------


def _header(cfg):
    return {"format_version": FORMAT_VERSION, "config": cfg.to_dict() if cfg else None}


def write_json(path, payload, cfg=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(_header(cfg), **payload)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj)}")


def write_csv(path, header, rows, cfg=None):
    """CSV whose first line is ``# {json header}`` with the config and format version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write("# " + json.dumps(_header(cfg), sort_keys=True) + "\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    path.write_text(buf.getvalue())
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_csv(path):
    """Return ``(header, float array)``, skipping ``#`` comment lines."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path} holds no CSV header")
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    return header, data.reshape(-1, len(header))


def write_samples(path, samples, cfg=None, labels=None):
    samples = np.asarray(samples, dtype=float)
    names = ["x", "y"][: samples.shape[1]] if samples.shape[1] <= 2 else \
        [f"x{i}" for i in range(samples.shape[1])]
    rows = samples.tolist() if labels is None else \
        [r + [int(lab)] for r, lab in zip(samples.tolist(), labels)]
    return write_csv(path, names + (["label"] if labels is not None else []), rows, cfg)


def read_points(path, dim=None):
    header, data = read_csv(path)
    cols = [i for i, h in enumerate(header) if h != "label"]
    pts = data[:, cols]
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"{path} has {pts.shape[1]} coordinates, expected {dim}")
    return pts


# -- systems -----------------------------------------------------------------


def _hash(d):
    return hashlib.sha1(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def schedule_of(cfg):
    return NoiseSchedule(cfg.model.beta_min, cfg.model.beta_max)


def train_config(cfg):
    m = cfg.model
    return TrainConfig(epochs=m.epochs, batch_size=m.batch_size, learning_rate=m.learning_rate,
                       ema_decay=m.ema_decay, hidden_dim=m.hidden_dim,
                       n_hidden_layers=m.n_hidden_layers, seed=m.seed)


def training_data(cfg):
    s = cfg.system
    if s.name == "quadruple_well":
        gt = ds.prinz_potential(s.beta)
        return ds.sample_boltzmann_1d(ds.biased_potential(gt, s.slope), cfg.model.n_train,
                                      cfg.model.data_seed)
    if s.name == "three_moons":
        return ds.three_moons(moon_spec(cfg), cfg.model.n_train, cfg.model.data_seed)[0]
    raise ValueError(f"system {s.name!r} has no training data")


def moon_spec(cfg):
    s = cfg.system
    return ds.MoonSpec(noise=s.moon_noise, rare_fraction=s.rare_fraction, band=s.band)


def model_path(cfg, root=None):
    key = _hash({"system": asdict(cfg.system), "model": asdict(cfg.model)})
    return output_root(root) / "models" / f"{cfg.system.name}-{key}.json"


def get_model(cfg, root=None, path=None):
    """Sampling network (EMA weights) for the configured system, training it if needed."""
    if cfg.system.name == "gaussian_oracle":
        return AnalyticGaussianScore(dim=1, schedule=schedule_of(cfg))
    path = Path(path) if path else model_path(cfg, root)
    if not path.exists():
        log.info("training %s model -> %s", cfg.system.name, path)
        net, ema = train_dsm(training_data(cfg), schedule_of(cfg), train_config(cfg))
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, net, ema, config={"system": asdict(cfg.system),
                                                "model": asdict(cfg.model)})
    return sampling_net(*load_checkpoint(path))


@dataclass
class QuadWellContext:
    cfg: ExperimentConfig
    model: object
    gt: ds.Potential1D
    ref: ds.Potential1D
    observable: ds.GmmObservable
    o_gt: float
    gt_samples: np.ndarray
    lam: np.ndarray

    @classmethod
    def build(cls, cfg, root=None, model=None, with_lambda=True):
        s = cfg.system
        gt = ds.prinz_potential(s.beta)
        ref = ds.biased_potential(gt, s.slope)
        obs = ds.GmmObservable(scale=s.observable_scale)
        model = model or get_model(cfg, root)
        o_gt = gt.expectation(obs.value)
        lam = None
        if with_lambda:
            ref_samples = reverse_sde_sample(model, schedule_of(cfg), None,
                                             TimeGrid.reverse(cfg.sampler.n_steps), n=20000,
                                             seed=LAMBDA_SEED).samples
            lam = estimate_lambda(MaxEntProblem(ref_samples, [obs], [o_gt]))
        return cls(cfg, model, gt, ref, obs, o_gt,
                   ds.sample_boltzmann_1d(gt, cfg.metrics.n_gt, GT_SEED), lam)

    @property
    def hist(self):
        m = self.cfg.metrics
        return HistogramSpec(m.hist_low, m.hist_high, m.bins)


@dataclass
class MoonContext:
    cfg: ExperimentConfig
    model: object
    spec: ds.MoonSpec
    guides: np.ndarray
    heldout: np.ndarray
    paths: object
    base_rate: float

    @classmethod
    def build(cls, cfg, root=None, model=None, guides=None):
        spec = moon_spec(cfg)
        model = model or get_model(cfg, root)
        pts, labels = ds.three_moons(spec, 200_000, cfg.model.data_seed + 1)
        rare = pts[labels == spec.rare_arc]
        if guides is None:
            guides = rare[: cfg.guidance.n_guides]
        heldout = rare[cfg.guidance.n_guides:]
        sch = schedule_of(cfg)
        paths = encode(model, guides, sch, TimeGrid.forward(cfg.sampler.n_steps))
        unguided = reverse_sde_sample(model, sch, None, TimeGrid.reverse(cfg.sampler.n_steps),
                                      n=4000, seed=EVAL_SEED - 1).samples
        return cls(cfg, model, spec, guides, heldout, paths,
                   success_rate(unguided, ds.rare_region(spec)))

    @property
    def region(self):
        return ds.rare_region(self.spec)


# -- guidance construction ---------------------------------------------------


def _sigmoids(p):
    return (SigmoidSchedule(p["strength_init"], p["strength_gain"], p["strength_shift"]),
            SigmoidSchedule(p["bw_init"], p["bw_gain"], p["bw_shift"]))


def build_guidance(kind, params, ctx):
    """Guidance field of ``kind`` with schedule ``params`` on a built context."""
    g = ctx.cfg.guidance
    if kind == "none":
        return None
    if kind == "observable":
        lam = params.get("lambda", ctx.lam)
        if lam is None:
            raise ValueError("observable guidance needs a Lagrange multiplier: set "
                             "guidance.params.lambda or build the context with with_lambda")
        return ObservableGuidance([ctx.observable], lam,
                                  ExpSchedule(params["eta_init"], params["kappa"]),
                                  jacobian_mode=g.jacobian_mode)
    if kind == "path":
        strength, bw = _sigmoids(params)
        return PathGuidance(ctx.paths, strength, bw)
    if kind == "loss":
        strength, bw = _sigmoids(params)
        return LossGuidance(ctx.guides, strength, bw, clip=g.clip,
                            jacobian_mode=g.jacobian_mode)
    raise ValueError(f"guidance type {kind!r} is not a field")


def sample_run(cfg, model, guidance, n, seed, n_steps=None):
    run = reverse_sde_sample if cfg.sampler.kind == "sde" else pf_ode_sample
    return run(model, schedule_of(cfg), guidance, TimeGrid.reverse(n_steps or cfg.sampler.n_steps), n=n,
               seed=seed, block_size=cfg.sampler.block_size, n_workers=cfg.sampler.n_workers)


def objective_for(ctx, kind, gamma, seed):
    cfg = ctx.cfg
    if kind == "observable":
        l1 = lambda x: observable_l1(x, [ctx.observable], [ctx.o_gt])  # noqa: E731
    else:
        l1 = lambda x: path_l1(x, ctx.region)  # noqa: E731
    return MewObjective(lambda p: build_guidance(kind, p, ctx), ctx.model, l1, gamma=gamma,
                        schedule=schedule_of(cfg), kind=cfg.sampler.kind,
                        n=cfg.optimizer.search_n,
                        n_steps=cfg.optimizer.search_steps, seed=seed,
                        squared=cfg.guidance.squared_work, block_size=cfg.sampler.block_size,
                        n_workers=cfg.sampler.n_workers)


def optimise(ctx, kind, gamma, seed, space=None, budget=None, strategy=None):
    opt = ctx.cfg.optimizer
    space = SearchSpace({k: tuple(v) for k, v in (space or opt.space).items()})
    return search(objective_for(ctx, kind, gamma, seed), space, budget or opt.budget,
                  strategy or opt.strategy, seed=seed), space


# -- evaluation --------------------------------------------------------------


def work_metrics(batch, schedule=None, lipschitz=0.0, squared=True):
    return {"delta_w": accumulate_work(batch, schedule, squared),
            "kl_bound": kl_bound(batch, schedule),
            "w2_bound": w2_bound(batch, schedule, lipschitz=lipschitz)}


def quadwell_metrics(ctx, batch):
    x = batch.samples
    out = {"observable": float(np.mean(ctx.observable.value(x))),
           "kl": kl_hist(ctx.gt_samples, x, ctx.hist),
           "wasserstein_1d": wasserstein_1d(ctx.gt_samples, x),
           "n_samples": len(batch), "n_degenerate": batch.n_degenerate}
    out.update(work_metrics(batch, schedule_of(ctx.cfg), ctx.cfg.metrics.lipschitz,
                            ctx.cfg.guidance.squared_work))
    return out


def moon_quality(ctx, x):
    """Success rate, Vendi and W1 of the on-target samples against held-out rare-arc points."""
    hit = ctx.region(x)
    on = x[hit]
    bw = ctx.cfg.metrics.vendi_bandwidth
    res = {"success_rate": float(np.mean(hit)) if len(x) else 0.0,
           "vendi": vendi(on, bw) if len(on) else 0.0,
           "wasserstein_1d": float(np.mean([wasserstein_1d(on[:, j], ctx.heldout[:, j])
                                            for j in range(2)])) if len(on) else float("nan")}
    return res


def moon_metrics(ctx, batch):
    out = moon_quality(ctx, batch.samples)
    out.update({"n_samples": len(batch), "n_degenerate": batch.n_degenerate})
    out.update(work_metrics(batch, schedule_of(ctx.cfg), ctx.cfg.metrics.lipschitz,
                            ctx.cfg.guidance.squared_work))
    return out


# -- pipelines ---------------------------------------------------------------


@dataclass
class Report:
    experiment: str
    summary_header: list
    summary_rows: list
    gates: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(g["passed"] for g in self.gates.values())


def _gate(passed, detail):
    return {"passed": bool(passed), "detail": detail}


_RUN_CACHE = {}


def _cached_run(ctx, kind, gamma, seed):
    """One optimisation plus final evaluation; memoised within the process."""
    d = ctx.cfg.to_dict()
    # runs are shared between pipelines that differ only in name and seed list
    d.pop("experiment"), d["optimizer"].pop("seeds"), d.pop("output_dir")
    key = (json.dumps(d, sort_keys=True), kind, float(gamma), int(seed))
    if key in _RUN_CACHE:
        return _RUN_CACHE[key]
    res, space = optimise(ctx, kind, gamma, seed)
    guidance = build_guidance(kind, res.best_params, ctx)
    batch = sample_run(ctx.cfg, ctx.model, guidance, ctx.cfg.metrics.n_eval, EVAL_SEED + seed)
    metrics = quadwell_metrics(ctx, batch) if kind == "observable" else moon_metrics(ctx, batch)
    out = {"seed": seed, "gamma": gamma, "best_params": res.best_params,
           "best_value": res.best_value, "metrics": metrics,
           "trace": res.trace_rows(space.names), "space": space.names}
    _RUN_CACHE[key] = out
    return out


def _write_trace(outdir, name, run, cfg):
    header = run["space"] + ["l1", "delta_w", "total", "failed"]
    write_csv(outdir / f"{name}.csv", header, run["trace"], cfg)


def run_obs_toy(cfg, root=None, ctx=None):
    ctx = ctx or QuadWellContext.build(cfg, root)
    outdir = output_root(root) / cfg.experiment
    refs, runs = [], []
    for seed in cfg.optimizer.seeds:
        ref = sample_run(cfg, ctx.model, None, cfg.metrics.n_eval, EVAL_SEED + seed)
        refs.append(quadwell_metrics(ctx, ref))
        runs.append(_cached_run(ctx, "observable", cfg.optimizer.gamma, seed))
        _write_trace(outdir, f"trace_seed{seed}", runs[-1], cfg)
    med = lambda rows, k: float(np.median([r[k] for r in rows]))  # noqa: E731
    guided = [r["metrics"] for r in runs]
    e_ref, e_g = med(refs, "observable"), med(guided, "observable")
    kl_ref, kl_g = med(refs, "kl"), med(guided, "kl")
    rows = [["reference", e_ref, kl_ref], ["guided", e_g, kl_g], ["ground_truth", ctx.o_gt, 0.0]]
    err_ref = float(np.median([abs(r["observable"] - ctx.o_gt) for r in refs]))
    err_g = float(np.median([abs(r["observable"] - ctx.o_gt) for r in guided]))
    gates = {
        "kl_reduction": _gate(kl_g <= 0.25 * kl_ref,
                              f"median KL guided {kl_g:.4f} vs 0.25 x reference {kl_ref:.4f}"),
        "observable_error": _gate(err_g <= 0.2 * err_ref,
                                  f"median |E[O]-o_GT| guided {err_g:.4f} vs 0.2 x "
                                  f"reference {err_ref:.4f}"),
    }
    details = {"o_gt": ctx.o_gt, "lambda": ctx.lam, "reference": refs,
               "runs": [{k: v for k, v in r.items() if k != "trace"} for r in runs]}
    return _finish(cfg, outdir, Report(cfg.experiment, ["model", "E[O]", "KL"], rows, gates,
                                       details))


def run_obs_toy_ablation(cfg, root=None, ctx=None):
    ctx = ctx or QuadWellContext.build(cfg, root)
    outdir = output_root(root) / cfg.experiment
    gammas = [cfg.optimizer.gamma, 0.0]
    per = {g: [] for g in gammas}
    for g in gammas:
        for seed in cfg.optimizer.seeds:
            run = _cached_run(ctx, "observable", g, seed)
            per[g].append(run)
            _write_trace(outdir, f"trace_gamma{g:g}_seed{seed}", run, cfg)
    rows, stats = [], {}
    for g in gammas:
        kls = np.array([r["metrics"]["kl"] for r in per[g]])
        errs = np.array([abs(r["metrics"]["observable"] - ctx.o_gt) for r in per[g]])
        stats[g] = (float(np.median(kls)), float(np.median(errs)))
        rows.append([g, float(np.median(kls)), float(np.mean(kls)), float(np.std(kls)),
                     float(np.median(errs)), len(kls)])
    (kl_mew, err_mew), (kl_0, err_0) = stats[gammas[0]], stats[0.0]
    tol = 0.1 * abs(ctx.o_gt)
    gates = {
        "matched_observable_error": _gate(
            err_mew <= tol and err_0 <= tol,
            f"median |E[O]-o_GT|: gamma={gammas[0]:g} {err_mew:.4f}, gamma=0 {err_0:.4f}, "
            f"tolerance {tol:.4f}"),
        "mew_kl_reduction": _gate(kl_mew <= kl_0 / 3.0,
                                  f"median KL gamma={gammas[0]:g} {kl_mew:.4f} vs gamma=0 "
                                  f"{kl_0:.4f} / 3"),
    }
    details = {"o_gt": ctx.o_gt, "lambda": ctx.lam,
               "runs": {f"{g:g}": [{k: v for k, v in r.items() if k != "trace"} for r in per[g]]
                        for g in gammas}}
    header = ["gamma", "kl_median", "kl_mean", "kl_std", "obs_error_median", "n_seeds"]
    return _finish(cfg, outdir, Report(cfg.experiment, header, rows, gates, details))


def run_path_moons(cfg, root=None, ctx=None):
    ctx = ctx or MoonContext.build(cfg, root)
    outdir = output_root(root) / cfg.experiment
    seed = cfg.optimizer.seeds[0]
    unguided = sample_run(cfg, ctx.model, None, cfg.metrics.n_eval, EVAL_SEED + seed)
    rows = [["unguided", 0.0] + _moon_row(moon_metrics(ctx, unguided))]
    run = _cached_run(ctx, "path", cfg.optimizer.gamma, seed)
    _write_trace(outdir, "trace_path", run, cfg)
    rows.append(["path", cfg.optimizer.gamma] + _moon_row(run["metrics"]))
    write_samples(outdir / "samples_path.csv",
                  sample_run(cfg, ctx.model, build_guidance("path", run["best_params"], ctx),
                             cfg.metrics.n_eval, EVAL_SEED + seed).samples, cfg)
    succ = run["metrics"]["success_rate"]
    gates = {"success_gain": _gate(succ >= 10 * ctx.base_rate,
                                   f"guided success {succ:.3f} vs 10 x unguided "
                                   f"{ctx.base_rate:.4f}")}
    details = {"base_rate_n4000": ctx.base_rate,
               "path": {k: v for k, v in run.items() if k != "trace"}}
    return _finish(cfg, outdir, Report(cfg.experiment, _MOON_HEADER, rows, gates, details))


_MOON_HEADER = ["model", "gamma", "success_rate", "vendi", "wasserstein_1d", "delta_w",
                "n_degenerate"]


def _moon_row(m):
    return [m["success_rate"], m["vendi"], m["wasserstein_1d"], m["delta_w"], m["n_degenerate"]]


def run_path_moons_ablation(cfg, root=None, ctx=None):
    ctx = ctx or MoonContext.build(cfg, root)
    outdir = output_root(root) / cfg.experiment
    seed = cfg.optimizer.seeds[0]
    mew = _cached_run(ctx, "path", cfg.optimizer.gamma, seed)
    free = _cached_run(ctx, "path", 0.0, seed)
    _write_trace(outdir, f"trace_gamma{cfg.optimizer.gamma:g}", mew, cfg)
    _write_trace(outdir, "trace_gamma0", free, cfg)
    a, b = mew["metrics"], free["metrics"]
    rows = [["path", cfg.optimizer.gamma] + _moon_row(a), ["path", 0.0] + _moon_row(b)]
    gates = {
        "success_gain": _gate(a["success_rate"] >= 10 * ctx.base_rate,
                              f"MEW success {a['success_rate']:.3f} vs 10 x unguided "
                              f"{ctx.base_rate:.4f}"),
        "both_succeed": _gate(a["success_rate"] >= 0.25 and b["success_rate"] >= 0.25,
                              f"success {a['success_rate']:.3f} (MEW), "
                              f"{b['success_rate']:.3f} (gamma=0), floor 0.25"),
        "vendi_higher": _gate(a["vendi"] > b["vendi"],
                              f"Vendi {a['vendi']:.3f} (MEW) vs {b['vendi']:.3f} (gamma=0)"),
        "wasserstein_ok": _gate(a["wasserstein_1d"] <= 1.5 * b["wasserstein_1d"],
                                f"W1 {a['wasserstein_1d']:.4f} (MEW) vs 1.5 x "
                                f"{b['wasserstein_1d']:.4f} (gamma=0)"),
    }
    details = {"base_rate_n4000": ctx.base_rate,
               "mew": {k: v for k, v in mew.items() if k != "trace"},
               "gamma0": {k: v for k, v in free.items() if k != "trace"}}
    return _finish(cfg, outdir, Report(cfg.experiment, _MOON_HEADER, rows, gates, details))


LKDE_NOISE = (0.01, 0.05, 0.1)
SR_TIMES = (0.1, 0.5, 0.9)


def baseline_sweeps(ctx, seeds, n=1000):
    """Per-seed success and Vendi for the latent-KDE and restart baselines."""
    bw = ctx.cfg.metrics.vendi_bandwidth
    n_per = max(1, n // len(ctx.guides))
    grid = TimeGrid.reverse(ctx.cfg.sampler.n_steps)
    res = {"lkde": [], "sr": []}
    for seed in seeds:
        row = []
        for noise in LKDE_NOISE:
            x = latent_kde_baseline(ctx.model, ctx.paths, noise, n, seed=seed,
                                    schedule=schedule_of(ctx.cfg), grid=grid)
            row.append((success_rate(x, ctx.region), vendi(x, bw)))
        res["lkde"].append(row)
        row = []
        for t_mid in SR_TIMES:
            x = stochastic_reverse_baseline(ctx.model, ctx.paths, t_mid, n_per, seed=seed,
                                            schedule=schedule_of(ctx.cfg),
                                            steps_per_unit=ctx.cfg.sampler.n_steps)
            row.append((success_rate(x, ctx.region), vendi(x, bw)))
        res["sr"].append(row)
    return {k: np.array(v) for k, v in res.items()}


def _monotone(values, increasing):
    d = np.diff(values)
    return bool(np.all(d >= 0)) if increasing else bool(np.all(d <= 0))


def run_baselines(cfg, root=None, ctx=None):
    ctx = ctx or MoonContext.build(cfg, root)
    outdir = output_root(root) / cfg.experiment
    res = baseline_sweeps(ctx, cfg.optimizer.seeds, cfg.metrics.n_eval)
    rows, gates = [], {}
    for name, xs in (("lkde", LKDE_NOISE), ("sr", SR_TIMES)):
        med = np.median(res[name], axis=0)
        for j, x in enumerate(xs):
            rows.append([name, x, med[j, 0], med[j, 1]])
        gates[f"{name}_success_nonincreasing"] = _gate(
            _monotone(med[:, 0], False), f"median success {np.round(med[:, 0], 4).tolist()}")
        gates[f"{name}_vendi_nondecreasing"] = _gate(
            _monotone(med[:, 1], True), f"median Vendi {np.round(med[:, 1], 3).tolist()}")
    details = {k: v.tolist() for k, v in res.items()}
    return _finish(cfg, outdir, Report(cfg.experiment,
                                       ["baseline", "sweep_value", "success_rate", "vendi"],
                                       rows, gates, details))


def bounds_table(strengths, n=2000, n_steps=500, lipschitz=0.0, seed=0):
    """Bound estimates against the Gaussian moment oracle for constant fields ``c``."""
    model = AnalyticGaussianScore(dim=1)
    rows = []
    for c in strengths:
        g = ConstantGuidance(c)
        sde = reverse_sde_sample(model, None, g, TimeGrid.reverse(n_steps), n=n, seed=seed)
        ode = pf_ode_sample(model, None, g, TimeGrid.reverse(n_steps), n=n, seed=seed)
        _, kl_sde, w2_sde = gaussian_shift_oracle(c, kind="sde")
        _, _, w2_ode = gaussian_shift_oracle(c, kind="ode")
        rows.append([float(c), kl_bound(sde), kl_sde, w2_bound(sde, lipschitz=lipschitz), w2_sde,
                     w2_bound(ode, lipschitz=lipschitz), w2_ode])
    return rows


def constant_work_table(c=0.7, dims=(1, 2), steps=(500, 1000)):
    """Relative error of the work and KL-bound estimators against quadrature."""
    sch = NoiseSchedule()
    work_exact = 0.25 * quad(lambda t: float(sch.beta(t)) ** 2, 0.0, 1.0)[0]
    kl_exact = 0.5 * quad(lambda t: float(sch.beta(t)), 0.0, 1.0)[0]
    rows = []
    for d in dims:
        model = AnalyticGaussianScore(dim=d)
        for k in steps:
            b = reverse_sde_sample(model, None, ConstantGuidance(np.full(d, c)),
                                   TimeGrid.reverse(k), n=64, seed=0)
            dw, kb = accumulate_work(b), kl_bound(b)
            rows.append([d, k, dw, c * c * d * work_exact, kb, c * c * d * kl_exact])
    return rows


def run_bounds_check(cfg, root=None, ctx=None):
    outdir = output_root(root) / cfg.experiment
    strengths = np.linspace(0.1, 1.0, 10)
    rows = bounds_table(strengths, lipschitz=cfg.metrics.lipschitz, seed=cfg.sampler.seed)
    viol = sum(int(r[1] < r[2]) + int(r[3] < r[4]) + int(r[5] < r[6]) for r in rows)
    work = constant_work_table()
    rel = [(abs(r[2] - r[3]) / r[3], abs(r[4] - r[5]) / r[5], r[1]) for r in work]
    tol = {500: 0.02, 1000: 0.01}
    work_ok = all(a < tol[k] and b < tol[k] for a, b, k in rel)
    gates = {
        "bounds_dominate": _gate(viol == 0, f"{viol} violations over {len(rows)} strengths"),
        "work_quadrature": _gate(work_ok, "max relative error "
                                 f"{max(max(a, b) for a, b, _ in rel):.2e}"),
    }
    write_csv(outdir / "work_check.csv",
              ["dim", "n_steps", "delta_w", "delta_w_exact", "kl_bound", "kl_bound_exact"],
              work, cfg)
    header = ["c", "kl_bound_sde", "kl_sde", "w2_bound_sde", "w2sq_sde", "w2_bound_ode",
              "w2sq_ode"]
    return _finish(cfg, outdir, Report(cfg.experiment, header, rows, gates, {}))


PIPELINES = {
    "obs_toy": run_obs_toy,
    "obs_toy_ablation": run_obs_toy_ablation,
    "path_moons": run_path_moons,
    "path_moons_ablation": run_path_moons_ablation,
    "baselines_lkde_sr": run_baselines,
    "bounds_check": run_bounds_check,
}


def _finish(cfg, outdir, report):
    write_csv(outdir / "summary.csv", report.summary_header, report.summary_rows, cfg)
    write_json(outdir / "report.json", {"experiment": report.experiment, "gates": report.gates,
                                        "passed": report.passed, "details": report.details}, cfg)
    return report


def reproduce(experiment, cfg=None, root=None):
    """Run one pipeline and write its artifacts; returns the :class:`Report`."""
    cfg = cfg or default_config(experiment)
    if cfg.experiment != experiment:
        raise ValueError(f"config is for {cfg.experiment!r}, not {experiment!r}")
    return PIPELINES[experiment](cfg, root or cfg.output_dir)
