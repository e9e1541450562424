"""Command-line entry point.

Every subcommand resolves a config as defaults for ``--experiment``, then
the ``--config`` file, then ``--set key=value`` flags, and writes its
artifacts to ``{root}/{experiment}/``.  The root is ``--output``, else the
``MEWGUIDE_OUTPUT`` environment variable, else ``output_dir`` from the
config, else ``runs``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets as ds
from . import experiments as ex
from .config import EXPERIMENTS, apply_overrides, load_config
from .guidance import latent_kde_baseline, stochastic_reverse_baseline
from .maxent import MaxEntProblem, estimate_lambda, reweight
from .metrics import HistogramSpec, kl_hist, vendi, wasserstein_1d
from .samplers import TimeGrid, encode
from .score_model import save_checkpoint, train_dsm

log = logging.getLogger("mewguide")

METRIC_KEYS = ("kl", "wasserstein_1d", "vendi", "success_rate", "delta_w", "kl_bound",
               "w2_bound", "n_samples", "n_degenerate")


class CliError(Exception):
    """User-facing error; printed without a traceback."""


def _root(args, cfg):
    return Path(args.output or os.environ.get(ex.OUTPUT_ENV) or cfg.output_dir or "runs")


def _resolve(args, experiment=None):
    cfg = load_config(args.config, experiment or args.experiment)
    return apply_overrides(cfg, args.set)


def _checkpoint(args, cfg, root):
    if cfg.system.name == "gaussian_oracle":
        return None
    path = Path(args.checkpoint) if args.checkpoint else ex.model_path(cfg, root)
    if not path.exists():
        hint = f"--checkpoint {path}" if args.checkpoint else f"--output {root}"
        raise CliError(f"no model checkpoint at {path}. Train one first with "
                       f"`mewguide train --experiment {cfg.experiment} {hint}` "
                       "(using the same --config/--set options), or point --checkpoint "
                       "at an existing file.")
    return path


def _model(args, cfg, root):
    return ex.get_model(cfg, root, _checkpoint(args, cfg, root))


def _context(cfg, root, model, with_lambda=False):
    if cfg.system.name == "quadruple_well":
        return ex.QuadWellContext.build(cfg, root, model, with_lambda=with_lambda)
    if cfg.system.name == "three_moons":
        guides = None
        if cfg.guidance.guide_csv:
            guides = _guides(cfg.guidance.guide_csv)
        return ex.MoonContext.build(cfg, root, model, guides=guides)
    return None


def _guides(path):
    if not Path(path).exists():
        raise CliError(f"guide CSV {path} does not exist")
    return ex.read_points(path, dim=2)


def _outdir(root, cfg):
    return root / cfg.experiment


def _emit(path):
    print(path)


# -- subcommands -------------------------------------------------------------


def cmd_train(args):
    cfg = _resolve(args)
    root = _root(args, cfg)
    if cfg.system.name == "gaussian_oracle":
        raise CliError("the gaussian_oracle system uses an analytic score; nothing to train")
    path = Path(args.checkpoint) if args.checkpoint else ex.model_path(cfg, root)
    history = []
    net, ema = train_dsm(ex.training_data(cfg), ex.schedule_of(cfg), ex.train_config(cfg),
                         log=history)
    step, loss, held = history[-1]
    log.info("step %d: train loss %.4f, held-out loss %.4f", step, loss, held)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, net, ema, config={"system": cfg.to_dict()["system"],
                                            "model": cfg.to_dict()["model"]})
    _emit(path)
    return 0


def cmd_dataset(args):
    cfg = _resolve(args)
    root = _root(args, cfg)
    n = args.n or cfg.model.n_train
    seed = cfg.model.data_seed if args.seed is None else args.seed
    s = cfg.system
    if s.name == "quadruple_well":
        pot = ds.prinz_potential(s.beta)
        if not args.unbiased:
            pot = ds.biased_potential(pot, s.slope)
        x = ds.sample_boltzmann_1d(pot, n, seed)
        labels = np.zeros(n, dtype=int)
    elif s.name == "three_moons":
        x, labels = ds.three_moons(ex.moon_spec(cfg), n, seed)
    else:
        raise CliError("the gaussian_oracle system has no dataset")
    _emit(ex.write_samples(_outdir(root, cfg) / "dataset.csv", x, cfg, labels=labels))
    return 0


def sample_metrics(cfg, ctx, samples, batch=None):
    """Metrics report for one set of terminal samples; inapplicable entries are ``None``."""
    out = dict.fromkeys(METRIC_KEYS)
    out["n_samples"] = int(len(samples))
    out["n_degenerate"] = batch.n_degenerate if batch is not None else 0
    if len(samples) == 0:
        return out
    bw = cfg.metrics.vendi_bandwidth
    if isinstance(ctx, ex.MoonContext):
        out.update(ex.moon_quality(ctx, samples))
    else:
        if isinstance(ctx, ex.QuadWellContext):
            gt = ctx.gt_samples
            out["observable"] = float(np.mean(ctx.observable.value(samples)))
            out["observable_target"] = ctx.o_gt
        else:
            gt = np.random.default_rng(ex.GT_SEED).standard_normal((cfg.metrics.n_gt, 1))
        m = cfg.metrics
        out["kl"] = kl_hist(gt[:, 0], samples[:, 0], HistogramSpec(m.hist_low, m.hist_high,
                                                                   m.bins))
        out["wasserstein_1d"] = wasserstein_1d(gt[:, 0], samples[:, 0])
        out["vendi"] = vendi(samples, bw)
    if batch is not None:
        out.update(ex.work_metrics(batch, ex.schedule_of(cfg), cfg.metrics.lipschitz,
                                   cfg.guidance.squared_work))
    return out


def cmd_sample(args):
    cfg = _resolve(args)
    root = _root(args, cfg)
    model = _model(args, cfg, root)
    g = cfg.guidance
    need_lam = g.type == "observable" and "lambda" not in g.params
    ctx = _context(cfg, root, model, with_lambda=need_lam)
    seed = cfg.sampler.seed
    batch = None
    if g.type in ("lkde", "sr"):
        if not isinstance(ctx, ex.MoonContext):
            raise CliError(f"baseline {g.type!r} needs the three_moons system")
        sch = ex.schedule_of(cfg)
        if g.type == "lkde":
            samples = latent_kde_baseline(model, ctx.paths, g.lkde_noise, cfg.sampler.n, seed,
                                          sch, TimeGrid.reverse(cfg.sampler.n_steps))
        else:
            n_per = max(1, cfg.sampler.n // len(ctx.guides))
            samples = stochastic_reverse_baseline(model, ctx.paths, g.sr_t_mid, n_per, seed, sch,
                                                  steps_per_unit=cfg.sampler.n_steps)
    else:
        if g.type != "none" and ctx is None:
            raise CliError(f"guidance {g.type!r} is not available for {cfg.system.name}")
        guidance = ex.build_guidance(g.type, g.params, ctx) if g.type != "none" else None
        batch = ex.sample_run(cfg, model, guidance, cfg.sampler.n, seed)
        samples = batch.samples
    outdir = _outdir(root, cfg)
    _emit(ex.write_samples(outdir / "samples.csv", samples, cfg))
    _emit(ex.write_json(outdir / "metrics.json", sample_metrics(cfg, ctx, samples, batch), cfg))
    return 0


def cmd_encode(args):
    cfg = _resolve(args)
    root = _root(args, cfg)
    model = _model(args, cfg, root)
    if model is None:
        raise CliError("encoding needs a trained model")
    src = args.guides or cfg.guidance.guide_csv
    if src:
        guides = ex.read_points(src, dim=model.dim) if Path(src).exists() else None
        if guides is None:
            raise CliError(f"guide CSV {src} does not exist")
    elif cfg.system.name == "three_moons":
        guides = ex.MoonContext.build(cfg, root, model).guides
    else:
        raise CliError("pass --guides CSV (or set guidance.guide_csv) for this system")
    try:
        paths = encode(model, guides, ex.schedule_of(cfg), TimeGrid.forward(cfg.sampler.n_steps))
    except FloatingPointError as err:
        raise CliError(str(err)) from err
    _emit(ex.write_json(_outdir(root, cfg) / "latent_paths.json",
                        {"times": paths.times, "states": paths.states}, cfg))
    return 0


def cmd_maxent(args):
    cfg = _resolve(args)
    root = _root(args, cfg)
    if cfg.system.name != "quadruple_well":
        raise CliError("maxent reweighting is defined for the quadruple_well observable")
    if not Path(args.samples).exists():
        raise CliError(f"sample CSV {args.samples} does not exist")
    x = ex.read_points(args.samples, dim=1)
    s = cfg.system
    obs = ds.GmmObservable(scale=s.observable_scale)
    target = args.target if args.target is not None else \
        ds.prinz_potential(s.beta).expectation(obs.value)
    lam, info = estimate_lambda(MaxEntProblem(x, [obs], [target]), return_info=True)
    w = reweight(x, [obs], lam)
    achieved = float(np.sum(w * obs.value(x)))
    payload = {"lambda": lam, "target": [float(target)], "achieved": [achieved],
               "unweighted": [float(np.mean(obs.value(x)))], "iterations": info["iterations"],
               "n_samples": int(len(x))}
    _emit(ex.write_json(_outdir(root, cfg) / "maxent.json", payload, cfg))
    return 0


def cmd_optimize(args):
    cfg = _resolve(args)
    root = _root(args, cfg)
    model = _model(args, cfg, root)
    kind = cfg.guidance.type
    if kind not in ("observable", "path", "loss"):
        raise CliError(f"guidance type {kind!r} has no tunable schedule")
    ctx = _context(cfg, root, model, with_lambda=kind == "observable")
    if ctx is None:
        raise CliError(f"no optimisation target for system {cfg.system.name!r}")
    seed = cfg.optimizer.seeds[0] if args.seed is None else args.seed
    res, space = ex.optimise(ctx, kind, cfg.optimizer.gamma, seed)
    outdir = _outdir(root, cfg)
    _emit(ex.write_csv(outdir / "trace.csv", space.names + ["l1", "delta_w", "total", "failed"],
                       res.trace_rows(space.names), cfg))
    _emit(ex.write_json(outdir / "best_params.json",
                        {"best_params": res.best_params, "best_value": res.best_value,
                         "gamma": cfg.optimizer.gamma, "seed": seed}, cfg))
    return 0


def cmd_reproduce(args):
    cfg = _resolve(args, args.experiment_id)
    root = _root(args, cfg)
    report = ex.reproduce(args.experiment_id, cfg, root)
    print(f"{report.experiment}: " + ",".join(report.summary_header))
    for row in report.summary_rows:
        print("  " + ",".join(ex._fmt(v) for v in row))
    for name, gate in report.gates.items():
        print(f"[{'PASS' if gate['passed'] else 'FAIL'}] {name}: {gate['detail']}")
    print(root / report.experiment)
    return 0 if report.passed else 1


# -- parser ------------------------------------------------------------------


def _common(p, experiment=True):
    p.add_argument("--config", help="JSON config file layered over the experiment defaults")
    if experiment:
        p.add_argument("--experiment", choices=EXPERIMENTS, default=None,
                       help="experiment whose defaults to start from (default obs_toy)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, value parsed as JSON (repeatable)")
    p.add_argument("--output", help=f"output root (overrides ${ex.OUTPUT_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mewguide", description="Minimum-excess-work guidance of diffusion samplers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a score model and write a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: cached path under the root)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dataset", help="write the training dataset as CSV")
    _common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--unbiased", action="store_true",
                   help="quadruple well: sample the unbiased ground-truth density")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("sample", help="draw guided or unguided samples and report metrics")
    _common(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("encode", help="encode guiding samples into latent PF-ODE paths")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--guides", help="CSV of guiding samples")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("maxent", help="Lagrange multipliers for the observable target")
    _common(p)
    p.add_argument("--samples", required=True, help="CSV of reference samples")
    p.add_argument("--target", type=float, default=None,
                   help="target expectation (default: quadrature on the ground truth)")
    p.set_defaults(func=cmd_maxent)

    p = sub.add_parser("optimize", help="search schedule parameters for L1 + gamma * dW")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("reproduce", help="run a reproduction pipeline and check its gates")
    p.add_argument("experiment_id", choices=EXPERIMENTS)
    _common(p, experiment=False)
    p.set_defaults(func=cmd_reproduce, checkpoint=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, KeyError, ValueError) as err:
        print(f"mewguide {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
