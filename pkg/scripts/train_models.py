"""Train (or load from cache) the score models used by the pipelines."""

import argparse
import logging
import time

from mewguide.config import default_config
from mewguide.experiments import get_model, model_path, output_root


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--output", default=None, help="output root (default: $MEWGUIDE_OUTPUT or runs)")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    root = output_root(args.output)
    for name in ("obs_toy", "path_moons"):
        cfg = default_config(name)
        t0 = time.perf_counter()
        get_model(cfg, root)
        print(f"{cfg.system.name}: {model_path(cfg, root)} ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
