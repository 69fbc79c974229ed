"""Command-line driver.

    famle collect   --config cfg.yaml --out DIR
    famle metatrain --config cfg.yaml --out DIR --method famle
    famle run       --config cfg.yaml --out DIR --seed 3 --jobs 4
    famle sinefig   --config cfg.yaml --out DIR

``collect`` writes ``DIR/corpus``; ``metatrain`` reads it and writes
``DIR/checkpoint_<method>.json`` and ``DIR/training_log_<method>.csv``;
``run`` reads both and writes ``DIR/run``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import experiments, io
from .errors import ConfigurationError, DivergedUpdateError, InputError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("famle")


def _config(args) -> config_mod.ExperimentConfig:
    return config_mod.load(args.config) if args.config else config_mod.ExperimentConfig()


def _seed(args, cfg) -> int:
    return cfg.seed if args.seed is None else args.seed


def cmd_collect(args) -> int:
    cfg = _config(args)
    corpus = experiments.build_corpus(cfg, _seed(args, cfg))
    experiments.write_corpus(corpus, Path(args.out) / "corpus")
    log.info("wrote %d situation datasets", len(corpus))
    return EXIT_OK


def cmd_metatrain(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    corpus = experiments.read_corpus(out / "corpus")
    result = experiments.metatrain(cfg, corpus, args.method, _seed(args, cfg))
    io.save_checkpoint(result, out / f"checkpoint_{args.method}.json", args.method)
    io.save_training_log(result.training_log, out / f"training_log_{args.method}.csv")
    log.info("%s: %d outer iterations", args.method, len(result.training_log))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    corpus = experiments.read_corpus(out / "corpus")
    held = experiments.held_out_situation(cfg, corpus.situation_specs, _seed(args, cfg))
    results = {m: io.load_checkpoint(out / f"checkpoint_{m}.json") for m in cfg.run.methods}
    report = experiments.run_comparison(cfg, results, held, jobs=args.jobs)
    experiments.write_report(report, cfg, out / "run")
    for m in report.methods:
        log.info("%s: median cumulative reward %.3f", m, report.final_median(m))
    return EXIT_OK


def cmd_sinefig(args) -> int:
    cfg = _config(args)
    from joblib import Parallel, delayed
    seeds = cfg.sine.seeds if args.seed is None else (args.seed,)
    figs = Parallel(n_jobs=args.jobs)(delayed(experiments.sine_figure)(cfg, s) for s in seeds)
    experiments.write_sine_figures(figs, Path(args.out) / "sinefig")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="famle", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [("collect", cmd_collect), ("metatrain", cmd_metatrain), ("run", cmd_run),
                     ("sinefig", cmd_sinefig)]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config (defaults when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--jobs", type=int, default=1, help="max parallel jobs")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "metatrain":
            p.add_argument("--method", choices=["famle", "maml", "reptile", "scratch"], default="famle")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedUpdateError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, InputError, KeyError, ValueError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
