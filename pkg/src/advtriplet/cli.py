"""Command-line entry point.

Verbs: train, eval, sweep-eps, compare, gen-data. Exit codes: 0 success,
2 usage/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config, parse_override
from .dataset import SyntheticSpec, generate_synthetic, save_features
from .embedder import load_checkpoint
from .errors import (ConfigError, DataError, DataParseError, EvaluationError, NumericError,
                     UsageError)
from .harness import (DEFAULT_EPSILON_GRID, STREAM_DATA, compare_losses, evaluate_model,
                      format_table, rows_to_csv, sweep_epsilon, train)
from .linalg import Rng

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = dict(parse_override(o) for o in args.override)
    return cfg.with_overrides(overrides) if overrides else cfg


def _seeds(args, cfg: ExperimentConfig) -> list[int]:
    return [args.seed] if args.seed is not None else list(cfg.train.seeds)


def _out(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out or cfg.output.dir)


def cmd_train(args) -> int:
    cfg = _build_config(args)
    seeds = _seeds(args, cfg)
    base = _out(args, cfg)
    for seed in seeds:
        out = base if len(seeds) == 1 else base / f"seed{seed}"
        res = train(cfg, seed, out)
        print(f"seed {seed}: {len(res.records)} epochs, final loss {res.records[-1]['loss']:.6f} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    params = load_checkpoint(args.checkpoint)
    seed = _seeds(args, cfg)[0]
    rep = evaluate_model(cfg, seed, params)
    out = _out(args, cfg)
    rep.write(out)
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _build_config(args)
    eps = [float(e) for e in args.epsilons.split(",")] if args.epsilons else list(DEFAULT_EPSILON_GRID)
    rows = sweep_epsilon(cfg, eps, _seeds(args, cfg))
    text = rows_to_csv(rows, ["epsilon", "seed", "rank1", "map"])
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _build_config(args)
    rows, medians = compare_losses(cfg, args.losses, _seeds(args, cfg))
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.csv").write_text(rows_to_csv(rows + medians, ["loss", "seed", "rank1", "map"]))
    sys.stdout.write(format_table(rows + medians))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _build_config(args)
    d = cfg.data
    seed = _seeds(args, cfg)[0]
    spec = SyntheticSpec(d.n_identities, d.samples_per_identity, d.dim, d.cluster_std,
                         d.center_scale, d.n_cameras, seed)
    ds = generate_synthetic(spec, Rng(seed, STREAM_DATA))
    path = Path(args.out or "features.txt")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_features(ds, path)
    print(f"wrote {len(ds)} samples of dim {ds.dim} to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="run a single seed (overrides train.seeds)")
    common.add_argument("--out", help="output directory (file path for gen-data)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="advtriplet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("train", parents=[common], help="train an embedder").set_defaults(fn=cmd_train)
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.set_defaults(fn=cmd_eval)
    sw = sub.add_parser("sweep-eps", parents=[common], help="train+eval ATE over an epsilon grid")
    sw.add_argument("--epsilons", help="comma-separated list (default: the 7-value grid)")
    sw.set_defaults(fn=cmd_sweep)
    cp = sub.add_parser("compare", parents=[common], help="compare losses under identical seeds")
    cp.add_argument("losses", nargs="+", help="loss specs, e.g. softplus ate:epsilon_a=0.01")
    cp.set_defaults(fn=cmd_compare)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic feature file").set_defaults(fn=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, DataParseError, DataError, EvaluationError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
