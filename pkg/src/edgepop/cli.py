"""Command-line entry point: ``edgepop {train,eval,sweep,verify}``.

Exit codes: 0 success, 1 assertion or verification failure, 2 config or
format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from edgepop.errors import ConfigError, DataError, FormatError, NonFiniteError, ParameterError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _load_cfg(args, **extra):
    from edgepop.config import default_blobs_config, load_config

    overrides = dict(extra)
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["run.workers"] = args.workers
    if getattr(args, "epochs", None) is not None:
        overrides["run.epochs"] = args.epochs
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.config:
        return load_config(args.config, overrides)
    cfg = default_blobs_config()
    return cfg.replace(**overrides) if overrides else cfg


def cmd_train(args) -> int:
    from edgepop.train import train

    cfg = _load_cfg(args)
    out = Path(args.out or cfg.run.out)
    start = time.perf_counter()
    result = train(cfg, out)
    last = result.last
    print(
        f"trained {cfg.run.algorithm} {cfg.model.arch} k={cfg.model.k:g} for {len(result.metrics.rows)} epochs "
        f"in {time.perf_counter() - start:.1f}s: test acc {last['test_acc']:.4f}, test loss {last['test_loss']:.4f}"
    )
    print(f"metrics: {out / 'metrics.csv'}  checkpoint: {out / 'final.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from edgepop import checkpoint
    from edgepop.config import from_mapping
    from edgepop.layers import subnet_size
    from edgepop.train import evaluate, load_datasets, restore_model

    arrays, metadata = checkpoint.load(args.checkpoint)
    cfg = from_mapping(metadata.get("config", {}))
    if args.data_dir:
        cfg = cfg.replace(**{"data.data_dir": args.data_dir})
    _, test = load_datasets(cfg)
    cfg, model = restore_model(arrays, {**metadata, "config": cfg.to_dict()}, test.input_shape)
    loss, acc = evaluate(model, test)
    print(f"accuracy {acc:.4f}")
    print(f"loss {loss:.4f}")
    print(f"edges {subnet_size(model)} of {model.num_weights}")
    print(f"k {cfg.model.k:g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from edgepop.sweep import parse_values, sweep

    cfg = _load_cfg(args)
    values = parse_values(args.axis, args.values)
    seeds = list(range(cfg.run.seed, cfg.run.seed + args.seeds))
    out = Path(args.out or cfg.run.out)
    table = sweep(cfg, args.axis, values, seeds, cfg.run.workers, out=out)
    sys.stdout.write(table.to_csv())
    for p in table.skipped:
        print(f"skipped {args.axis}={p.value}: {p.note}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    from edgepop.verify import SUITES, run_suite

    names = list(SUITES) if args.suite == "all" else [args.suite]
    seed = args.seed if args.seed is not None else 0
    summary = {}
    failed = False
    for name in names:
        start = time.perf_counter()
        result = run_suite(name, seed)
        elapsed = time.perf_counter() - start
        status = "PASS" if result.passed else "FAIL"
        print(f"[{status}] {name} ({elapsed:.1f}s)")
        for line in result.lines:
            print(line)
        summary[name] = {"passed": result.passed, "seconds": round(elapsed, 2), **result.summary}
        failed |= not result.passed
    text = json.dumps(summary, sort_keys=True, default=float)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "verify.json").write_text(text + "\n")
    print(f"summary {text}")
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgepop", description="Subnetwork search in randomly weighted networks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=True):
        p.add_argument("--config", help="INI config file (default: built-in blobs MLP)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="output directory")
        if workers:
            p.add_argument("--workers", type=int, help="parallel worker processes")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")

    p = sub.add_parser("train", help="train one configuration")
    common(p)
    p.add_argument("--epochs", type=int, help="override run.epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its test split")
    p.add_argument("checkpoint")
    p.add_argument("--data-dir", help="dataset directory (else the checkpoint's, else $EDGEPOP_DATA_DIR)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep one axis and aggregate over seeds")
    common(p)
    p.add_argument("--axis", required=True, choices=("k", "width", "fixed_params", "init", "algorithm", "seed"))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--seeds", type=int, default=1, help="seeds per point, counting up from run.seed")
    p.add_argument("--epochs", type=int, help="override run.epochs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=("all", "topk", "gradients", "theorem1", "theorem1_general", "bruteforce", "variance"))
    p.add_argument("--seed", type=int, help="suite seed (default 0)")
    p.add_argument("--out", help="directory for verify.json")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, DataError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, NonFiniteError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
