"""``collabseg`` command line.

Exit codes: 0 success, 1 other failure, 2 configuration error,
3 missing prerequisite, 4 numeric failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .config import load_config
from .exceptions import CollabSegError, ConfigError, NumericError, PrerequisiteError

OUTPUT_ENV = "COLLABSEG_OUTPUT_ROOT"
EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_PREREQUISITE, EXIT_NUMERIC = 0, 1, 2, 3, 4

FOLD_COMMANDS = {
    "train-semi": "train_semi",
    "train-reg": "train_reg",
    "propagate": "propagate",
    "fuse": "fuse",
    "train-final": "train_final",
    "train-baseline": "train_baseline",
    "evaluate": "evaluate",
}

log = logging.getLogger("collabseg")


def build_parser():
    parser = argparse.ArgumentParser(prog="collabseg", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default", help="JSON config path or packaged profile (default, desk)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--output", help=f"output root (overrides ${OUTPUT_ENV} and the config)")
    common.add_argument("--threads", type=int, help="cap BLAS / OpenMP threads")
    common.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True,
                        help="skip stages whose recorded inputs and settings are unchanged")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="synthesise the phantom dataset")
    synth.add_argument("--spec", help="JSON file with phantom parameters (overrides data.phantom)")

    for name in FOLD_COMMANDS:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} stage for one fold")
        p.add_argument("--fold", type=int, required=True)

    p = sub.add_parser("label-quality", parents=[common], help="per-slice precision / dice of the label sets")
    p.add_argument("--fold", type=int, required=True)

    cv = sub.add_parser("crossval", parents=[common], help="run every stage for the given folds and pool the results")
    cv.add_argument("--fold", type=int, action="append", help="restrict to these folds (repeatable)")
    return parser


def resolve_config(args):
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "spec", None):
        path = Path(args.spec)
        if not path.is_file():
            raise ConfigError(f"phantom spec {path} not found")
        try:
            config.data.phantom = {**config.data.phantom, **json.loads(path.read_text())}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    config.validate()
    root = args.output or os.environ.get(OUTPUT_ENV) or config.output_dir
    config.output_dir = str(root)
    return config, Path(root)


def _threads(n):
    if n is None:
        return None
    if n < 1:
        raise ConfigError("--threads must be positive")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def write_rows(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: f"{v:.6g}" if isinstance(v, float) else v for k, v in row.items()})


def dispatch(args, argv):
    from .runner import Runner

    config, root = resolve_config(args)
    runner = Runner(config, root, resume=args.resume, argv=argv)
    if args.command == "synth":
        record = runner.synth()
    elif args.command == "crossval":
        record = runner.crossval(args.fold)
        print(root / "crossval" / "table.csv")
    elif args.command == "label-quality":
        runner.check_fold(args.fold)
        rows = runner.label_quality(args.fold)
        path = root / f"fold{args.fold}" / "label_quality.csv"
        write_rows(path, rows)
        wins = sum(r["fused_precision"] >= max(r["semi_precision"], r["ssl_precision"]) for r in rows)
        print(f"fused precision >= both sources on {wins}/{len(rows)} slices; table in {path}")
        return
    else:
        record = getattr(runner, FOLD_COMMANDS[args.command])(args.fold)
    print(json.dumps({"stage": record["stage"], "fold": record["fold"], "metrics": record["metrics"]}, sort_keys=True))


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        limiter = _threads(args.threads)
        try:
            dispatch(args, argv)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrerequisiteError as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQUISITE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CollabSegError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
