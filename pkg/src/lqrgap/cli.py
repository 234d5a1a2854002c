"""Command line entry point: ``lqrgap {predict,eval-risk,opt-risk,sweep}``."""

import argparse
import json
from pathlib import Path
import sys

from .errors import ValidationError
from .harness import ExperimentConfig, predict, run_experiment, run_sweep

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def load_config(path):
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with path.open("rb") as fh:
            return tomllib.load(fh)
    with path.open() as fh:
        return json.load(fh)


def _config_from_args(args, task=None):
    doc = load_config(args.config) if args.config else {}
    if task is not None:
        doc.setdefault("task", task)
        if doc["task"] != task:
            raise ValidationError(f"config task {doc['task']!r} does not match subcommand")
    for key in ("seed", "trials", "out", "format", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    return ExperimentConfig.from_mapping(doc)


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="lqrgap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("predict", "print closed-form risk predictions (no simulation)"),
        ("eval-risk", "Monte Carlo policy-evaluation risks"),
        ("opt-risk", "Monte Carlo policy-optimization risks"),
        ("sweep", "run the configured task over the dimensions in sweep_n"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON or TOML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--out")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "predict":
            cfg = _config_from_args(args)
            _emit(json.dumps(predict(cfg), indent=2, sort_keys=True) + "\n", cfg.out)
            return 0
        task = {"eval-risk": "eval", "opt-risk": "opt"}.get(args.command)
        cfg = _config_from_args(args, task)
        report = run_sweep(cfg) if args.command == "sweep" else run_experiment(cfg)
        text = report.to_csv() if cfg.format == "csv" else report.to_json() + "\n"
        _emit(text, cfg.out)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
