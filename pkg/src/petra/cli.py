"""Command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 run failure.
The worker count comes from the ``PETRA_WORKERS`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys

from petra import config as cfgmod
from petra import report, runner
from petra.data import DataError
from petra.nn.checkpoint import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUN = 0, 2, 3, 4


def _progress(search):
    h = search.history[-1]
    print(f"generation {h['generation']}: archive {h['archive_size']}, "
          f"hypervolume {h['hypervolume']:.6g}, failed {h['failed']}", file=sys.stderr)
    return False


def cmd_run(args) -> int:
    cfg = cfgmod.with_overrides(cfgmod.load(args.config), seed=args.seed, generations=args.generations,
                                output_dir=args.output)
    runner.start(cfg, on_generation=_progress)
    print(cfg.output_dir)
    return EXIT_OK


def cmd_resume(args) -> int:
    runner.resume(args.run_dir, on_generation=_progress)
    print(args.run_dir)
    return EXIT_OK


def cmd_report(args) -> int:
    run = runner.load_run(args.run_dir)
    path = report.write_report(run, args.run_dir, args.format)
    print(path.read_text(), end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    run = runner.load_run(args.run_dir)
    print(report.write_plot(run, args.run_dir))
    return EXIT_OK


def cmd_eval(args) -> int:
    m = runner.eval_checkpoint(args.checkpoint, args.data, fmt=args.format, seed=args.seed, timing=args.timing)
    print(json.dumps(m.to_json(), indent=2, ensure_ascii=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="petra", description="Evolutionary search over compression pipelines.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="start a search from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--generations", type=int)
    r.add_argument("--output", help="run directory (overrides output_dir)")
    r.set_defaults(func=cmd_run)

    r = sub.add_parser("resume", help="continue an interrupted run")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_resume)

    r = sub.add_parser("report", help="table of the Pareto archive")
    r.add_argument("run_dir")
    r.add_argument("--format", choices=report.FORMATS, default="txt")
    r.set_defaults(func=cmd_report)

    r = sub.add_parser("plot", help="percent-change bar chart (SVG)")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_plot)

    r = sub.add_parser("eval", help="metrics of a checkpoint on a data file")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--format", choices=("tabular", "timeseries", "image"))
    r.add_argument("--seed", type=int, default=0, help="split seed; use the run seed to match its test split")
    r.add_argument("--timing", choices=("measured", "modeled"), default="measured")
    r.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (runner.RunError, CheckpointError, OSError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
