"""Desk run: search the two-Gaussian task from desk_run.yaml, then print the report and write the plot.

Usage: python3 scripts/desk_run.py [output_dir]
"""

import sys
import time
from pathlib import Path

from petra import config as cfgmod
from petra import report, runner


def main(argv):
    cfg = cfgmod.load(Path(__file__).with_name("desk_run.yaml"))
    if argv:
        cfg = cfgmod.with_overrides(cfg, output_dir=argv[0])
    start = time.perf_counter()
    _, result = runner.start(cfg, workers=1)
    elapsed = time.perf_counter() - start

    run = runner.load_run(cfg.output_dir)
    print(report.table(run, "txt"))
    print(f"plot: {report.write_plot(run, cfg.output_dir)}")
    base = run["base"]
    for ind in result["archive"]:
        ratio = ind.metrics.size_mb / base.size_mb
        drop = 100 * (base.quality - ind.metrics.quality)
        if ratio <= 0.5 and drop <= 5:
            print(f"{ind.pipeline}: size {100 * ratio:.1f}% of the original, quality drop {drop:.2f} pp")
    print(f"stop reason {result['stop_reason']}, {elapsed:.1f} s")


if __name__ == "__main__":
    main(sys.argv[1:])
