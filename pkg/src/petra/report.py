"""Result tables in the "value / +x.x%" cell grammar and percent-change bar charts (SVG)."""

from __future__ import annotations

import csv
import io
from html import escape
from pathlib import Path

import numpy as np

from petra import metrics
from petra.evaluation import INFINITY, REPORT_AXES, MetricVector, format_percent, percent_change

HEADERS = {
    "cpu_latency": "CPU Latency (ms)",
    "gpu_latency": "GPU Latency (ms)",
    "cpu_throughput": "CPU Throughput (IPS)",
    "gpu_throughput": "GPU Throughput (IPS)",
    "size": "Model Size (MB)",
}
FORMATS = ("csv", "md", "txt")


def fmt_value(v) -> str:
    """Three decimals from 1 upward, four significant digits below, never scientific notation."""
    if v is None:
        return INFINITY
    v = float(v)
    if abs(v) >= 1000:
        return f"{v:.1f}"
    if abs(v) >= 1 or v == 0:
        return f"{v:.3f}"
    return np.format_float_positional(v, precision=4, unique=False, fractional=False, trim="-")


def cell(original, value, is_original: bool) -> str:
    if value is None:
        return INFINITY
    if is_original:
        return fmt_value(value)
    p = percent_change(original, value)
    return f"{fmt_value(value)} / {format_percent(p) if p is not None else 'n/a'}"


def columns(quality_name: str) -> list:
    return ["Pipeline", quality_name] + [HEADERS[a] for a in REPORT_AXES[1:]]


def rows(original: MetricVector, members) -> list:
    """``members``: ``(label, MetricVector)`` pairs. The original comes first."""
    out = [["Original"] + [cell(None, original.value(a), True) for a in REPORT_AXES]]
    for label, m in members:
        out.append([label] + [cell(original.value(a), m.value(a), False) for a in REPORT_AXES])
    return out


def archive_members(run: dict) -> list:
    """Archive members of a loaded run, best quality first."""
    kind = run["config"].task.kind
    inds = run["individuals"]
    out = []
    for i in run["state"]["archive"]["ids"]:
        d = inds[i]
        out.append((d["pipeline_string"], MetricVector.from_json(d["metrics"]), i))
    out.sort(key=lambda t: (-metrics.oriented(kind, t[1].quality), t[2]))
    return [(label, m) for label, m, _ in out]


def render(header, body, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt == "md":
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in body]
        return "\n".join(lines) + "\n"
    if fmt == "txt":
        widths = [max(len(str(r[j])) for r in [header] + body) for j in range(len(header))]
        line = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
        sep = "  ".join("-" * w for w in widths)
        return "\n".join([line(header), sep] + [line(r) for r in body]) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def table(run: dict, fmt: str = "txt") -> str:
    original = run["base"]
    return render(columns(original.quality_name), rows(original, archive_members(run)), fmt)


def parse_cell(text: str):
    """``(value, percent)`` from a table cell; None for "∞" parts."""
    text = text.strip()
    if text == INFINITY:
        return None, None
    if " / " in text:
        v, p = text.split(" / ")
        return float(v), (None if p == "n/a" else float(p.rstrip("%")))
    return float(text), None


# ------------------------------------------------------------------ plot
PALETTE = ("#4878a8", "#e8894a", "#6aa56a", "#c85a5a", "#8c72b0", "#9a7a5a")


def percent_plot(original: MetricVector, members, title: str = "Percentage change in metrics by pipeline") -> str:
    """Grouped bar chart: one group per pipeline, one bar per metric; unavailable metrics marked ∞."""
    labels = [evaluation_label(a, original.quality_name) for a in REPORT_AXES]
    data = [[percent_change(original.value(a), m.value(a)) for a in REPORT_AXES] for _, m in members]
    finite = [abs(v) for row in data for v in row if v is not None]
    top = max(finite + [1.0])
    top = float(np.ceil(top / 10.0) * 10.0) if top > 10 else float(np.ceil(top))
    nb = len(REPORT_AXES)
    bar, gap = 14, 26
    group_w = nb * bar + gap
    left, right, up, down = 70, 200, 50, 150
    plot_h = 300
    width = left + right + max(1, len(members)) * group_w
    height = up + plot_h + down
    zero = up + plot_h / 2

    def y(v):
        return zero - (v / top) * (plot_h / 2)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for t in np.linspace(-top, top, 5):
        out.append(f'<line x1="{left}" x2="{width - right}" y1="{y(t):.1f}" y2="{y(t):.1f}" '
                   f'stroke="{"#000" if t == 0 else "#ddd"}" stroke-width="1"/>')
        out.append(f'<text x="{left - 6}" y="{y(t) + 4:.1f}" text-anchor="end">{t:+.0f}%</text>')
    for g, ((label, _), row) in enumerate(zip(members, data)):
        x0 = left + g * group_w + gap / 2
        for j, v in enumerate(row):
            x = x0 + j * bar
            if v is None:
                out.append(f'<text x="{x + bar / 2:.1f}" y="{zero - 4:.1f}" text-anchor="middle" '
                           f'fill="{PALETTE[j]}">{INFINITY}</text>')
                continue
            y1, y2 = sorted((y(v), zero))
            out.append(f'<rect x="{x:.1f}" y="{y1:.1f}" width="{bar - 2}" height="{max(y2 - y1, 0.5):.1f}" '
                       f'fill="{PALETTE[j]}"><title>{escape(label)}: {escape(labels[j])} '
                       f'{format_percent(v)}</title></rect>')
        cx = x0 + nb * bar / 2
        out.append(f'<text x="{cx:.1f}" y="{up + plot_h + 14}" text-anchor="end" '
                   f'transform="rotate(-35 {cx:.1f} {up + plot_h + 14})">{escape(label)}</text>')
    lx = width - right + 16
    for j, name in enumerate(labels):
        ly = up + 10 + j * 18
        out.append(f'<rect x="{lx}" y="{ly}" width="12" height="12" fill="{PALETTE[j]}"/>')
        out.append(f'<text x="{lx + 18}" y="{ly + 10}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def evaluation_label(axis: str, quality_name: str) -> str:
    return quality_name if axis == "quality" else HEADERS[axis]


def write_report(run: dict, run_dir, fmt: str) -> Path:
    path = Path(run_dir) / f"report.{fmt}"
    path.write_text(table(run, fmt))
    return path


def write_plot(run: dict, run_dir) -> Path:
    path = Path(run_dir) / "percent_change.svg"
    path.write_text(percent_plot(run["base"], archive_members(run)))
    return path


__all__ = ["table", "rows", "columns", "cell", "fmt_value", "parse_cell", "percent_plot", "write_report",
           "write_plot"]
