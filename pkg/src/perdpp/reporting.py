"""Run directories: metrics CSV, JSON path trace and two static SVG plots.

The SVGs are written by hand rather than through a plotting library so
that identical reports produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import os
from xml.sax.saxutils import escape

from .env import GridMap, load_map
from .harness import EpochMetrics, RunReport

METRICS_HEADER = ("epoch", "success_rate", "mean_return", "mean_length")
FILES = ("metrics.csv", "path.json", "report.json", "map.txt", "success_curve.svg", "path_overlay.svg")
CELL = 24


class ReportError(ValueError):
    pass


def metrics_csv(epochs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for m in epochs:
        w.writerow([m.epoch, repr(float(m.success_rate)), repr(float(m.mean_return)),
                    repr(float(m.mean_length))])
    return buf.getvalue()


def parse_metrics_csv(text: str) -> list[EpochMetrics]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != METRICS_HEADER:
        raise ReportError(f"metrics.csv must start with header {','.join(METRICS_HEADER)}")
    return [EpochMetrics(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows[1:]]


def success_curve_svg(rates, title: str = "") -> str:
    width, height, pad = 640, 360, 48
    pw, ph = width - 2 * pad, height - 2 * pad
    n = len(rates)

    def xy(i, r):
        x = pad + (pw * i / (n - 1) if n > 1 else pw / 2)
        return f"{x:.2f},{pad + ph * (1.0 - r):.2f}"

    pts = " ".join(xy(i, r) for i, r in enumerate(rates))
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{pad + ph}" x2="{pad + pw}" y2="{pad + ph}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{pad + ph}" stroke="black"/>',
    ]
    for tick in (0.0, 0.5, 1.0):
        y = pad + ph * (1.0 - tick)
        lines.append(f'<text x="{pad - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{tick:.1f}</text>')
    lines.append(f'<text x="{pad + pw / 2:.2f}" y="{height - 12}" font-size="12" '
                 f'text-anchor="middle">epoch (0..{n - 1})</text>')
    lines.append(f'<text x="{pad + pw / 2:.2f}" y="{pad - 16}" font-size="13" '
                 f'text-anchor="middle">{escape(title)}</text>')
    lines.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{pts}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def path_overlay_svg(grid: GridMap, path) -> str:
    w, h = grid.width * CELL, grid.height * CELL
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white" stroke="black"/>',
    ]
    for x, y in sorted(grid.obstacles, key=lambda c: (c[1], c[0])):
        lines.append(f'<rect x="{x * CELL}" y="{y * CELL}" width="{CELL}" height="{CELL}" fill="#444"/>')
    for (x, y), colour in ((grid.start, "#2ca02c"), (grid.goal, "#d62728")):
        lines.append(f'<rect x="{x * CELL}" y="{y * CELL}" width="{CELL}" height="{CELL}" fill="{colour}"/>')
    pts = " ".join(f"{x * CELL + CELL // 2},{y * CELL + CELL // 2}" for x, y in path)
    lines.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="3" points="{pts}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render(report: RunReport, grid: GridMap) -> dict:
    """File name -> contents for a run directory."""
    if not report.epochs:
        raise ReportError("report has zero epochs; nothing written")
    title = f"{report.algorithm} on {report.map} (seed {report.seed})"
    return {
        "metrics.csv": metrics_csv(report.epochs),
        "path.json": json.dumps([[int(x), int(y)] for x, y in report.best_path]) + "\n",
        "report.json": json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n",
        "map.txt": grid.to_text(),
        "success_curve.svg": success_curve_svg(report.success_rates(), title),
        "path_overlay.svg": path_overlay_svg(grid, report.best_path),
    }


def _write_all(out_dir: str, files: dict) -> list[str]:
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out_dir}: {exc.strerror}") from exc
    written = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        written.append(path)
    return written


def emit_report(report: RunReport, out_dir: str, grid: GridMap) -> list[str]:
    """Write the run directory; everything is rendered before the first write."""
    return _write_all(out_dir, render(report, grid))


def load_run(run_dir: str) -> tuple[RunReport, GridMap]:
    try:
        with open(os.path.join(run_dir, "report.json"), encoding="utf-8") as fh:
            report = RunReport.from_dict(json.load(fh))
        with open(os.path.join(run_dir, "map.txt"), encoding="utf-8") as fh:
            grid = load_map(fh.read(), report.map)
    except FileNotFoundError as exc:
        raise ReportError(f"not a run directory: missing {exc.filename}") from None
    return report, grid


def replot(run_dir: str) -> list[str]:
    """Redraw both SVGs of an existing run directory."""
    report, grid = load_run(run_dir)
    files = render(report, grid)
    return _write_all(run_dir, {k: files[k] for k in ("success_curve.svg", "path_overlay.svg")})
