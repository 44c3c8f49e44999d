"""Result aggregation output: CSV tables and dependency-free SVG charts.

The SVG writer is deliberately minimal and fully deterministic (fixed float
formatting, fixed palette) so charts diff cleanly between runs.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .experiments import ResultsTable

AGG_COLUMNS = ("model", "theta_deg", "trans_px", "mean_test_err", "std_test_err", "runs")

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#17becf", "#7f7f7f")


def write_aggregate_csv(table: ResultsTable, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(AGG_COLUMNS)
        for (model, theta, trans), (mean, std, n) in table.aggregate().items():
            w.writerow([model, f"{theta:g}", trans, f"{mean:.6f}", f"{std:.6f}", n])


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_chart(series, path, title="", xlabel="", ylabel="",
               width=640, height=420) -> None:
    """Write a line chart with error bars.

    ``series`` is an iterable of ``(label, xs, ys, yerrs)`` tuples; ``yerrs``
    may be None.
    """
    series = [(str(l), list(xs), list(ys), list(ye) if ye is not None else None)
              for l, xs, ys, ye in series]
    ml, mr, mt, mb = 64, 16, 28, 46
    pw, ph = width - ml - mr, height - mt - mb
    all_x = [x for _, xs, _, _ in series for x in xs]
    all_y = [y + (e or 0.0) for _, xs, ys, ye in series
             for y, e in zip(ys, ye or [0.0] * len(ys))]
    all_y += [y - (e or 0.0) for _, xs, ys, ye in series
              for y, e in zip(ys, ye or [0.0] * len(ys))]
    if not all_x:
        raise ValueError("nothing to plot")
    x0, x1 = min(all_x), max(all_x)
    y0, y1 = min(all_y + [0.0]), max(all_y)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    y1 *= 1.05

    def sx(x):
        return ml + pw * (x - x0) / (x1 - x0)

    def sy(y):
        return mt + ph * (1.0 - (y - y0) / (y1 - y0))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="16" text-anchor="middle" font-size="13">{title}</text>',
    ]
    # axes + ticks
    parts.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>')
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>')
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        parts.append(f'<line x1="{ml - 4}" y1="{_fmt(sy(yv))}" x2="{ml}" y2="{_fmt(sy(yv))}" stroke="black"/>')
        parts.append(f'<text x="{ml - 8}" y="{_fmt(sy(yv) + 4)}" text-anchor="end">{yv:.3g}</text>')
    xticks = sorted(set(all_x))
    if len(xticks) > 8:
        xticks = xticks[:: max(1, len(xticks) // 8)]
    for xv in xticks:
        parts.append(f'<line x1="{_fmt(sx(xv))}" y1="{mt + ph}" x2="{_fmt(sx(xv))}" y2="{mt + ph + 4}" stroke="black"/>')
        parts.append(f'<text x="{_fmt(sx(xv))}" y="{mt + ph + 18}" text-anchor="middle">{xv:g}</text>')
    parts.append(f'<text x="{ml + pw / 2:.0f}" y="{height - 8}" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="14" y="{mt + ph / 2:.0f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {mt + ph / 2:.0f})">{ylabel}</text>')

    for si, (label, xs, ys, yerrs) in enumerate(series):
        color = _PALETTE[si % len(_PALETTE)]
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for j, (x, y) in enumerate(zip(xs, ys)):
            parts.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="2.5" fill="{color}"/>')
            if yerrs is not None and yerrs[j]:
                e = yerrs[j]
                parts.append(
                    f'<line x1="{_fmt(sx(x))}" y1="{_fmt(sy(y - e))}" x2="{_fmt(sx(x))}" '
                    f'y2="{_fmt(sy(y + e))}" stroke="{color}" stroke-width="1"/>'
                )
        ly = mt + 14 + 14 * si
        parts.append(f'<line x1="{ml + pw - 110}" y1="{ly - 4}" x2="{ml + pw - 90}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{ml + pw - 84}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts))


def write_report(table: ResultsTable, out_dir) -> list[Path]:
    """Emit aggregate CSV plus one SVG of mean test error per model.

    The x axis is whichever augmentation magnitude varies (rotation takes
    precedence); error bars are the sample standard deviation over seeds.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg_path = out_dir / "aggregate.csv"
    write_aggregate_csv(table, agg_path)

    agg = table.aggregate()
    thetas = sorted({k[1] for k in agg})
    use_theta = len(thetas) > 1 or all(k[2] == 0 for k in agg)
    series = {}
    for (model, theta, trans), (mean, std, _) in agg.items():
        x = theta if use_theta else trans
        series.setdefault(model, []).append((x, mean, std))
    chart = []
    for model in sorted(series):
        pts = sorted(series[model])
        chart.append((model, [p[0] for p in pts], [p[1] for p in pts], [p[2] for p in pts]))
    svg_path = out_dir / "test_error.svg"
    line_chart(chart, svg_path,
               title="Test error vs transformation magnitude",
               xlabel="max rotation (deg)" if use_theta else "max translation (px)",
               ylabel="test error")
    return [agg_path, svg_path]
