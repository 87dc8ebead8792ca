"""Render evaluation reports to CSV tables, an SVG chart, and metadata.

Everything written here is a pure function of the report contents, with
fixed float formatting and sorted keys, so re-emission of the same
report is byte-identical.
"""

import json
from pathlib import Path

from . import __version__
from .corruptions import CATEGORIES, CORRUPTION_KINDS
from .evaluation import SEVERITIES

_PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
            "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd")


def _fmt(v):
    if v != v:  # NaN: base aggregate was zero
        return "flagged"
    return f"{v:.6f}"


def _aggregate_rows(report):
    yield ("clean", "clean", report.clean)
    for kind in CORRUPTION_KINDS:
        if kind in report.kinds:
            yield ("kind", kind, report.kinds[kind])
    for cat in CATEGORIES:
        if cat in report.categories:
            yield ("category", cat, report.categories[cat])
    yield ("overall", "overall", report.overall)


def emit_report(reports, out_dir, metadata=None):
    """Write report.csv / cells.csv (+ relative.csv), chart.svg, and
    metadata.json under out_dir; returns {name: path}.

    Absolute reports (relative_to is None) fill report.csv and the
    chart; ratio reports fill relative.csv.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    absolute = [r for r in reports if r.relative_to is None]
    relative = [r for r in reports if r.relative_to is not None]
    written = {}

    lines = ["model,row,name,accuracy"]
    for rep in absolute:
        for row, name, value in _aggregate_rows(rep):
            lines.append(f"{rep.model_id},{row},{name},{_fmt(value)}")
    written["report"] = _write(out / "report.csv", lines)

    lines = ["model,kind,severity,accuracy"]
    for rep in absolute:
        for kind in CORRUPTION_KINDS:
            for sev in SEVERITIES:
                if (kind, sev) in rep.cells:
                    lines.append(f"{rep.model_id},{kind},{sev},"
                                 f"{_fmt(rep.cells[(kind, sev)])}")
    written["cells"] = _write(out / "cells.csv", lines)

    if relative:
        lines = ["model,base,row,name,ratio"]
        for rep in relative:
            for row, name, value in _aggregate_rows(rep):
                lines.append(f"{rep.model_id},{rep.relative_to},{row},{name},"
                             f"{_fmt(value)}")
        written["relative"] = _write(out / "relative.csv", lines)

    if absolute:
        written["chart"] = _write(out / "chart.svg", _chart_lines(absolute))

    doc = dict(metadata or {})
    doc.setdefault("code_version", __version__)
    doc.setdefault("aggregation",
                   {r.aggregation for r in reports}.pop() if reports else "kind")
    doc.setdefault("overall_definition",
                   "unweighted mean over the 15 severity-averaged kinds")
    body = json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n"
    (out / "metadata.json").write_text(body)
    written["metadata"] = out / "metadata.json"
    return written


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def _chart_lines(reports):
    """Grouped bar chart: clean, the four categories, overall; one bar
    per model in each group."""
    groups = ["clean"] + list(CATEGORIES) + ["overall"]
    values = {}
    for rep in reports:
        values[(rep.model_id, "clean")] = rep.clean
        for cat in CATEGORIES:
            values[(rep.model_id, cat)] = rep.categories.get(cat, 0.0)
        values[(rep.model_id, "overall")] = rep.overall
    vmax = max(max(values.values()), 1e-9)

    bar_w, bar_gap, group_gap = 14, 2, 28
    plot_h, margin_l, margin_top = 200, 56, 30 + 14 * len(reports)
    group_w = len(reports) * (bar_w + bar_gap) + group_gap
    width = margin_l + len(groups) * group_w + 20
    height = margin_top + plot_h + 44
    y0 = margin_top + plot_h

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin_l}" y1="{y0}" x2="{width - 10}" y2="{y0}" '
        'stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        y = y0 - frac * plot_h
        lines.append(f'<line x1="{margin_l - 4}" y1="{y:.1f}" x2="{margin_l}" '
                     f'y2="{y:.1f}" stroke="black"/>')
        lines.append(f'<text x="{margin_l - 8}" y="{y + 4:.1f}" '
                     f'text-anchor="end">{frac * vmax:.3f}</text>')
    for mi, rep in enumerate(reports):
        color = _PALETTE[mi % len(_PALETTE)]
        ly = 16 + 14 * mi
        lines.append(f'<rect x="{margin_l}" y="{ly - 9}" width="10" '
                     f'height="10" fill="{color}"/>')
        lines.append(f'<text x="{margin_l + 14}" y="{ly}">{rep.model_id}</text>')
    for gi, group in enumerate(groups):
        gx = margin_l + gi * group_w
        for mi, rep in enumerate(reports):
            v = values[(rep.model_id, group)]
            h = v / vmax * plot_h
            x = gx + mi * (bar_w + bar_gap)
            color = _PALETTE[mi % len(_PALETTE)]
            lines.append(f'<rect x="{x:.1f}" y="{y0 - h:.1f}" '
                         f'width="{bar_w}" height="{h:.1f}" fill="{color}"/>')
        cx = gx + (len(reports) * (bar_w + bar_gap) - bar_gap) / 2
        lines.append(f'<text x="{cx:.1f}" y="{y0 + 16}" '
                     f'text-anchor="middle">{group}</text>')
    lines.append("</svg>")
    return lines
