"""Byte-deterministic Markdown, CSV and SVG report rendering."""

from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

from .trends import Granularity, SentimentDistribution, TopicTable, TrendSeries

FORMATS = ("markdown", "csv", "svg")

SVG_W, SVG_H = 800, 400
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 30, 40, 70
_MAX_X_LABELS = 12


class ReportError(RuntimeError):
    pass


@dataclass
class ReportInputs:
    metadata: dict[str, str] = field(default_factory=dict)
    distribution: SentimentDistribution | None = None
    tables: list[TopicTable] = field(default_factory=list)
    series: list[TrendSeries] = field(default_factory=list)

    def empty(self) -> bool:
        return self.distribution is None and not self.tables and not self.series


def slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "subject"


def _bucket_label(series: TrendSeries, start) -> str:
    if series.granularity is Granularity.MONTHLY:
        return start.strftime("%Y-%m")
    return start.strftime("%Y-%m-%d")


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _md_cell(value) -> str:
    return str(value).replace("|", "\\|").replace("\n", " ")


def _md_table(header: list[str], rows: list[list]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(" --- " for _ in header) + "|"]
    lines += ["| " + " | ".join(_md_cell(c) for c in row) + " |" for row in rows]
    return lines


def render_markdown(inputs: ReportInputs) -> str:
    out = ["# Vaccine concern surveillance report", ""]
    out += ["## Run metadata", ""]
    out += _md_table(["field", "value"], [[k, v] for k, v in sorted(inputs.metadata.items())]) if inputs.metadata else ["(none)"]
    out.append("")
    if inputs.distribution is not None:
        d = inputs.distribution
        out += ["## Sentiment distribution", ""]
        out += _md_table(["label", "count", "percent"], [[lbl, n, f"{pct}%"] for lbl, n, pct in d.rows()])
        out += ["", f"Total: {d.n_total}", ""]
    if inputs.tables:
        out += ["## Topics", ""]
        for table in inputs.tables:
            out += [f"### {table.group}", ""]
            if table.rows:
                out += _md_table(["S.No", "Topic of Discussion", "Comments Count"], [[r.serial, r.label, r.count] for r in table.rows])
            else:
                out.append("No topics reached the minimum size.")
            out += ["", f"Outliers: {table.outliers}", ""]
    if inputs.series:
        out += ["## Trends", ""]
        rows = []
        for s in inputs.series:
            if s.buckets:
                peak_start, peak = max(s.buckets, key=lambda b: (b[1], -b[0].timestamp()))
                rows.append([s.subject, s.granularity.value, s.total, _bucket_label(s, s.buckets[0][0]),
                             _bucket_label(s, s.buckets[-1][0]), f"{_bucket_label(s, peak_start)} ({peak})"])
            else:
                rows.append([s.subject, s.granularity.value, 0, "-", "-", "-"])
        out += _md_table(["subject", "granularity", "total", "first", "last", "peak"], rows)
        out.append("")
    return "\n".join(out)


def _nice_max(value: int) -> int:
    if value <= 0:
        return 1
    magnitude = 10 ** (len(str(value)) - 1)
    for step in (1, 2, 5, 10):
        if step * magnitude >= value:
            return step * magnitude
    return 10 * magnitude


def render_svg(series: TrendSeries) -> str:
    """Self-contained line chart of one series in a fixed 800x400 viewBox."""
    plot_w = SVG_W - _MARGIN_L - _MARGIN_R
    plot_h = SVG_H - _MARGIN_T - _MARGIN_B
    x0, y0 = _MARGIN_L, SVG_H - _MARGIN_B
    n = len(series.buckets)
    ymax = _nice_max(max((c for _, c in series.buckets), default=0))

    def x_at(i: int) -> float:
        return x0 + (plot_w * i / (n - 1) if n > 1 else 0.0)

    def y_at(c: int) -> float:
        return y0 - plot_h * c / ymax

    pts = [(x_at(i), y_at(c)) for i, (_, c) in enumerate(series.buckets)]
    if len(pts) == 1:
        pts = pts * 2  # zero-length polyline keeps the element valid
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 {SVG_W} {SVG_H}" width="{SVG_W}" height="{SVG_H}">',
        f'<rect x="0" y="0" width="{SVG_W}" height="{SVG_H}" fill="#ffffff"/>',
        f'<text x="{SVG_W / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16" fill="#222222">{escape(series.subject)}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="#333333" stroke-width="1"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{_MARGIN_T}" stroke="#333333" stroke-width="1"/>',
    ]
    for frac in (0, 0.25, 0.5, 0.75, 1):
        value = ymax * frac
        label = f"{value:g}"
        y = y_at(value)
        parts.append(f'<line x1="{x0 - 4}" y1="{y:.1f}" x2="{x0}" y2="{y:.1f}" stroke="#333333"/>')
        parts.append(f'<text x="{x0 - 8}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="11" fill="#333333">{label}</text>')
    step = max(1, -(-n // _MAX_X_LABELS))
    for i in range(0, n, step):
        x = x_at(i)
        label = escape(_bucket_label(series, series.buckets[i][0]))
        parts.append(f'<line x1="{x:.1f}" y1="{y0}" x2="{x:.1f}" y2="{y0 + 4}" stroke="#333333"/>')
        parts.append(
            f'<text x="{x:.1f}" y="{y0 + 16}" text-anchor="end" transform="rotate(-35 {x:.1f} {y0 + 16})" '
            f'font-family="sans-serif" font-size="10" fill="#333333">{label}</text>'
        )
    parts.append(f'<text x="{x0 + plot_w / 2:.1f}" y="{SVG_H - 8}" text-anchor="middle" font-family="sans-serif" font-size="12" fill="#333333">bucket start ({series.granularity.value})</text>')
    parts.append(f'<text x="16" y="{_MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {_MARGIN_T + plot_h / 2:.1f})" font-family="sans-serif" font-size="12" fill="#333333">comments</text>')
    if pts:
        coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
        for x, y in pts[: max(n, 1)]:
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3" fill="#1f77b4"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc


def render_report(inputs: ReportInputs, out_dir: str | Path, formats=FORMATS) -> list[dict]:
    """Write the report files and return the manifest ``[{path, kind, subject}]``."""
    if inputs.empty():
        raise ReportError("nothing to report: no distribution, tables or series")
    formats = set(formats)
    unknown = formats - set(FORMATS)
    if unknown:
        raise ReportError(f"unknown report formats {sorted(unknown)}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {out_dir}: {exc.strerror or exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise ReportError(f"output directory {out_dir} is not writable")

    manifest: list[dict] = []

    def emit(name: str, kind: str, subject: str, text: str) -> None:
        _write(out_dir / name, text)
        manifest.append({"path": name, "kind": kind, "subject": subject})

    if "markdown" in formats:
        emit("report.md", "markdown", "report", render_markdown(inputs))
    if "csv" in formats:
        if inputs.distribution is not None:
            rows = [[lbl, n, f"{pct}"] for lbl, n, pct in inputs.distribution.rows()]
            emit("sentiment.csv", "csv", "sentiment", _csv_text(["label", "count", "percent"], rows))
        for table in inputs.tables:
            rows = [[r.serial, r.label, r.count] for r in table.rows]
            emit(f"topics-{slug(table.group)}.csv", "csv", table.group, _csv_text(["serial", "label", "count"], rows))
        for s in inputs.series:
            rows = [[start.strftime("%Y-%m-%dT%H:%M:%SZ"), n] for start, n in s.buckets]
            emit(f"trend-{slug(s.subject)}.csv", "csv", s.subject, _csv_text(["bucket_start", "count"], rows))
    if "svg" in formats:
        for s in inputs.series:
            emit(f"trend-{slug(s.subject)}.svg", "svg", s.subject, render_svg(s))
    return manifest
