"""Behavior counts and circadian time-of-day histograms.

Detections aggregate into per-day label totals and into fixed
time-of-day bins across 24 hours; both emit as JSON, CSV, or a
self-contained SVG bar chart. All emission is byte-deterministic for
identical input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .classify import Detection
from .dictionary import CANONICAL_LABELS
from .slicer import US_PER_DAY, day_key, key_to_date

DEFAULT_BIN_MINUTES = 60

_MINUTES_PER_DAY = 1440


@dataclass
class BehaviorCounts:
    """Per-label detection totals for one local calendar day."""

    day: int
    counts: dict[str, int]


@dataclass
class CircadianHistogram:
    """Per-label counts in fixed local time-of-day bins over 24 hours.

    Bin b covers local [b * bin_minutes, (b + 1) * bin_minutes).
    """

    bin_minutes: int
    utc_offset_s: int
    labels: tuple[str, ...]
    bins: list[dict[str, int]]


def _label_universe(detections: Sequence[Detection],
                    labels: Sequence[str] | None) -> tuple[str, ...]:
    if labels is not None:
        return tuple(labels)
    extra = sorted({d.label for d in detections} - set(CANONICAL_LABELS))
    return CANONICAL_LABELS + tuple(extra)


def behavior_counts(
    detections: Sequence[Detection],
    day: int,
    utc_offset_s: int,
    labels: Sequence[str] | None = None,
) -> BehaviorCounts:
    """Exact per-label tally; every detection must belong to ``day``."""
    universe = _label_universe(detections, labels)
    counts = {lab: 0 for lab in universe}
    for i, det in enumerate(detections):
        d = day_key(det.start_us, utc_offset_s)
        if d != day:
            raise ValueError(
                f"detection {i} ({det.label} at {det.start_us}us) falls on "
                f"day {d}, not {day}"
            )
        if det.label not in counts:
            raise ValueError(f"detection {i} has unknown label {det.label!r}")
        counts[det.label] += 1
    return BehaviorCounts(day=day, counts=counts)


def circadian_histogram(
    detections: Sequence[Detection],
    bin_minutes: int = DEFAULT_BIN_MINUTES,
    utc_offset_s: int = 0,
    labels: Sequence[str] | None = None,
) -> CircadianHistogram:
    """Bin detections by the local time-of-day of their start."""
    if bin_minutes < 1 or _MINUTES_PER_DAY % bin_minutes:
        raise ValueError(f"bin_minutes must divide {_MINUTES_PER_DAY}, got {bin_minutes}")
    universe = _label_universe(detections, labels)
    n_bins = _MINUTES_PER_DAY // bin_minutes
    bins = [{lab: 0 for lab in universe} for _ in range(n_bins)]
    off_us = utc_offset_s * 1_000_000
    for det in detections:
        tod_us = (det.start_us + off_us) % US_PER_DAY
        b = int(tod_us // (bin_minutes * 60_000_000))
        if det.label in bins[b]:
            bins[b][det.label] += 1
        else:
            raise ValueError(f"detection has unknown label {det.label!r}")
    return CircadianHistogram(bin_minutes, utc_offset_s, tuple(universe), bins)


def _check_consistent(counts: BehaviorCounts, histogram: CircadianHistogram) -> None:
    if set(counts.counts) != set(histogram.labels):
        raise ValueError("counts and histogram disagree on the label set")


def emit(
    counts: BehaviorCounts,
    histogram: CircadianHistogram,
    format: str,
    path: str | Path,
) -> Path:
    """Write one report file; deterministic bytes for identical input."""
    _check_consistent(counts, histogram)
    p = Path(path)
    if format == "json":
        content = render_json(counts, histogram)
    elif format == "csv":
        content = render_csv(histogram)
    elif format == "svg":
        content = render_svg(counts, histogram)
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(p, "w", encoding="utf-8", newline="\n") as f:
        f.write(content)
    return p


def render_json(counts: BehaviorCounts, histogram: CircadianHistogram) -> str:
    doc = {
        "date": key_to_date(counts.day).isoformat(),
        "utc_offset_s": histogram.utc_offset_s,
        "counts": {lab: counts.counts[lab] for lab in histogram.labels},
        "bin_minutes": histogram.bin_minutes,
        "bins": [
            {"start_min": b * histogram.bin_minutes,
             **{lab: row[lab] for lab in histogram.labels}}
            for b, row in enumerate(histogram.bins)
        ],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def render_csv(histogram: CircadianHistogram) -> str:
    lines = ["bin_start_local,label,count"]
    for b, row in enumerate(histogram.bins):
        start = b * histogram.bin_minutes
        hhmm = f"{start // 60:02d}:{start % 60:02d}"
        for lab in histogram.labels:
            lines.append(f"{hhmm},{lab},{row[lab]}")
    return "\n".join(lines) + "\n"


# SVG geometry: one 900x300 panel per label, stacked vertically.
_PANEL_W = 900
_PANEL_H = 300
_MARGIN_L = 60
_MARGIN_R = 20
_MARGIN_T = 34
_MARGIN_B = 34
_BAR_COLORS = ("#4472c4", "#ed7d31", "#70ad47", "#9e480e", "#636363", "#997300")


def render_svg(counts: BehaviorCounts, histogram: CircadianHistogram) -> str:
    """Grouped-by-label bar panels of counts over local time-of-day.

    Each panel's linear count axis auto-scales to that label's largest
    bin (minimum 1, so empty data still renders).
    """
    labels = histogram.labels
    n_bins = len(histogram.bins)
    total_h = _PANEL_H * max(len(labels), 1)
    plot_w = _PANEL_W - _MARGIN_L - _MARGIN_R
    plot_h = _PANEL_H - _MARGIN_T - _MARGIN_B
    date_str = key_to_date(counts.day).isoformat()

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_PANEL_W}" '
        f'height="{total_h}" viewBox="0 0 {_PANEL_W} {total_h}">\n',
        f'<rect x="0" y="0" width="{_PANEL_W}" height="{total_h}" fill="#ffffff"/>\n',
    ]
    for li, lab in enumerate(labels):
        top = li * _PANEL_H
        color = _BAR_COLORS[li % len(_BAR_COLORS)]
        values = [row[lab] for row in histogram.bins]
        y_max = max(max(values), 1)
        parts.append(f'<g transform="translate(0,{top})">\n')
        parts.append(
            f'<text x="{_MARGIN_L}" y="20" font-family="sans-serif" '
            f'font-size="14" fill="#000000">{escape(lab)} {date_str} '
            f'(total {counts.counts[lab]})</text>\n'
        )
        # axes
        x0 = _MARGIN_L
        y0 = _MARGIN_T + plot_h
        parts.append(
            f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" '
            f'stroke="#000000" stroke-width="1"/>\n'
            f'<line x1="{x0}" y1="{_MARGIN_T}" x2="{x0}" y2="{y0}" '
            f'stroke="#000000" stroke-width="1"/>\n'
        )
        parts.append(
            f'<text x="{x0 - 8}" y="{_MARGIN_T + 4}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="#000000">{y_max}</text>\n'
            f'<text x="{x0 - 8}" y="{y0 + 4}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="#000000">0</text>\n'
        )
        # hour ticks every 4 h
        for hour in range(0, 25, 4):
            tx = x0 + plot_w * hour / 24.0
            parts.append(
                f'<line x1="{tx:.2f}" y1="{y0}" x2="{tx:.2f}" y2="{y0 + 5}" '
                f'stroke="#000000" stroke-width="1"/>\n'
                f'<text x="{tx:.2f}" y="{y0 + 18}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="11" '
                f'fill="#000000">{hour:02d}:00</text>\n'
            )
        bar_w = plot_w / n_bins
        for b, v in enumerate(values):
            if v <= 0:
                continue
            h = plot_h * v / y_max
            bx = x0 + b * bar_w
            parts.append(
                f'<rect x="{bx + 0.5:.2f}" y="{y0 - h:.2f}" '
                f'width="{max(bar_w - 1.0, 0.5):.2f}" height="{h:.2f}" '
                f'fill="{color}"/>\n'
            )
        parts.append("</g>\n")
    parts.append("</svg>\n")
    return "".join(parts)
