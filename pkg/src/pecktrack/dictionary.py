"""Behavior template dictionaries built from video-annotated intervals.

Annotations arrive as line-delimited JSON (``label``, ``start``, ``end``
RFC-3339 UTC instants). Templates are verbatim sample slices cut from a
day segment at those intervals; each template later gets a detection
threshold calibrated by maximizing F1 against the annotated day.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .slicer import DaySegment

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
AXIS_ORDER = ("x", "y", "z")
DEFAULT_AXES = ("y", "z")
CANONICAL_LABELS = ("pecking", "preening", "dustbathing")

#: Shortest usable template; z-normalization is meaningless below this.
MIN_TEMPLATE_SAMPLES = 4

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class AnnotationError(ValueError):
    """One or more annotation lines failed to load; lists every offender."""

    def __init__(self, path, line_errors: list[tuple[int, str]]):
        self.line_errors = line_errors
        detail = "; ".join(f"line {n}: {msg}" for n, msg in line_errors)
        super().__init__(f"{path}: {detail}")


class DictionaryFormatError(ValueError):
    """Dictionary file violates the schema; names the offending field."""


class CalibrationError(ValueError):
    pass


def parse_rfc3339_us(text: str) -> int:
    """RFC-3339 UTC instant to integer epoch microseconds.

    Accepts 'Z' or numeric offsets, with millisecond or microsecond
    fractions (the shapes this package emits).
    """
    if not isinstance(text, str):
        raise ValueError(f"timestamp must be a string, got {type(text).__name__}")
    s = text[:-1] + "+00:00" if text.endswith("Z") else text
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp lacks a UTC offset: {text!r}")
    delta = dt - _EPOCH
    return (delta.days * 86400 + delta.seconds) * 1_000_000 + delta.microseconds


@dataclass(frozen=True)
class AnnotationInterval:
    """A labeled time interval [start_us, end_us) from video annotation."""

    label: str
    start_us: int
    end_us: int


def load_annotations(path: str | Path) -> list[AnnotationInterval]:
    """Read line-delimited JSON annotations, in file order.

    Blank lines are ignored. Any malformed line (bad JSON, missing keys,
    empty label, end before start) is collected and reported with its line
    number via :class:`AnnotationError`.
    """
    out: list[AnnotationInterval] = []
    errors: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("expected a JSON object")
                label = obj["label"]
                if not isinstance(label, str) or not label:
                    raise ValueError("label must be a non-empty string")
                start_us = parse_rfc3339_us(obj["start"])
                end_us = parse_rfc3339_us(obj["end"])
                if start_us >= end_us:
                    raise ValueError("start must be before end")
            except KeyError as e:
                errors.append((line_no, f"missing key {e.args[0]!r}"))
            except ValueError as e:
                errors.append((line_no, str(e)))
            else:
                out.append(AnnotationInterval(label, start_us, end_us))
    if errors:
        raise AnnotationError(path, errors)
    return out


def normalize_axes(axes: Iterable[str] | str) -> tuple[str, ...]:
    """Canonicalize an axis subset ('yz', ['z','y'], ...) to x,y,z order."""
    names = list(axes) if not isinstance(axes, str) else list(axes)
    for a in names:
        if a not in AXIS_INDEX:
            raise ValueError(f"unknown axis {a!r}")
    if not names:
        raise ValueError("axis subset must not be empty")
    if len(set(names)) != len(names):
        raise ValueError("duplicate axis")
    return tuple(a for a in AXIS_ORDER if a in names)


@dataclass
class BehaviorTemplate:
    """A labeled multi-axis subsequence plus its detection threshold.

    ``data`` maps each included axis to a float32 sample array; all axes
    share length m >= MIN_TEMPLATE_SAMPLES. ``threshold`` is None until
    calibrated.
    """

    label: str
    axes: tuple[str, ...]
    data: dict[str, np.ndarray]
    threshold: float | None = None
    source: str = ""

    def __post_init__(self):
        if not self.label:
            raise ValueError("template label must be non-empty")
        self.axes = normalize_axes(self.axes)
        if set(self.data) != set(self.axes):
            raise ValueError("data keys must match the axis subset")
        self.data = {
            ax: np.ascontiguousarray(self.data[ax], dtype=np.float32)
            for ax in self.axes
        }
        lengths = {len(v) for v in self.data.values()}
        if len(lengths) != 1:
            raise ValueError("all axis sequences must share one length")
        if min(lengths) < MIN_TEMPLATE_SAMPLES:
            raise ValueError(
                f"template length {min(lengths)} < {MIN_TEMPLATE_SAMPLES}"
            )
        if self.threshold is not None and not (self.threshold >= 0):
            raise ValueError("threshold must be >= 0 when set")

    @property
    def m(self) -> int:
        return len(next(iter(self.data.values())))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BehaviorTemplate):
            return NotImplemented
        return (
            self.label == other.label
            and self.axes == other.axes
            and self.threshold == other.threshold
            and self.source == other.source
            and all(np.array_equal(self.data[a], other.data[a]) for a in self.axes)
        )


@dataclass
class Dictionary:
    """Ordered behavior templates sharing one sampling rate.

    Order matters: classification iterates templates in this order, which
    keeps tie-breaking deterministic.
    """

    rate_hz: float
    templates: list[BehaviorTemplate] = field(default_factory=list)

    def __post_init__(self):
        if not (self.rate_hz > 0):
            raise ValueError("rate_hz must be > 0")

    def labels(self) -> list[str]:
        seen = []
        for t in self.templates:
            if t.label not in seen:
                seen.append(t.label)
        return seen


@dataclass(frozen=True)
class ExtractionFailure:
    """Why one annotation could not become a template."""

    annotation_index: int
    label: str
    reason: str


def extract_templates(
    segment: DaySegment,
    annotations: Sequence[AnnotationInterval],
    axes: Iterable[str] | str = DEFAULT_AXES,
    source: str | None = None,
) -> tuple[list[BehaviorTemplate], list[ExtractionFailure]]:
    """Cut one template per annotation out of the segment's blocks.

    Samples are copied verbatim at the nominal-rate index positions
    nearest the interval bounds. An annotation that does not fit inside a
    single block (it spans a dropout gap or lies outside the segment)
    fails individually; the rest proceed. Returns (templates, failures)
    with len(templates) + len(failures) == len(annotations).
    """
    axes_t = normalize_axes(axes)
    rate = segment.rate_hz
    src_base = source if source is not None else f"day_{segment.day}"
    templates: list[BehaviorTemplate] = []
    failures: list[ExtractionFailure] = []
    for i, ann in enumerate(annotations):
        placed = False
        for blk in segment.blocks:
            i0 = round((ann.start_us - blk.start_us) * rate / 1_000_000)
            i1 = round((ann.end_us - blk.start_us) * rate / 1_000_000)
            if i0 < 0 or i1 > len(blk) or i1 <= i0:
                continue
            if i1 - i0 < MIN_TEMPLATE_SAMPLES:
                failures.append(ExtractionFailure(
                    i, ann.label,
                    f"interval yields {i1 - i0} samples, need >= {MIN_TEMPLATE_SAMPLES}",
                ))
            else:
                data = {
                    ax: blk.samples[i0:i1, AXIS_INDEX[ax]].copy() for ax in axes_t
                }
                templates.append(BehaviorTemplate(
                    label=ann.label,
                    axes=axes_t,
                    data=data,
                    threshold=None,
                    source=f"{src_base}[{ann.start_us}us..{ann.end_us}us)",
                ))
            placed = True
            break
        if not placed:
            failures.append(ExtractionFailure(
                i, ann.label,
                "annotation does not fit inside a single block "
                "(spans a gap or lies outside the segment)",
            ))
    return templates, failures


def _profile_value_at_midpoint(profiles, center_us: int, m: int, rate_hz: float):
    """Profile value of the window centered on an annotated midpoint."""
    period_us = 1_000_000.0 / rate_hz
    for blk, values in profiles:
        span_us = len(blk) * period_us
        if not (blk.start_us <= center_us < blk.start_us + span_us):
            continue
        if len(values) == 0:
            continue
        i = round((center_us - blk.start_us) * rate_hz / 1_000_000 - m / 2)
        i = min(max(i, 0), len(values) - 1)
        return float(values[i])
    return None


def _f1_at_threshold(profiles, threshold: float, m: int, rate_hz: float,
                     intervals: Sequence[AnnotationInterval]) -> float:
    from .classify import detect

    period_us = 1_000_000.0 / rate_hz
    tp = 0
    total = 0
    covered: set[int] = set()
    for blk, values in profiles:
        for idx, _dist in detect(values, threshold, m):
            total += 1
            mid_us = blk.start_us + round((idx + m / 2) * period_us)
            for k, iv in enumerate(intervals):
                if iv.start_us <= mid_us < iv.end_us:
                    tp += 1
                    covered.add(k)
                    break
    precision = tp / total if total else 1.0
    recall = len(covered) / len(intervals)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def calibrate_threshold(
    template: BehaviorTemplate,
    segment: DaySegment,
    annotations: Sequence[AnnotationInterval],
) -> float:
    """Threshold maximizing detection F1 on the annotated segment.

    A detection counts as a true positive iff its midpoint falls inside a
    same-label interval. Candidate thresholds are the distance-profile
    values at the annotated-interval midpoints plus all pairwise means of
    those values; ties break toward the smaller threshold. Intervals of
    other labels are ignored entirely.
    """
    from .classify import multi_axis_profile

    same = [a for a in annotations if a.label == template.label]
    if not same:
        raise CalibrationError(
            f"no annotations with label {template.label!r} to calibrate against"
        )
    profiles = [
        (blk, multi_axis_profile(blk, template).values) for blk in segment.blocks
    ]
    m = template.m
    midvals = []
    for a in same:
        v = _profile_value_at_midpoint(
            profiles, (a.start_us + a.end_us) // 2, m, segment.rate_hz
        )
        if v is not None:
            midvals.append(v)
    if not midvals:
        raise CalibrationError(
            f"no annotated midpoint for {template.label!r} falls inside a block"
        )
    candidates = set(midvals)
    for i in range(len(midvals)):
        for j in range(i + 1, len(midvals)):
            candidates.add((midvals[i] + midvals[j]) / 2.0)
    best_f1 = -1.0
    best_th = 0.0
    for th in sorted(candidates):
        f1 = _f1_at_threshold(profiles, th, m, segment.rate_hz, same)
        if f1 > best_f1:
            best_f1 = f1
            best_th = th
    return float(best_th)


def save_dictionary(dictionary: Dictionary, path: str | Path) -> Path:
    """Single JSON document with sample data as plain number arrays."""
    doc = {
        "rate_hz": float(dictionary.rate_hz),
        "templates": [
            {
                "label": t.label,
                "axes": list(t.axes),
                "threshold": None if t.threshold is None else float(t.threshold),
                "source": t.source,
                "data": {ax: [float(v) for v in t.data[ax]] for ax in t.axes},
            }
            for t in dictionary.templates
        ],
    }
    p = Path(path)
    with open(p, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, separators=(",", ":"))
        f.write("\n")
    return p


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise DictionaryFormatError(f"{path}: {message}")


def load_dictionary(path: str | Path) -> Dictionary:
    """Inverse of :func:`save_dictionary`; validates every invariant.

    Schema violations name the offending field path, e.g.
    ``templates[2].data.z: length 5 != 150``.
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise DictionaryFormatError(f"{path}: not valid JSON: {e}") from None
    _require(isinstance(doc, dict), "$", "expected a JSON object")
    rate = doc.get("rate_hz")
    _require(isinstance(rate, (int, float)) and rate > 0,
             "rate_hz", "must be a positive number")
    raw_templates = doc.get("templates")
    _require(isinstance(raw_templates, list), "templates", "must be an array")
    templates = []
    for i, t in enumerate(raw_templates):
        where = f"templates[{i}]"
        _require(isinstance(t, dict), where, "expected an object")
        label = t.get("label")
        _require(isinstance(label, str) and bool(label),
                 f"{where}.label", "must be a non-empty string")
        axes = t.get("axes")
        _require(isinstance(axes, list) and axes, f"{where}.axes",
                 "must be a non-empty array")
        try:
            axes_t = normalize_axes(axes)
        except ValueError as e:
            raise DictionaryFormatError(f"{where}.axes: {e}") from None
        threshold = t.get("threshold")
        _require(threshold is None or (isinstance(threshold, (int, float))
                                       and threshold >= 0),
                 f"{where}.threshold", "must be null or a number >= 0")
        source = t.get("source", "")
        _require(isinstance(source, str), f"{where}.source", "must be a string")
        data = t.get("data")
        _require(isinstance(data, dict), f"{where}.data", "must be an object")
        _require(set(data) == set(axes_t), f"{where}.data",
                 f"keys {sorted(data)} do not match axes {sorted(axes_t)}")
        arrays = {}
        length = None
        for ax in axes_t:
            seq = data[ax]
            _require(isinstance(seq, list), f"{where}.data.{ax}", "must be an array")
            _require(all(isinstance(v, (int, float)) for v in seq),
                     f"{where}.data.{ax}", "must contain only numbers")
            if length is None:
                length = len(seq)
            else:
                _require(len(seq) == length, f"{where}.data.{ax}",
                         f"length {len(seq)} != {length}")
            arrays[ax] = np.asarray(seq, dtype=np.float32)
        _require(length is not None and length >= MIN_TEMPLATE_SAMPLES,
                 f"{where}.data", f"template length {length} < {MIN_TEMPLATE_SAMPLES}")
        templates.append(BehaviorTemplate(
            label=label,
            axes=axes_t,
            data=arrays,
            threshold=None if threshold is None else float(threshold),
            source=source,
        ))
    return Dictionary(rate_hz=float(rate), templates=templates)
