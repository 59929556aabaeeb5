"""Template matching over day segments.

Each behavior template slides over a block's samples producing a
z-normalized Euclidean distance profile per axis; axis profiles are
averaged, sub-threshold minima become detections via greedy non-maximum
suppression, and cross-behavior conflicts are resolved by the
distance/threshold ratio (the dimensionless confidence that makes
different template lengths comparable).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dictionary import AXIS_INDEX, BehaviorTemplate, Dictionary
from .slicer import Block, DaySegment

#: Windows with population std below this are treated as motionless and
#: z-normalize to the zero vector.
ZNORM_STD_EPS = 1e-8

#: Distances at or below the self-match noise floor collapse to exactly 0,
#: so that identical shapes match at threshold 0 on any code path.
DISTANCE_FLOOR = 1e-9

#: FFT results this close to zero are recomputed with the exact windowed
#: formula; convolution cancellation noise sits around 1e-8..1e-5.
_RECHECK_BELOW = 1e-4

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass
class DistanceProfile:
    """Combined sliding distances of one template over one block."""

    values: np.ndarray
    block_index: int
    template_label: str


@dataclass(frozen=True)
class Detection:
    """One classified behavior occurrence."""

    label: str
    start_us: int
    samples: int
    distance: float
    ratio: float


def znormalize(window: Sequence[float] | np.ndarray) -> np.ndarray:
    """Rescale to population mean 0 and std 1; flat windows become zeros."""
    w = np.asarray(window, dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty window")
    std = w.std()
    if std < ZNORM_STD_EPS:
        return np.zeros_like(w)
    return (w - w.mean()) / std


def distance_profile(series: np.ndarray, query: np.ndarray) -> np.ndarray:
    """z-normalized Euclidean distance of ``query`` against every window.

    ``values[i]`` is the distance between znormalize(series[i:i+m]) and
    znormalize(query) for i in [0, n-m]. Uses an FFT dot-product plus
    rolling statistics; matches the naive definition within 1e-6 relative
    error. A series shorter than the query yields an empty profile.
    """
    q = np.asarray(query, dtype=np.float64)
    s = np.asarray(series, dtype=np.float64)
    m = len(q)
    n = len(s)
    if m < 2:
        raise ValueError("query must have at least 2 samples")
    if n < m:
        return np.empty(0, dtype=np.float64)

    from scipy.signal import oaconvolve  # deferred: keeps slicing scipy-free

    qz = znormalize(q)
    q_flat = not qz.any()

    # rolling mean / var via cumulative sums; differences of neighboring
    # cumsum entries share prefix rounding, so non-degenerate windows keep
    # ~1e-12 relative precision
    c1 = np.empty(n + 1)
    c1[0] = 0.0
    np.cumsum(s, out=c1[1:])
    c2 = np.empty(n + 1)
    c2[0] = 0.0
    np.cumsum(s * s, out=c2[1:])
    mu = (c1[m:] - c1[:-m]) / m
    var = (c2[m:] - c2[:-m]) / m - mu * mu
    np.maximum(var, 0.0, out=var)
    # the cumsum estimate cannot resolve variance below its own rounding
    # noise, so the flat cutoff widens with the series' energy; exactly
    # constant windows always land under it
    eps = float(np.finfo(np.float64).eps)
    var_floor = max(ZNORM_STD_EPS ** 2, eps * (4.0 * float(c2[-1]) / m + 1024.0))
    w_flat = var <= var_floor
    sigma = np.sqrt(var)

    out = np.empty(n - m + 1)
    if q_flat:
        # zero-vector query: distance is ||z-normalized window|| = sqrt(m)
        out.fill(np.sqrt(m))
        out[w_flat] = 0.0
    else:
        # qz is zero-mean, so dot(window, qz) == dot(window - mu, qz)
        dots = oaconvolve(s, qz[::-1], mode="valid")
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = 2.0 * m - 2.0 * (dots / sigma)
        np.maximum(d2, 0.0, out=d2)
        np.sqrt(d2, out=out)
        out[w_flat] = np.sqrt(m)
        # near-zero values sit inside the convolution's cancellation noise;
        # recompute those few exactly so self-matches are true zeros
        for i in np.flatnonzero(out < _RECHECK_BELOW):
            if not w_flat[i]:
                wz = znormalize(s[i : i + m])
                out[i] = np.sqrt(np.sum((wz - qz) ** 2))
    out[out < DISTANCE_FLOOR] = 0.0
    return out


def multi_axis_profile(block: Block, template: BehaviorTemplate) -> DistanceProfile:
    """Mean of the per-axis distance profiles over the template's axes."""
    per_axis = [
        distance_profile(block.samples[:, AXIS_INDEX[ax]], template.data[ax])
        for ax in template.axes
    ]
    combined = per_axis[0]
    for p in per_axis[1:]:
        combined = combined + p
    combined /= len(per_axis)
    return DistanceProfile(combined, block_index=-1, template_label=template.label)


def detect(profile: np.ndarray | DistanceProfile, threshold: float, m: int
           ) -> list[tuple[int, float]]:
    """Greedy non-maximum suppression over a distance profile.

    Repeatedly takes the global minimum value <= threshold (ties toward
    the smaller index), emits it, and invalidates m//2 positions on each
    side. Returns (index, distance) pairs sorted by index; accepted
    indices are pairwise >= m//2 + 1 apart.
    """
    if threshold is None:
        raise ValueError("threshold is not set")
    values = profile.values if isinstance(profile, DistanceProfile) else profile
    if len(values) == 0:
        return []
    work = np.array(values, dtype=np.float64, copy=True)
    excl = m // 2
    hits: list[tuple[int, float]] = []
    while True:
        i = int(np.argmin(work))
        v = work[i]
        if not (v <= threshold):
            break
        hits.append((i, float(values[i])))
        work[max(0, i - excl) : i + excl + 1] = np.inf
    hits.sort(key=lambda h: h[0])
    return hits


def _candidates_for_pair(block: Block, template: BehaviorTemplate,
                         template_index: int, rate_hz: float):
    prof = multi_axis_profile(block, template)
    m = template.m
    period_us = 1_000_000.0 / rate_hz
    cands = []
    for idx, dist in detect(prof.values, template.threshold, m):
        start_us = block.start_us + round(idx * period_us)
        ratio = 0.0 if dist == 0.0 else dist / template.threshold
        cands.append((ratio, start_us, template_index, m, dist))
    return cands


def classify_day(segment: DaySegment, dictionary: Dictionary, jobs: int = 1
                 ) -> list[Detection]:
    """Match every template against every block and arbitrate overlaps.

    Candidates are processed in ascending (ratio, start, dictionary order);
    a candidate is dropped when its span overlaps an already accepted
    detection of any label by more than 50% of the shorter span. Pure
    function of its inputs: worker count never changes the result.
    """
    if float(dictionary.rate_hz) != float(segment.rate_hz):
        raise ValueError(
            f"rate mismatch: dictionary {dictionary.rate_hz} Hz, "
            f"segment {segment.rate_hz} Hz"
        )
    for i, t in enumerate(dictionary.templates):
        if t.threshold is None:
            raise ValueError(f"template {i} ({t.label}) has no threshold")

    pairs = [
        (block, template, ti)
        for block in segment.blocks
        for ti, template in enumerate(dictionary.templates)
    ]
    rate = segment.rate_hz
    if jobs > 1 and len(pairs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_pair = list(
                pool.map(
                    lambda p: _candidates_for_pair(p[0], p[1], p[2], rate), pairs
                )
            )
    else:
        per_pair = [_candidates_for_pair(b, t, ti, rate) for b, t, ti in pairs]

    candidates = [c for chunk in per_pair for c in chunk]
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))

    period_us = 1_000_000.0 / rate
    accepted: list[tuple[float, int, int, int, float]] = []
    for cand in candidates:
        _, start, _, m, _ = cand
        end = start + m * period_us
        ok = True
        for acc in accepted:
            a_start, a_m = acc[1], acc[3]
            a_end = a_start + a_m * period_us
            overlap = min(end, a_end) - max(start, a_start)
            if overlap > 0.5 * min(m, a_m) * period_us:
                ok = False
                break
        if ok:
            accepted.append(cand)

    labels = [t.label for t in dictionary.templates]
    out = [
        Detection(labels[ti], start, m, dist, ratio)
        for ratio, start, ti, m, dist in accepted
    ]
    out.sort(key=lambda d: (d.start_us, d.label, d.samples))
    return out


def format_rfc3339_us(t_us: int) -> str:
    """UTC instant with microsecond precision, e.g. 2019-11-18T12:00:00.500000Z."""
    dt = _EPOCH + timedelta(microseconds=t_us)
    return f"{dt:%Y-%m-%dT%H:%M:%S}.{t_us % 1_000_000:06d}Z"


def detection_to_json(det: Detection) -> str:
    return json.dumps(
        {
            "label": det.label,
            "start": format_rfc3339_us(det.start_us),
            "samples": det.samples,
            "distance": det.distance,
            "ratio": det.ratio,
        },
        separators=(",", ":"),
    )


def save_detections(detections: Iterable[Detection], path: str | Path) -> Path:
    """Line-delimited JSON, one detection per line, sorted by start."""
    dets = sorted(detections, key=lambda d: (d.start_us, d.label, d.samples))
    p = Path(path)
    with open(p, "w", encoding="utf-8", newline="\n") as f:
        for d in dets:
            f.write(detection_to_json(d))
            f.write("\n")
    return p


def load_detections(path: str | Path) -> list[Detection]:
    from .dictionary import parse_rfc3339_us  # shared timestamp grammar

    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                det = Detection(
                    label=str(obj["label"]),
                    start_us=parse_rfc3339_us(obj["start"]),
                    samples=int(obj["samples"]),
                    distance=float(obj["distance"]),
                    ratio=float(obj["ratio"]),
                )
            except (KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}: line {line_no}: {e}") from None
            out.append(det)
    return out
