"""Deterministic synthetic recordings with planted behaviors.

Generates CSV files in the ingest format plus matching ground-truth
annotation files, so the whole pipeline can be checked end to end against
known truth. Identical (spec, seed) always produces byte-identical
output.

Randomness comes from splitmix64, a published 64-bit mixing generator
(Steele, Lea & Flood 2014; the java.util.SplittableRandom finalizer):

    x     = (seed + counter * 0x9E3779B97F4A7C15) mod 2^64
    x    ^= x >> 30;  x *= 0xBF58476D1CE4E5B9  (mod 2^64)
    x    ^= x >> 27;  x *= 0x94D049BB133111EB  (mod 2^64)
    out   = x ^ (x >> 31)

Being counter-based it vectorizes cleanly and makes every draw a pure
function of (seed, counter), independent of chunking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1

#: Stream ids keep the placement draws and the noise draws independent.
_STREAM_NOISE = 1
_STREAM_PLACE = 2

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()
US_PER_DAY = 86_400_000_000

#: Seconds kept clear between planted occurrences (and around gaps).
PLACEMENT_MARGIN_S = 1.0


class SynthSpecError(ValueError):
    pass


def splitmix64(seed: int, counters: np.ndarray) -> np.ndarray:
    """Vectorized canonical splitmix64.

    Element i is the (counters[i]+1)-th output of a splitmix64 generator
    seeded with ``seed``; with counters 0,1,2,... this reproduces the
    published sequence (seed 0 starts 0xE220A8397B1DCDAF, ...).
    """
    x = (np.uint64(seed & _MASK)
         + (counters.astype(np.uint64) + np.uint64(1)) * np.uint64(_GOLDEN))
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


def _uniforms(seed: int, stream: int, counters: np.ndarray) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of each draw.

    Streams are decorrelated by running the counter through a stream-mixed
    seed; draw (seed, stream, counter) is a pure function.
    """
    mixed_seed = (seed ^ (stream * _MIX2)) & _MASK
    bits = splitmix64(mixed_seed, counters)
    return (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def _gaussians(seed: int, stream: int, base: int, count: int) -> np.ndarray:
    """Standard normals via Box-Muller on counter pairs [base, base+count)."""
    counters = np.arange(base, base + count, dtype=np.uint64)
    u1 = _uniforms(seed, stream, counters * np.uint64(2))
    u2 = _uniforms(seed, stream, counters * np.uint64(2) + np.uint64(1))
    u1 = np.maximum(u1, 2.0 ** -53)  # keep log() finite
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


# ---------------------------------------------------------------------------
# Waveform families
# ---------------------------------------------------------------------------
# Each takes sample times (seconds from occurrence start) and returns the
# (dx, dy, dz) deltas added to the baseline posture. Shapes are fixed, so
# every occurrence of a waveform is sample-identical.

def _spike_train(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sharp 3 Hz pulse train, mostly on Y with a weaker echo on Z."""
    centers = np.arange(1.0 / 6.0, t[-1] + 1e-9, 1.0 / 3.0) if len(t) else np.empty(0)
    width = 0.03
    y = np.zeros_like(t)
    z = np.zeros_like(t)
    for c in centers:
        pulse = np.exp(-0.5 * ((t - c) / width) ** 2)
        y += 0.8 * pulse
        z += 0.5 * np.exp(-0.5 * ((t - c - 0.04) / width) ** 2)
    return np.zeros_like(t), y, z


def _slow_sway(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smooth 1 Hz oscillation under a sin^2 envelope."""
    dur = t[-1] + (t[1] - t[0]) if len(t) > 1 else 1.0
    env = np.sin(np.pi * t / dur) ** 2
    y = 0.45 * env * np.sin(2.0 * np.pi * 1.0 * t)
    z = 0.35 * env * np.sin(2.0 * np.pi * 1.0 * t + 1.1)
    return np.zeros_like(t), y, z


def _broadband_burst(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Burst mixing incommensurate frequencies across all three axes."""
    dur = t[-1] + (t[1] - t[0]) if len(t) > 1 else 1.0
    env = np.sin(np.pi * t / dur) ** 2
    x = 0.15 * env * np.sin(2.0 * np.pi * 4.1 * t + 0.3)
    y = env * (0.35 * np.sin(2.0 * np.pi * 2.7 * t)
               + 0.25 * np.sin(2.0 * np.pi * 5.3 * t + 0.7)
               + 0.20 * np.sin(2.0 * np.pi * 8.9 * t + 2.1))
    z = env * (0.30 * np.sin(2.0 * np.pi * 3.4 * t + 1.9)
               + 0.22 * np.sin(2.0 * np.pi * 7.1 * t + 0.4))
    return x, y, z


@dataclass(frozen=True)
class Waveform:
    name: str
    duration_s: float
    fn: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


WAVEFORMS: dict[str, Waveform] = {
    "spike_train": Waveform("spike_train", 1.5, _spike_train),
    "slow_sway": Waveform("slow_sway", 3.0, _slow_sway),
    "broadband_burst": Waveform("broadband_burst", 4.0, _broadband_burst),
}


@dataclass(frozen=True)
class Plant:
    """Plant ``per_day`` occurrences of one waveform, labeled."""

    label: str
    waveform: str
    per_day: int


@dataclass
class SynthSpec:
    """Everything that defines one synthetic recording."""

    days: int
    rate_hz: float = 100.0
    baseline: tuple[float, float, float] = (0.0, -1.0, 0.0)
    noise_sigma_g: float = 0.0
    plants: Sequence[Plant] = field(default_factory=tuple)
    gaps: Sequence[tuple[float, float]] = field(default_factory=tuple)
    seed: int = 0
    start_date: str = "2019-11-18"

    def validate(self) -> None:
        if self.days < 1:
            raise SynthSpecError("days must be >= 1")
        if not (self.rate_hz > 0):
            raise SynthSpecError("rate_hz must be > 0")
        if self.noise_sigma_g < 0:
            raise SynthSpecError("noise_sigma_g must be >= 0")
        for p in self.plants:
            if not p.label:
                raise SynthSpecError("plant label must be non-empty")
            if p.waveform not in WAVEFORMS:
                raise SynthSpecError(
                    f"unknown waveform {p.waveform!r}; "
                    f"choose from {sorted(WAVEFORMS)}"
                )
            if p.per_day < 0:
                raise SynthSpecError("per_day must be >= 0")
        for g in self.gaps:
            start, dur = g
            if dur <= 0 or start < 0:
                raise SynthSpecError(f"bad gap {g}: need start >= 0, duration > 0")
        date.fromisoformat(self.start_date)  # raises on bad dates


def spec_from_json(doc: dict) -> SynthSpec:
    plants = tuple(
        Plant(str(p["label"]), str(p["waveform"]), int(p["per_day"]))
        for p in doc.get("plants", [])
    )
    gaps = tuple((float(g[0]), float(g[1])) for g in doc.get("gaps", []))
    baseline = doc.get("baseline", (0.0, -1.0, 0.0))
    spec = SynthSpec(
        days=int(doc["days"]),
        rate_hz=float(doc.get("rate_hz", 100.0)),
        baseline=(float(baseline[0]), float(baseline[1]), float(baseline[2])),
        noise_sigma_g=float(doc.get("noise_sigma_g", 0.0)),
        plants=plants,
        gaps=gaps,
        seed=int(doc.get("seed", 0)),
        start_date=str(doc.get("start_date", "2019-11-18")),
    )
    spec.validate()
    return spec


@dataclass(frozen=True)
class _Occurrence:
    label: str
    start_s: float  # seconds from recording start, snapped to the grid
    k0: int         # first sample index (global)
    k1: int         # one past the last sample index
    waveform: Waveform


def _place_occurrences(spec: SynthSpec) -> list[_Occurrence]:
    """Seeded placement with non-overlap against plants and gaps."""
    rate = spec.rate_hz
    day_s = 86400.0
    occs: list[_Occurrence] = []
    # feasibility: occupied seconds per day incl. margins must fit loosely
    for day in range(spec.days):
        need = sum(
            p.per_day * (WAVEFORMS[p.waveform].duration_s + 2 * PLACEMENT_MARGIN_S)
            for p in spec.plants
        )
        if need > 0.5 * day_s:
            raise SynthSpecError(
                f"day {day}: planted occurrences need {need:.0f}s of margin-padded "
                f"time, more than half a day; spec is infeasible"
            )
    taken: list[tuple[float, float]] = [
        (g[0] - PLACEMENT_MARGIN_S, g[0] + g[1] + PLACEMENT_MARGIN_S)
        for g in spec.gaps
    ]
    counter = 0
    for day in range(spec.days):
        day_base = day * day_s
        for p in spec.plants:
            wf = WAVEFORMS[p.waveform]
            for _ in range(p.per_day):
                placed = False
                for _attempt in range(10_000):
                    u = float(_uniforms(spec.seed, _STREAM_PLACE,
                                        np.array([counter], np.uint64))[0])
                    counter += 1
                    lo = PLACEMENT_MARGIN_S
                    hi = day_s - wf.duration_s - PLACEMENT_MARGIN_S
                    start_s = day_base + lo + u * (hi - lo)
                    k0 = round(start_s * rate)
                    start_s = k0 / rate
                    a = start_s - PLACEMENT_MARGIN_S
                    b = start_s + wf.duration_s + PLACEMENT_MARGIN_S
                    if all(b <= s or a >= e for s, e in taken):
                        m = round(wf.duration_s * rate)
                        occs.append(_Occurrence(p.label, start_s, k0, k0 + m, wf))
                        taken.append((a, b))
                        placed = True
                        break
                if not placed:
                    raise SynthSpecError(
                        f"day {day}: could not place {p.label!r} without overlap; "
                        f"spec is infeasible"
                    )
    occs.sort(key=lambda o: o.k0)
    return occs


def _second_strings() -> list[bytes]:
    out = []
    for s in range(86400):
        out.append(b"%02d:%02d:%02d" % (s // 3600, (s // 60) % 60, s % 60))
    return out


_SECOND_STRINGS: list[bytes] | None = None


def generate(spec: SynthSpec, out_csv: str | Path, out_annotations: str | Path) -> dict:
    """Write the CSV recording and its ground-truth annotation file.

    Sample k (global, from recording start) lands on the millisecond grid
    at round(k * 1000 / rate_hz) ms, so emitted timestamps are exact for
    any rate that divides 1000 Hz evenly. Rows inside gap intervals are
    omitted. Returns a summary dict (rows, bytes, annotation count).
    """
    global _SECOND_STRINGS
    spec.validate()
    rate = spec.rate_hz
    samples_per_day = round(86400 * rate)
    total_samples = spec.days * samples_per_day
    occs = _place_occurrences(spec)

    # annotations first; placement already proved feasibility
    start_day = date.fromisoformat(spec.start_date)
    t0_us = (start_day.toordinal() - _EPOCH_ORDINAL) * US_PER_DAY
    ann_path = Path(out_annotations)
    csv_path = Path(out_csv)

    def k_to_us(k: int) -> int:
        return t0_us + round(k * 1000 / rate) * 1000

    with open(ann_path, "w", encoding="utf-8", newline="\n") as f:
        for o in occs:
            f.write(json.dumps(
                {
                    "label": o.label,
                    "start": _rfc3339_ms(k_to_us(o.k0)),
                    "end": _rfc3339_ms(k_to_us(o.k1)),
                },
                separators=(",", ":"),
            ))
            f.write("\n")

    if _SECOND_STRINGS is None:
        _SECOND_STRINGS = _second_strings()
    secs = _SECOND_STRINGS

    gap_ranges = []
    for g_start, g_dur in spec.gaps:
        gap_ranges.append((g_start, g_start + g_dur))

    bx, by, bz = spec.baseline
    noisy = spec.noise_sigma_g > 0
    const_suffix = None
    if not noisy:
        const_suffix = b",%.6f,%.6f,%.6f\n" % (bx, by, bz)

    occ_idx = 0
    rows_written = 0
    bytes_written = 0
    chunk = max(int(rate * 3600), 1024)  # one hour of samples per chunk

    with open(csv_path, "wb", buffering=1 << 20) as f:
        for base in range(0, total_samples, chunk):
            count = min(chunk, total_samples - base)
            k = np.arange(base, base + count, dtype=np.int64)
            t_ms = np.round(k * (1000.0 / rate)).astype(np.int64)

            # waveform deltas for occurrences intersecting this chunk
            dx = dy = dz = None
            while occ_idx < len(occs) and occs[occ_idx].k0 < base + count:
                o = occs[occ_idx]
                if o.k1 <= base:
                    occ_idx += 1
                    continue
                if dx is None:
                    dx = np.zeros(count)
                    dy = np.zeros(count)
                    dz = np.zeros(count)
                rel = np.arange(o.k1 - o.k0) / rate
                wx, wy, wz = o.waveform.fn(rel)
                a = max(o.k0 - base, 0)
                b = min(o.k1 - base, count)
                ra = a - (o.k0 - base)
                dx[a:b] += wx[ra : ra + (b - a)]
                dy[a:b] += wy[ra : ra + (b - a)]
                dz[a:b] += wz[ra : ra + (b - a)]
                if o.k1 <= base + count:
                    occ_idx += 1
                else:
                    break

            keep = None
            if gap_ranges:
                t_s = t_ms / 1000.0
                keep = np.ones(count, dtype=bool)
                for gs, ge in gap_ranges:
                    keep &= ~((t_s >= gs) & (t_s < ge))

            if noisy:
                sigma = spec.noise_sigma_g
                nx = _gaussians(spec.seed, _STREAM_NOISE, base, count) * sigma
                ny = _gaussians(spec.seed, _STREAM_NOISE, base + total_samples,
                                count) * sigma
                nz = _gaussians(spec.seed, _STREAM_NOISE,
                                base + total_samples * 2, count) * sigma
                vx = bx + nx if dx is None else bx + nx + dx
                vy = by + ny if dy is None else by + ny + dy
                vz = bz + nz if dz is None else bz + nz + dz
            elif dx is not None:
                vx = bx + dx
                vy = by + dy
                vz = bz + dz
            else:
                vx = vy = vz = None

            out: list[bytes] = []
            day_str = None
            day_ord = None
            for i in range(count):
                if keep is not None and not keep[i]:
                    continue
                ms = t_ms[i]
                d, rem = divmod(ms, 86_400_000)
                if d != day_ord:
                    day_ord = d
                    day_str = (
                        date.fromordinal(start_day.toordinal() + int(d))
                        .isoformat().encode() + b" "
                    )
                s, msec = divmod(rem, 1000)
                ts = day_str + secs[s] + b".%03d" % msec
                if vx is None:
                    out.append(ts + const_suffix)
                else:
                    out.append(ts + b",%.6f,%.6f,%.6f\n" % (vx[i], vy[i], vz[i]))
            blob = b"".join(out)
            f.write(blob)
            rows_written += len(out)
            bytes_written += len(blob)

    return {
        "rows": rows_written,
        "csv_bytes": bytes_written,
        "annotations": len(occs),
        "days": spec.days,
        "rate_hz": rate,
        "csv": str(csv_path),
        "annotations_file": str(ann_path),
    }


def _rfc3339_ms(t_us: int) -> str:
    from .classify import format_rfc3339_us

    full = format_rfc3339_us(t_us)
    if t_us % 1000 == 0:
        # trim to millisecond precision: ...SS.mmmZ
        return full[:23] + "Z"
    return full
