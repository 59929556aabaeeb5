from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for `naive` and test helpers

from pecktrack.slicer import Block, DaySegment


def write_csv(path: Path, lines: list[str], header: bool = False) -> Path:
    rows = []
    if header:
        rows.append("timestamp,x,y,z")
    rows.extend(lines)
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def csv_rows(start: str, n: int, period_ms: int = 10,
             xyz=(0.01, -0.98, 0.05)) -> list[str]:
    """n rows starting at `start` ("YYYY-MM-DD HH:MM:SS.fff"), fixed spacing."""
    from datetime import datetime, timedelta, timezone

    t0 = datetime.strptime(start, "%Y-%m-%d %H:%M:%S.%f").replace(
        tzinfo=timezone.utc
    )
    out = []
    for i in range(n):
        t = t0 + timedelta(milliseconds=i * period_ms)
        ts = t.strftime("%Y-%m-%d %H:%M:%S.") + f"{t.microsecond // 1000:03d}"
        out.append(f"{ts},{xyz[0]},{xyz[1]},{xyz[2]}")
    return out


def make_segment(day: int = 20191118, utc_offset_s: int = 0, rate_hz: float = 100.0,
                 blocks: list[tuple[int, np.ndarray]] | None = None,
                 partial: bool = False) -> DaySegment:
    if blocks is None:
        rng = np.random.default_rng(7)
        blocks = [(1574035200_000_000, rng.normal(0, 1, (500, 3)))]
    return DaySegment(
        day=day,
        utc_offset_s=utc_offset_s,
        rate_hz=rate_hz,
        blocks=[Block(start, np.asarray(data, np.float32)) for start, data in blocks],
        partial=partial,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20191118)
