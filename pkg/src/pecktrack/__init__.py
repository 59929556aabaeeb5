"""Out-of-core accelerometer behavior pipeline.

Stages, each usable as a library call or a CLI subcommand:

- ``ingest``: stream huge 3-axis CSV recordings in bounded-memory chunks
- ``slicer``: partition into per-calendar-day segments, persisted as
  checksummed CHKDAY01 binary files
- ``dictionary``: build labeled behavior templates from video-annotated
  intervals and calibrate detection thresholds
- ``classify``: z-normalized sliding-distance matching with non-maximum
  suppression and cross-behavior arbitration
- ``report``: per-day behavior counts and circadian histograms (JSON,
  CSV, SVG)
- ``synthkit``: deterministic synthetic recordings with planted
  behaviors, the pipeline's end-to-end oracle
"""

from .classify import Detection, classify_day, detect, distance_profile, znormalize
from .dictionary import (
    AnnotationInterval,
    BehaviorTemplate,
    Dictionary,
    calibrate_threshold,
    extract_templates,
    load_annotations,
    load_dictionary,
    save_dictionary,
)
from .ingest import (
    IssueKind,
    ParseIssue,
    RecordStream,
    SampleRecord,
    next_chunk,
    open_stream,
    parse_line,
)
from .report import behavior_counts, circadian_histogram, emit
from .slicer import (
    Block,
    DaySegment,
    day_key,
    partition,
    read_day_file,
    write_day_file,
)
from .synthkit import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "AnnotationInterval",
    "BehaviorTemplate",
    "Block",
    "DaySegment",
    "Detection",
    "Dictionary",
    "IssueKind",
    "ParseIssue",
    "RecordStream",
    "SampleRecord",
    "SynthSpec",
    "behavior_counts",
    "calibrate_threshold",
    "circadian_histogram",
    "classify_day",
    "day_key",
    "detect",
    "distance_profile",
    "emit",
    "extract_templates",
    "generate",
    "load_annotations",
    "load_dictionary",
    "next_chunk",
    "open_stream",
    "parse_line",
    "partition",
    "read_day_file",
    "save_dictionary",
    "write_day_file",
    "znormalize",
]
