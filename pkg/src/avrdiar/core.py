"""Domain types, RTTM I/O, configuration and seeding."""

from __future__ import annotations

import dataclasses
import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EPS = 1e-6

LINKAGES = ("average", "single", "complete")


@dataclass(frozen=True, order=True)
class TimeInterval:
    onset: float
    offset: float

    def __post_init__(self):
        if not (math.isfinite(self.onset) and math.isfinite(self.offset)):
            raise ValueError(f"non-finite interval [{self.onset}, {self.offset}]")
        if self.onset < 0:
            raise ValueError(f"negative onset {self.onset}")
        if self.offset <= self.onset:
            raise ValueError(f"offset {self.offset} <= onset {self.onset}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset

    def overlap(self, other: "TimeInterval") -> float:
        return max(0.0, min(self.offset, other.offset) - max(self.onset, other.onset))

    def contains(self, other: "TimeInterval") -> bool:
        return self.onset - EPS <= other.onset and other.offset <= self.offset + EPS


@dataclass(frozen=True)
class RttmRecord:
    file_id: str
    channel: int
    interval: TimeInterval
    speaker: str

    def __post_init__(self):
        if not self.speaker or any(c.isspace() for c in self.speaker):
            raise ValueError(f"invalid speaker label {self.speaker!r}")
        if not self.file_id or any(c.isspace() for c in self.file_id):
            raise ValueError(f"invalid file id {self.file_id!r}")


@dataclass(frozen=True)
class Diarization:
    """Speaker-labelled segments of one file, sorted by onset."""

    file_id: str
    segments: tuple[tuple[TimeInterval, str], ...] = ()

    @property
    def speakers(self) -> list[str]:
        return sorted({label for _, label in self.segments})

    def speaker_intervals(self) -> dict[str, list[TimeInterval]]:
        out: dict[str, list[TimeInterval]] = {}
        for interval, label in self.segments:
            out.setdefault(label, []).append(interval)
        return out

    def total_speech(self) -> float:
        return sum(iv.duration for iv, _ in self.segments)

    def to_records(self, channel: int = 1) -> list[RttmRecord]:
        return [RttmRecord(self.file_id, channel, iv, label) for iv, label in self.segments]


class RttmParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def parse_rttm(text: str, skipped: Counter | None = None) -> list[RttmRecord]:
    """Parse SPEAKER lines of an RTTM document.

    Other record types are skipped; pass a ``Counter`` as ``skipped`` to
    collect how many of each type were ignored.
    """
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(";"):
            continue
        fields = stripped.split()
        if fields[0] != "SPEAKER":
            if skipped is not None:
                skipped[fields[0]] += 1
            logger.warning("line %d: skipping %s record", lineno, fields[0])
            continue
        if len(fields) != 10:
            raise RttmParseError(lineno, f"expected 10 fields, got {len(fields)}")
        try:
            channel = int(fields[2])
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError as exc:
            raise RttmParseError(lineno, str(exc)) from None
        if not (math.isfinite(onset) and math.isfinite(duration)):
            raise RttmParseError(lineno, "non-finite time")
        if duration < 0:
            raise RttmParseError(lineno, f"negative duration {duration}")
        try:
            interval = TimeInterval(onset, round(onset + duration, 9))
            records.append(RttmRecord(fields[1], channel, interval, fields[7]))
        except ValueError as exc:
            raise RttmParseError(lineno, str(exc)) from None
    return records


def serialize_rttm(records: Iterable[RttmRecord]) -> str:
    lines = []
    for r in records:
        iv = r.interval
        lines.append(
            f"SPEAKER {r.file_id} {r.channel} {iv.onset:.3f} {iv.offset - iv.onset:.3f} "
            f"<NA> <NA> {r.speaker} <NA> <NA>\n"
        )
    return "".join(lines)


def merge_intervals(intervals: Iterable[TimeInterval]) -> list[TimeInterval]:
    """Union of intervals; abutting ones (within EPS) are joined."""
    merged: list[TimeInterval] = []
    for iv in sorted(intervals):
        if merged and iv.onset <= merged[-1].offset + EPS:
            last = merged[-1]
            if iv.offset > last.offset:
                merged[-1] = TimeInterval(last.onset, iv.offset)
        else:
            merged.append(iv)
    return merged


def normalize_diarization(records: Sequence[RttmRecord], file_id: str | None = None) -> Diarization:
    ids = {r.file_id for r in records}
    if file_id is not None:
        ids.add(file_id)
    if len(ids) > 1:
        raise ValueError(f"records span several files: {sorted(ids)}")
    if not ids:
        raise ValueError("file_id required for an empty record list")
    by_speaker: dict[str, list[TimeInterval]] = {}
    for r in records:
        by_speaker.setdefault(r.speaker, []).append(r.interval)
    segments = [
        (iv, label) for label, ivs in by_speaker.items() for iv in merge_intervals(ivs)
    ]
    segments.sort(key=lambda s: (s[0].onset, s[0].offset, s[1]))
    return Diarization(ids.pop(), tuple(segments))


def group_records(records: Iterable[RttmRecord]) -> dict[str, Diarization]:
    """Split a multi-file record list into one normalized Diarization per file."""
    by_file: dict[str, list[RttmRecord]] = {}
    for r in records:
        by_file.setdefault(r.file_id, []).append(r)
    return {fid: normalize_diarization(recs) for fid, recs in sorted(by_file.items())}


def _default_grid() -> tuple[float, ...]:
    return tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class Config:
    sample_rate: int = 16000
    window_s: float = 2.0
    stride_s: float = 0.5
    spec_hop_ms: float = 10.0
    spec_win_ms: float = 25.0
    missing_prob: float = 0.5
    lr: float = 5e-4
    iterations: int = 2000
    batch_size: int = 32
    eval_every: int = 500
    collar_s: float = 0.25
    c_audio: int = 16
    c_face: int = 16
    h: int = 4
    w: int = 4
    audio_h: int = 8
    audio_w: int = 8
    linkage: str = "average"
    threshold_grid: tuple[float, ...] = field(default_factory=_default_grid)
    seed: int = 0
    vad_percentile: float = 30.0
    vad_offset_db: float = 6.0
    vad_floor_db: float = -60.0
    vad_median: int = 5
    vad_min_s: float = 0.1
    vad_bridge_s: float = 0.2

    def __post_init__(self):
        if not self.window_s > self.stride_s > 0:
            raise ValueError("window_s/stride_s: need window_s > stride_s > 0")
        if not 0.0 <= self.missing_prob <= 1.0:
            raise ValueError(f"missing_prob: {self.missing_prob} not in [0, 1]")
        if self.collar_s < 0:
            raise ValueError(f"collar_s: {self.collar_s} < 0")
        grid = tuple(self.threshold_grid)
        if not grid or list(grid) != sorted(grid) or grid[0] < 0 or grid[-1] > 1:
            raise ValueError("threshold_grid: must be non-empty, ascending, within [0, 1]")
        object.__setattr__(self, "threshold_grid", grid)
        if self.linkage not in LINKAGES:
            raise ValueError(f"linkage: {self.linkage!r} not in {LINKAGES}")
        for name in ("sample_rate", "iterations", "batch_size", "eval_every", "c_audio",
                     "c_face", "h", "w", "audio_h", "audio_w", "vad_median"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name}: must be positive")
        if self.audio_h < self.h or self.audio_w < self.w:
            raise ValueError("audio_h/audio_w: audio maps must be at least as large as face maps")
        if self.lr <= 0:
            raise ValueError("lr: must be positive")
        if self.spec_hop_ms <= 0 or self.spec_win_ms <= 0:
            raise ValueError("spec_hop_ms/spec_win_ms: must be positive")

    @property
    def relation_dim(self) -> int:
        return (self.c_face + self.c_audio) * 2

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, ftype, raw: str):
    if name == "threshold_grid":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    return raw


def load_config(text: str) -> Config:
    """Read ``key=value`` lines ('#' comments allowed) over the defaults."""
    fields = {f.name: f.type for f in dataclasses.fields(Config)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"{key}: unknown config key")
        try:
            values[key] = _coerce(key, fields[key], raw)
        except ValueError:
            raise ValueError(f"{key}: cannot parse {raw!r}") from None
    return Config(**values)


def dump_config(cfg: Config) -> str:
    lines = []
    for f in dataclasses.fields(Config):
        value = getattr(cfg, f.name)
        if f.name == "threshold_grid":
            value = ",".join(repr(v) for v in value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Independent generator for ``seed`` and a path of stream keys."""
    entropy = [int(seed)]
    for key in keys:
        entropy.append(zlib.crc32(key.encode()) if isinstance(key, str) else int(key))
    return np.random.default_rng(np.random.SeedSequence(entropy))
