"""Diarization error rate with optimal speaker mapping and reference collars.

Two independent implementations live here: an event-based scorer that walks
the boundaries of both diarizations and solves the mapping as an assignment
problem, and a discretized oracle that ticks through time and enumerates
every mapping.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import EPS, Diarization


class NothingToScoreError(ValueError):
    pass


@dataclass(frozen=True)
class DerBreakdown:
    missed_s: float
    fa_s: float
    spke_s: float
    scored_speech_s: float

    def _pct(self, value: float) -> float:
        return 100.0 * value / self.scored_speech_s

    @property
    def ms_pct(self) -> float:
        return self._pct(self.missed_s)

    @property
    def fa_pct(self) -> float:
        return self._pct(self.fa_s)

    @property
    def spke_pct(self) -> float:
        return self._pct(self.spke_s)

    @property
    def der_pct(self) -> float:
        return self.ms_pct + self.fa_pct + self.spke_pct

    def __add__(self, other: "DerBreakdown") -> "DerBreakdown":
        return DerBreakdown(self.missed_s + other.missed_s, self.fa_s + other.fa_s,
                            self.spke_s + other.spke_s,
                            self.scored_speech_s + other.scored_speech_s)


def _check_pair(ref: Diarization, hyp: Diarization) -> None:
    if ref.file_id != hyp.file_id:
        raise ValueError(f"file ids differ: {ref.file_id} vs {hyp.file_id}")


def _collar_zones(ref: Diarization, collar: float) -> list[tuple[float, float]]:
    if collar <= 0:
        return []
    zones = []
    for iv, _ in ref.segments:
        for b in (iv.onset, iv.offset):
            zones.append((b - collar, b + collar))
    return zones


def _regions(ref: Diarization, hyp: Diarization, collar: float):
    """Yield (length, ref speakers, hyp speakers) for every scored elementary region."""
    zones = _collar_zones(ref, collar)
    points = {t for d in (ref, hyp) for iv, _ in d.segments for t in (iv.onset, iv.offset)}
    points.update(t for z in zones for t in z)
    points = sorted(points)
    for lo, hi in zip(points, points[1:]):
        if hi - lo <= 0:
            continue
        mid = 0.5 * (lo + hi)
        if any(a < mid < b for a, b in zones):
            continue
        r = frozenset(lab for iv, lab in ref.segments if iv.onset < mid < iv.offset)
        h = frozenset(lab for iv, lab in hyp.segments if iv.onset < mid < iv.offset)
        if r or h:
            yield hi - lo, r, h


def _overlap_matrix(ref: Diarization, hyp: Diarization, collar: float):
    ref_labels, hyp_labels = ref.speakers, hyp.speakers
    ri = {lab: k for k, lab in enumerate(ref_labels)}
    hi = {lab: k for k, lab in enumerate(hyp_labels)}
    overlap = np.zeros((len(hyp_labels), len(ref_labels)))
    for length, r, h in _regions(ref, hyp, collar):
        for hl in h:
            for rl in r:
                overlap[hi[hl], ri[rl]] += length
    return hyp_labels, ref_labels, overlap


def map_speakers(ref: Diarization, hyp: Diarization, collar_s: float = 0.0) -> dict[str, str]:
    """One-to-one hyp -> ref mapping maximizing total co-active time.

    Ties favour earlier (lexicographically smaller) labels. Hypothesis
    speakers with no overlap against their assigned partner stay unmapped.
    """
    _check_pair(ref, hyp)
    hyp_labels, ref_labels, overlap = _overlap_matrix(ref, hyp, collar_s)
    if overlap.size == 0:
        return {}
    nh, nr = overlap.shape
    # Sub-epsilon preference so that equal overlaps resolve deterministically.
    rank = (np.arange(nh)[:, None] * nr + np.arange(nr)[None, :]) / (nh * nr)
    rows, cols = linear_sum_assignment(-(overlap - EPS * 1e-3 * rank))
    return {hyp_labels[r]: ref_labels[c] for r, c in zip(rows, cols) if overlap[r, c] > EPS}


def compute_der(ref: Diarization, hyp: Diarization, collar_s: float = 0.25,
                score_overlap: bool = True) -> DerBreakdown:
    _check_pair(ref, hyp)
    if collar_s < 0:
        raise ValueError("collar must be non-negative")
    mapping = map_speakers(ref, hyp, collar_s)
    missed = fa = spke = scored = 0.0
    for length, r, h in _regions(ref, hyp, collar_s):
        if not score_overlap and len(r) > 1:
            continue
        matched = sum(1 for hl in h if mapping.get(hl) in r)
        missed += max(0, len(r) - len(h)) * length
        fa += max(0, len(h) - len(r)) * length
        spke += (min(len(r), len(h)) - matched) * length
        scored += len(r) * length
    if scored <= EPS:
        raise NothingToScoreError("nothing to score: no reference speech outside the collars")
    return DerBreakdown(missed, fa, spke, scored)


def brute_force_der(ref: Diarization, hyp: Diarization, collar_s: float = 0.25,
                    resolution_s: float = 0.001, max_speakers: int = 8) -> DerBreakdown:
    """Tick-by-tick DER with exhaustive mapping search; a verification oracle."""
    _check_pair(ref, hyp)
    ref_labels, hyp_labels = ref.speakers, hyp.speakers
    if max(len(ref_labels), len(hyp_labels)) > max_speakers:
        raise ValueError(f"more than {max_speakers} speakers; enumeration would explode")
    end = max([iv.offset for d in (ref, hyp) for iv, _ in d.segments] + [0.0])
    n = int(np.ceil(end / resolution_s)) + 1
    if n > 600 / resolution_s + 1:
        raise ValueError("oracle limited to 600 s of audio")
    t = (np.arange(n) + 0.5) * resolution_s

    def activity(d: Diarization, labels):
        act = np.zeros((len(labels), n), dtype=bool)
        for iv, lab in d.segments:
            act[labels.index(lab)] |= (t > iv.onset) & (t < iv.offset)
        return act

    R = activity(ref, ref_labels)
    H = activity(hyp, hyp_labels)
    keep = np.ones(n, dtype=bool)
    if collar_s > 0:
        for iv, _ in ref.segments:
            for b in (iv.onset, iv.offset):
                keep &= ~((t > b - collar_s) & (t < b + collar_s))
    R, H = R[:, keep], H[:, keep]
    nr, nh = R.sum(axis=0), H.sum(axis=0)

    co = H.astype(np.int64) @ R.T.astype(np.int64)  # (hyp, ref) co-active ticks
    best_total, best_map = -1, ()
    ref_slots = list(range(len(ref_labels))) + [None] * max(0, len(hyp_labels) - len(ref_labels))
    for perm in itertools.permutations(ref_slots, len(hyp_labels)):
        total = sum(co[h, r] for h, r in enumerate(perm) if r is not None)
        if total > best_total:
            best_total, best_map = total, perm

    matched = np.zeros(R.shape[1], dtype=np.int64)
    for h, r in enumerate(best_map):
        if r is not None:
            matched += H[h] & R[r]
    res = resolution_s
    missed = np.maximum(0, nr - nh).sum() * res
    fa = np.maximum(0, nh - nr).sum() * res
    spke = (np.minimum(nr, nh) - matched).sum() * res
    scored = nr.sum() * res
    if scored <= 0:
        raise NothingToScoreError("nothing to score: no reference speech outside the collars")
    return DerBreakdown(float(missed), float(fa), float(spke), float(scored))


def aggregate(breakdowns: Iterable[DerBreakdown]) -> DerBreakdown:
    total = DerBreakdown(0.0, 0.0, 0.0, 0.0)
    for b in breakdowns:
        total = total + b
    return total


def format_report(per_file: dict[str, DerBreakdown]) -> str:
    lines = [f"{'file':<24}{'MS%':>8}{'FA%':>8}{'SPKE%':>8}{'DER%':>8}{'scored_s':>11}"]
    for fid, b in per_file.items():
        lines.append(f"{fid:<24}{b.ms_pct:8.2f}{b.fa_pct:8.2f}{b.spke_pct:8.2f}"
                     f"{b.der_pct:8.2f}{b.scored_speech_s:11.3f}")
    if per_file:
        b = aggregate(per_file.values())
        lines.append(f"{'*** OVERALL ***':<24}{b.ms_pct:8.2f}{b.fa_pct:8.2f}{b.spke_pct:8.2f}"
                     f"{b.der_pct:8.2f}{b.scored_speech_s:11.3f}")
    return "\n".join(lines) + "\n"


def report_csv(per_file: dict[str, DerBreakdown]) -> str:
    rows = ["file,missed_s,fa_s,spke_s,scored_speech_s,ms_pct,fa_pct,spke_pct,der_pct"]
    items = list(per_file.items())
    if items:
        items.append(("OVERALL", aggregate(per_file.values())))
    for fid, b in items:
        rows.append(f"{fid},{b.missed_s:.6f},{b.fa_s:.6f},{b.spke_s:.6f},{b.scored_speech_s:.6f},"
                    f"{b.ms_pct:.4f},{b.fa_pct:.4f},{b.spke_pct:.4f},{b.der_pct:.4f}")
    return "\n".join(rows) + "\n"
