"""Per-file diarization: speech regions -> windows -> pairs -> graph -> AHC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .audio import AudioSignal, energy_vad, slide_segments
from .cluster import ahc_cluster, build_similarity_matrix, segments_to_hypothesis
from .core import Config, Diarization, TimeInterval, make_rng, merge_intervals
from .features import (
    AVPairFeatures,
    SpectrogramStatExtractor,
    SyntheticCorpus,
    SyntheticExtractor,
    SyntheticVideo,
    apply_missing_augmentation,
)
from .fusion import FaceScorer
from .relation import RelationModel
from .scoring import DerBreakdown, aggregate, compute_der

SWEEP_RATES = tuple(round(0.1 * k, 1) for k in range(11))


def oracle_speech(reference: Diarization) -> list[TimeInterval]:
    """Speech regions taken from reference labels, speaker identity discarded."""
    return merge_intervals(iv for iv, _ in reference.segments)


def windows_for(regions: Sequence[TimeInterval], cfg: Config) -> list[TimeInterval]:
    return [win for region in regions for win in slide_segments(region, cfg)]


def drop_faces(pairs: Sequence[AVPairFeatures], rate: float,
               rng: np.random.Generator) -> list[AVPairFeatures]:
    """Evaluation-time missing faces: one independent draw per window.

    Windows cut from the same stored pair share the dropped copy, so the
    similarity graph still scores each distinct input once.
    """
    dropped: dict[int, AVPairFeatures] = {}
    out = []
    for pair in pairs:
        aug = apply_missing_augmentation(pair, rate, rng)
        if aug is not pair:
            aug = dropped.setdefault(id(pair), aug)
        out.append(aug)
    return out


@dataclass
class VideoResult:
    hypothesis: Diarization
    windows: list[TimeInterval]
    pairs: list[AVPairFeatures]
    similarity: np.ndarray
    labels: list[int] = field(default_factory=list)


def synthetic_pairs(video: SyntheticVideo, cfg: Config, missing_rate: float = 0.0,
                    seed: int = 0) -> tuple[list[TimeInterval], list[AVPairFeatures]]:
    windows = windows_for(oracle_speech(video.reference), cfg)
    extractor = SyntheticExtractor(video)
    pairs = [extractor.extract(win) for win in windows]
    if missing_rate > 0:
        pairs = drop_faces(pairs, missing_rate, make_rng(seed, "missing", video.video_id))
    return windows, pairs


def diarize_pairs(windows, pairs, model: RelationModel, threshold: float, cfg: Config,
                  file_id: str, face_scorer: FaceScorer | None = None,
                  alpha: float = 0.5) -> VideoResult:
    if not pairs:
        return VideoResult(Diarization(file_id), [], [], np.zeros((0, 0)))
    S = build_similarity_matrix(pairs, model, face_scorer, alpha)
    labels = ahc_cluster(S, threshold, cfg.linkage)
    hyp = segments_to_hypothesis(windows, labels, file_id)
    return VideoResult(hyp, list(windows), list(pairs), S, labels)


def diarize_video(video: SyntheticVideo, model: RelationModel, threshold: float, cfg: Config,
                  missing_rate: float = 0.0, seed: int = 0,
                  face_scorer: FaceScorer | None = None, alpha: float = 0.5) -> VideoResult:
    windows, pairs = synthetic_pairs(video, cfg, missing_rate, seed)
    return diarize_pairs(windows, pairs, model, threshold, cfg, video.video_id,
                         face_scorer, alpha)


def diarize_audio(signal: AudioSignal, file_id: str, model: RelationModel, threshold: float,
                  cfg: Config, reference: Diarization | None = None) -> VideoResult:
    """Audio-only diarization of a WAV; oracle speech when ``reference`` is given."""
    regions = oracle_speech(reference) if reference is not None else energy_vad(signal, cfg)
    regions = [r for r in regions if r.offset <= signal.duration + 1e-6]
    windows = windows_for(regions, cfg)
    extractor = SpectrogramStatExtractor(cfg)
    pairs = [extractor.extract(win, signal, None, video_id=file_id) for win in windows]
    return diarize_pairs(windows, pairs, model, threshold, cfg, file_id)


def evaluate_corpus(corpus: SyntheticCorpus, model: RelationModel, threshold: float,
                    cfg: Config, missing_rate: float = 0.0, seed: int = 0,
                    face_scorer: FaceScorer | None = None,
                    alpha: float = 0.5) -> tuple[dict[str, DerBreakdown], dict[str, Diarization]]:
    scores, hyps = {}, {}
    for video in corpus.videos:
        result = diarize_video(video, model, threshold, cfg, missing_rate, seed,
                               face_scorer, alpha)
        hyps[video.video_id] = result.hypothesis
        scores[video.video_id] = compute_der(video.reference, result.hypothesis, cfg.collar_s)
    return scores, hyps


def threshold_search(corpus: SyntheticCorpus, model: RelationModel, cfg: Config) -> list[float]:
    """Corpus DER (%) for every threshold in the grid, graphs built once per video."""
    per_threshold: list[list[DerBreakdown]] = [[] for _ in cfg.threshold_grid]
    for video in corpus.videos:
        windows, pairs = synthetic_pairs(video, cfg)
        S = build_similarity_matrix(pairs, model)
        for k, thr in enumerate(cfg.threshold_grid):
            hyp = segments_to_hypothesis(windows, ahc_cluster(S, thr, cfg.linkage), video.video_id)
            per_threshold[k].append(compute_der(video.reference, hyp, cfg.collar_s))
    return [aggregate(b).der_pct for b in per_threshold]


@dataclass
class SweepResult:
    rows: list[tuple[float, float, float, float, float]]

    @property
    def average(self) -> tuple[float, float, float, float]:
        arr = np.array([r[1:] for r in self.rows])
        return tuple(float(v) for v in arr.mean(axis=0))

    def to_csv(self) -> str:
        lines = ["missing_rate,ms_pct,fa_pct,spke_pct,der_pct"]
        lines += [f"{r[0]:.1f},{r[1]:.4f},{r[2]:.4f},{r[3]:.4f},{r[4]:.4f}" for r in self.rows]
        avg = self.average
        lines.append(f"average,{avg[0]:.4f},{avg[1]:.4f},{avg[2]:.4f},{avg[3]:.4f}")
        return "\n".join(lines) + "\n"


def missing_rate_sweep(corpus: SyntheticCorpus, model: RelationModel, threshold: float,
                       cfg: Config, rates: Sequence[float] = SWEEP_RATES,
                       seed: int = 0) -> SweepResult:
    rows = []
    for rate in sorted(rates):
        per_file, _ = evaluate_corpus(corpus, model, threshold, cfg, rate, seed)
        b = aggregate(per_file.values())
        rows.append((float(rate), b.ms_pct, b.fa_pct, b.spke_pct, b.der_pct))
    return SweepResult(rows)
