"""Similarity graph construction and threshold-stopped agglomerative clustering."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import LINKAGES, Diarization, RttmRecord, TimeInterval, normalize_diarization
from .features import AVPairFeatures
from .fusion import FaceScorer, fuse_scores
from .relation import RelationModel, score_pairs


def build_similarity_matrix(pairs: Sequence[AVPairFeatures], model: RelationModel,
                            face_scorer: FaceScorer | None = None,
                            alpha: float = 0.5) -> np.ndarray:
    """Symmetric N x N scores: mean of both comparison orders, unit diagonal.

    Windows that share a pair object (several windows cut from one stored
    segment) are scored once.
    """
    n = len(pairs)
    slot: dict[int, int] = {}
    unique: list[AVPairFeatures] = []
    index = np.empty(n, dtype=np.intp)
    for i, p in enumerate(pairs):
        if id(p) not in slot:
            slot[id(p)] = len(unique)
            unique.append(p)
        index[i] = slot[id(p)]

    u = len(unique)
    rows, cols = np.divmod(np.arange(u * u), u)
    directed = score_pairs([unique[i] for i in rows], [unique[j] for j in cols], model)
    directed = directed.reshape(u, u)
    if face_scorer is not None:
        for i in range(u):
            for j in range(u):
                a, b = unique[i], unique[j]
                directed[i, j] = fuse_scores(directed[i, j], face_scorer(a, b), alpha,
                                             a.visible and b.visible)
    sym = 0.5 * (directed + directed.T)
    S = sym[np.ix_(index, index)]
    np.fill_diagonal(S, 1.0)
    return S


def check_similarity_matrix(S: np.ndarray) -> None:
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("similarity matrix must be square")
    if not np.all(np.isfinite(S)) or not np.array_equal(S, S.T):
        raise ValueError("similarity matrix must be finite and symmetric")


def ahc_cluster(S: np.ndarray, threshold: float, linkage: str = "average") -> list[int]:
    """Merge the most similar clusters while their linkage similarity >= threshold.

    Clusters are keyed by their smallest member; ties go to the smallest
    (i, j) key pair. Labels are numbered by first occurrence.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if n == 0:
        return []
    # sim[i, j] holds the summed (average) or extreme (single/complete) cross similarity.
    sim = S.copy()
    size = np.ones(n)
    alive = np.ones(n, dtype=bool)
    owner = np.arange(n)
    while alive.sum() > 1:
        keys = np.flatnonzero(alive)
        block = sim[np.ix_(keys, keys)]
        if linkage == "average":
            block = block / np.outer(size[keys], size[keys])
        block[np.tril_indices(len(keys))] = -np.inf
        best = block.max()
        if best < threshold:
            break
        a, b = np.argwhere(block == best)[0]
        i, j = keys[a], keys[b]
        if linkage == "average":
            sim[i, :] += sim[j, :]
            sim[:, i] += sim[:, j]
        elif linkage == "single":
            sim[i, :] = np.maximum(sim[i, :], sim[j, :])
            sim[:, i] = sim[i, :]
        else:
            sim[i, :] = np.minimum(sim[i, :], sim[j, :])
            sim[:, i] = sim[i, :]
        size[i] += size[j]
        alive[j] = False
        owner[owner == j] = i
    labels: dict[int, int] = {}
    return [labels.setdefault(int(o), len(labels)) for o in owner]


def segments_to_hypothesis(segments: Sequence[TimeInterval], labels: Sequence[int],
                           file_id: str) -> Diarization:
    if len(segments) != len(labels):
        raise ValueError(f"{len(segments)} segments but {len(labels)} labels")
    records = [RttmRecord(file_id, 1, seg, f"spk{lab}") for seg, lab in zip(segments, labels)]
    return normalize_diarization(records, file_id)


def similarity_csv(S: np.ndarray) -> str:
    return "".join(",".join(f"{v:.6f}" for v in row) + "\n" for row in np.asarray(S))
