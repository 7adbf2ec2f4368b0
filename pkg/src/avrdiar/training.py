"""Pair sampling, Adam, and validation-driven model/threshold selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import Config, make_rng
from .features import AVPairFeatures, SyntheticCorpus, apply_missing_augmentation
from .pipeline import threshold_search
from .relation import RelationModel, loss_and_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairExample:
    left: AVPairFeatures
    right: AVPairFeatures
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if self.label == 1 and self.left.video_id != self.right.video_id:
            raise ValueError("positive pairs must come from one video")


@dataclass
class TrainedScorer:
    model: RelationModel
    threshold: float
    training_log: list[tuple[int, float]] = field(default_factory=list)
    validation_log: list[tuple[int, float, float]] = field(default_factory=list)


def sample_batch(corpus: SyntheticCorpus, batch_size: int,
                 rng: np.random.Generator) -> list[PairExample]:
    """Half positives drawn within a video, half negatives drawn across videos.

    Identity labels are only trusted inside a video, so a negative is any
    pair of segments from two different videos.
    """
    videos = corpus.videos
    if len(videos) < 2:
        raise ValueError("need at least two videos to draw cross-video negatives")
    pools = []
    for video in videos:
        by_speaker: dict[str, list[AVPairFeatures]] = {}
        for pair in video.pairs:
            by_speaker.setdefault(pair.true_speaker, []).append(pair)
        groups = [g for _, g in sorted(by_speaker.items()) if len(g) >= 2]
        if groups:
            pools.append(groups)
    if not pools:
        raise ValueError("no speaker has two segments; cannot draw positives")

    n_pos = batch_size // 2
    batch = []
    for _ in range(n_pos):
        groups = pools[rng.integers(len(pools))]
        group = groups[rng.integers(len(groups))]
        i, j = rng.choice(len(group), size=2, replace=False)
        batch.append(PairExample(group[i], group[j], 1))
    for _ in range(batch_size - n_pos):
        a, b = rng.choice(len(videos), size=2, replace=False)
        left = videos[a].pairs[rng.integers(len(videos[a].pairs))]
        right = videos[b].pairs[rng.integers(len(videos[b].pairs))]
        batch.append(PairExample(left, right, 0))
    return batch


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def pick_threshold(grid, ders) -> tuple[float, float]:
    """Lowest DER; among equal DERs the middle threshold of the tied run."""
    ders = np.asarray(ders)
    best = ders.min()
    tied = np.flatnonzero(np.isclose(ders, best, rtol=0, atol=1e-9))
    k = tied[len(tied) // 2]
    return float(grid[k]), float(best)


def train(corpus_train: SyntheticCorpus, corpus_val: SyntheticCorpus, cfg: Config,
          progress=None) -> TrainedScorer:
    train_ids = {v.video_id for v in corpus_train.videos}
    if train_ids & {v.video_id for v in corpus_val.videos}:
        raise ValueError("train and validation corpora share videos")

    model = RelationModel.initialize(cfg, make_rng(cfg.seed, "init"))
    rng = make_rng(cfg.seed, "train")
    opt = Adam(model.params, cfg.lr)
    log: list[tuple[int, float]] = []
    val_log: list[tuple[int, float, float]] = []
    best = (np.inf, None, None)

    for it in range(1, cfg.iterations + 1):
        batch = sample_batch(corpus_train, cfg.batch_size, rng)
        lefts = [apply_missing_augmentation(ex.left, cfg.missing_prob, rng) for ex in batch]
        rights = [apply_missing_augmentation(ex.right, cfg.missing_prob, rng) for ex in batch]
        loss, grads = loss_and_grad(lefts, rights, [ex.label for ex in batch], model)
        opt.step(model.params, grads)
        log.append((it, loss))

        if it % cfg.eval_every == 0 or it == cfg.iterations:
            ders = threshold_search(corpus_val, model, cfg)
            thr, der = pick_threshold(cfg.threshold_grid, ders)
            val_log.append((it, thr, der))
            logger.info("iter %d loss %.4f val DER %.2f%% @ %.2f", it, loss, der, thr)
            if progress is not None:
                progress(it, loss, thr, der)
            if der <= best[0]:
                best = (der, model.copy(), thr)

    _, snapshot, threshold = best
    return TrainedScorer(snapshot, threshold, log, val_log)


def training_log_csv(scorer: TrainedScorer) -> str:
    lines = ["iteration,loss"] + [f"{it},{loss:.10f}" for it, loss in scorer.training_log]
    return "\n".join(lines) + "\n"
