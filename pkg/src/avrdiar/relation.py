"""Audio-visual relation network with visibility-selected channel masks.

The network compares two audio-visual pairs. Each pair contributes its face
map and its (adaptively pooled) audio map; the four maps are stacked on the
channel axis, scaled per channel by the mask of the pair's visibility case,
passed through two residual 3x3 conv blocks, averaged over space and mapped
to a single logit. All tensors are float64 and channels-last internally.
Gradients are written out by hand.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import Config
from .features import AVPairFeatures, pool_matrix

N_CASES = 4
BLOCKS = ("b1", "b2")
PARAM_NAMES = (
    "masks",
    "b1_conv1_w", "b1_conv1_b", "b1_conv2_w", "b1_conv2_b",
    "b2_conv1_w", "b2_conv1_b", "b2_conv2_w", "b2_conv2_b",
    "head_w", "head_b",
)

CKPT_MAGIC = b"AVRN"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sI4IdQ")


@dataclass(eq=False)
class RelationModel:
    c_audio: int
    c_face: int
    h: int
    w: int
    params: dict[str, np.ndarray]

    @property
    def dim(self) -> int:
        return 2 * (self.c_face + self.c_audio)

    @classmethod
    def shapes(cls, c_audio: int, c_face: int) -> dict[str, tuple[int, ...]]:
        d = 2 * (c_face + c_audio)
        out = {"masks": (N_CASES, d), "head_w": (d,), "head_b": (1,)}
        for blk in BLOCKS:
            for conv in ("conv1", "conv2"):
                out[f"{blk}_{conv}_w"] = (3, 3, d, d)
                out[f"{blk}_{conv}_b"] = (d,)
        return out

    @classmethod
    def initialize(cls, cfg: Config, rng: np.random.Generator) -> "RelationModel":
        """Masks at one, He-normal convolutions, zero biases and a zero head."""
        shapes = cls.shapes(cfg.c_audio, cfg.c_face)
        d = cfg.relation_dim
        params = {}
        for name in PARAM_NAMES:
            if name == "masks":
                params[name] = np.ones(shapes[name])
            elif name.endswith("_w") and name != "head_w":
                params[name] = rng.standard_normal(shapes[name]) * np.sqrt(2.0 / (9 * d))
            else:
                params[name] = np.zeros(shapes[name])
        return cls(cfg.c_audio, cfg.c_face, cfg.h, cfg.w, params)

    def copy(self) -> "RelationModel":
        return RelationModel(self.c_audio, self.c_face, self.h, self.w,
                             {k: v.copy() for k, v in self.params.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def load_flat(self, vector: np.ndarray) -> None:
        shapes = self.shapes(self.c_audio, self.c_face)
        pos = 0
        for name in PARAM_NAMES:
            size = int(np.prod(shapes[name]))
            self.params[name] = np.array(vector[pos:pos + size]).reshape(shapes[name])
            pos += size
        if pos != len(vector):
            raise ValueError("parameter blob size does not match model dims")


def visibility_case(left: AVPairFeatures, right: AVPairFeatures) -> int:
    """0: A vs A, 1: A vs A-V, 2: A-V vs A, 3: A-V vs A-V."""
    return 2 * int(left.visible) + int(right.visible)


def _pair_maps(pairs: Sequence[AVPairFeatures], model: RelationModel) -> np.ndarray:
    """(B, H, W, C_I + C_A) face-then-audio maps with audio pooled to H x W."""
    face_shape = (model.c_face, model.h, model.w)
    audio = np.stack([p.audio for p in pairs])
    if audio.shape[1] != model.c_audio:
        raise ValueError(f"audio has {audio.shape[1]} channels, model expects {model.c_audio}")
    _, _, ha, wa = audio.shape
    pooled = (pool_matrix(ha, model.h) @ audio @ pool_matrix(wa, model.w).T).transpose(0, 2, 3, 1)
    faces = []
    for p in pairs:
        face = p.face_or_zeros(face_shape)
        if face.shape != face_shape:
            raise ValueError(f"face map {face.shape} does not match model {face_shape}")
        faces.append(face)
    faces = np.stack(faces).transpose(0, 2, 3, 1)
    return np.concatenate([faces, pooled], axis=3)


def assemble_batch(lefts: Sequence[AVPairFeatures], rights: Sequence[AVPairFeatures],
                   model: RelationModel) -> tuple[np.ndarray, np.ndarray]:
    """Unmasked (B, H, W, D) inputs and the visibility case of each row."""
    raw = np.concatenate([_pair_maps(lefts, model), _pair_maps(rights, model)], axis=3)
    cases = np.array([visibility_case(a, b) for a, b in zip(lefts, rights)], dtype=np.intp)
    return raw, cases


def assemble_input(left: AVPairFeatures, right: AVPairFeatures, model: RelationModel) -> np.ndarray:
    """Masked relation input for one comparison, channels first (D, H, W)."""
    raw, cases = assemble_batch([left], [right], model)
    return (raw[0] * model.params["masks"][cases[0]]).transpose(2, 0, 1)


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B*H*W, C*9) patches, column order (channel, dy, dx)."""
    b, h, w, c = x.shape
    xp = np.zeros((b, h + 2, w + 2, c))
    xp[:, 1:-1, 1:-1, :] = x
    patches = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return patches.reshape(b * h * w, c * 9)


def _weight_matrix(weight: np.ndarray) -> np.ndarray:
    # (3, 3, Cin, Cout) -> (Cin*9, Cout) matching the patch column order.
    return weight.transpose(2, 0, 1, 3).reshape(-1, weight.shape[3])


def _conv_forward(x, weight, bias):
    b, h, w, _ = x.shape
    cols = _im2col(x)
    out = cols @ _weight_matrix(weight) + bias
    return out.reshape(b, h, w, -1), cols


def _conv_backward(dout, cols, weight, x_shape):
    b, h, w, c = x_shape
    d2 = dout.reshape(b * h * w, -1)
    dweight = (cols.T @ d2).reshape(c, 3, 3, -1).transpose(1, 2, 0, 3)
    dbias = d2.sum(axis=0)
    dcols = (d2 @ _weight_matrix(weight).T).reshape(b, h, w, c, 3, 3)
    dxp = np.zeros((b, h + 2, w + 2, c))
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy:dy + h, dx:dx + w, :] += dcols[..., dy, dx]
    return dxp[:, 1:-1, 1:-1, :], dweight, dbias


def forward(model: RelationModel, raw: np.ndarray, cases: np.ndarray):
    """Scores for a batch plus the cache needed by :func:`backward_from_scores`."""
    p = model.params
    x = raw * p["masks"][cases][:, None, None, :]
    cache = {"raw": raw, "cases": cases, "blocks": []}
    for blk in BLOCKS:
        z1, cols1 = _conv_forward(x, p[f"{blk}_conv1_w"], p[f"{blk}_conv1_b"])
        a1 = np.maximum(z1, 0.0)
        z2, cols2 = _conv_forward(a1, p[f"{blk}_conv2_w"], p[f"{blk}_conv2_b"])
        u = x + z2
        cache["blocks"].append((x.shape, z1, cols1, a1.shape, cols2, u))
        x = np.maximum(u, 0.0)
    pooled = x.mean(axis=(1, 2))
    logits = pooled @ p["head_w"] + p["head_b"][0]
    scores = expit(logits)
    cache.update(pooled=pooled, scores=scores, spatial=x.shape[1] * x.shape[2])
    return scores, cache


def backward_from_scores(model: RelationModel, cache, dscores: np.ndarray) -> dict[str, np.ndarray]:
    p = model.params
    grads = model.zeros_like()
    s = cache["scores"]
    dlogits = dscores * s * (1.0 - s)
    grads["head_w"] = cache["pooled"].T @ dlogits
    grads["head_b"] = np.array([dlogits.sum()])
    dpooled = np.outer(dlogits, p["head_w"])
    dx = np.broadcast_to(dpooled[:, None, None, :] / cache["spatial"],
                         cache["blocks"][-1][5].shape)
    for blk, (x_shape, z1, cols1, a1_shape, cols2, u) in reversed(list(zip(BLOCKS, cache["blocks"]))):
        du = dx * (u > 0)
        da1, grads[f"{blk}_conv2_w"], grads[f"{blk}_conv2_b"] = _conv_backward(
            du, cols2, p[f"{blk}_conv2_w"], a1_shape)
        dz1 = da1 * (z1 > 0)
        dx_conv, grads[f"{blk}_conv1_w"], grads[f"{blk}_conv1_b"] = _conv_backward(
            dz1, cols1, p[f"{blk}_conv1_w"], x_shape)
        dx = du + dx_conv
    per_row = (cache["raw"] * dx).sum(axis=(1, 2))
    np.add.at(grads["masks"], cache["cases"], per_row)
    return grads


def score_pairs(lefts: Sequence[AVPairFeatures], rights: Sequence[AVPairFeatures],
                model: RelationModel, chunk: int = 1024) -> np.ndarray:
    out = []
    for start in range(0, len(lefts), chunk):
        raw, cases = assemble_batch(lefts[start:start + chunk], rights[start:start + chunk], model)
        out.append(forward(model, raw, cases)[0])
    return np.concatenate(out) if out else np.zeros(0)


def score_pair(left: AVPairFeatures, right: AVPairFeatures, model: RelationModel) -> float:
    return float(score_pairs([left], [right], model)[0])


def mse_loss(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.size == 0 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be non-empty and of equal length")
    return float(np.mean((scores - labels) ** 2))


def loss_and_grad(lefts, rights, labels, model: RelationModel):
    """Mean squared error of the batch and its gradient for every parameter."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("empty batch")
    raw, cases = assemble_batch(lefts, rights, model)
    scores, cache = forward(model, raw, cases)
    loss = mse_loss(scores, labels)
    grads = backward_from_scores(model, cache, 2.0 * (scores - labels) / labels.size)
    return loss, grads


def backward(batch, model: RelationModel) -> dict[str, np.ndarray]:
    """Gradient of the batch loss; ``batch`` holds objects with left/right/label."""
    _, grads = loss_and_grad([ex.left for ex in batch], [ex.right for ex in batch],
                             [ex.label for ex in batch], model)
    return grads


def export_masks(model: RelationModel) -> np.ndarray:
    return model.params["masks"].copy()


def masks_csv(model: RelationModel) -> str:
    masks = export_masks(model)
    header = "case," + ",".join(f"ch{c}" for c in range(masks.shape[1]))
    rows = [f"{k}," + ",".join(f"{v:.9g}" for v in row) for k, row in enumerate(masks)]
    return "\n".join([header, *rows]) + "\n"


def save_checkpoint(model: RelationModel, threshold: float, path: str | Path) -> None:
    blob = model.flat().astype("<f8")
    header = _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, model.c_audio, model.c_face,
                               model.h, model.w, float(threshold), blob.size)
    Path(path).write_bytes(header + blob.tobytes())


def load_checkpoint(path: str | Path) -> tuple[RelationModel, float]:
    data = Path(path).read_bytes()
    magic, version, c_audio, c_face, h, w, threshold, n = _CKPT_HEADER.unpack_from(data)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise ValueError(f"{path}: not an AVRN v{CKPT_VERSION} checkpoint")
    blob = np.frombuffer(data, "<f8", n, _CKPT_HEADER.size)
    model = RelationModel(c_audio, c_face, h, w, {})
    model.load_flat(blob)
    return model, threshold
