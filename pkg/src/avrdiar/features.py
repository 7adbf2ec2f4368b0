"""Audio-visual pair features, missing-face augmentation and the synthetic corpus."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .audio import AudioSignal, compute_spectrogram
from .core import (
    EPS,
    Config,
    Diarization,
    RttmRecord,
    TimeInterval,
    make_rng,
    normalize_diarization,
    parse_rttm,
    serialize_rttm,
)

PAIR_MAGIC = b"AVPF"
PAIR_VERSION = 1
_PAIR_HEADER = struct.Struct("<4sI6IB")


@dataclass(frozen=True, eq=False)
class AVPairFeatures:
    """One candidate speaker: audio map, optional face map, visibility."""

    audio: np.ndarray
    face: np.ndarray | None
    visible: bool
    segment: TimeInterval
    video_id: str
    true_speaker: str | None = None

    def __post_init__(self):
        if self.visible and self.face is None:
            raise ValueError("visible pair without a face map")
        if not self.visible and self.face is not None and np.any(self.face):
            raise ValueError("invisible pair carries a non-zero face map")
        if not np.all(np.isfinite(self.audio)):
            raise ValueError("non-finite audio features")

    def face_or_zeros(self, shape: tuple[int, int, int]) -> np.ndarray:
        return self.face if self.face is not None else np.zeros(shape)


class PairExtractor(Protocol):
    def extract(self, segment: TimeInterval, audio: AudioSignal | None,
                face_source=None) -> AVPairFeatures: ...


def pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input bins floor(i*n_in/n_out) .. floor((i+1)*n_in/n_out)-1."""
    if n_out <= 0 or n_out > n_in:
        raise ValueError(f"cannot pool {n_in} bins into {n_out}")
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = (i * n_in) // n_out, ((i + 1) * n_in) // n_out
        mat[i, lo:hi] = 1.0 / (hi - lo)
    return mat


def adaptive_pool(fmap: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    fmap = np.asarray(fmap, dtype=np.float64)
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output dims must be positive")
    _, h, w = fmap.shape
    if (out_h, out_w) == (h, w):
        return fmap.copy()
    return np.einsum("ih,chw,jw->cij", pool_matrix(h, out_h), fmap, pool_matrix(w, out_w))


def apply_missing_augmentation(pair: AVPairFeatures, p: float,
                               rng: np.random.Generator) -> AVPairFeatures:
    """Drop a visible face with probability ``p``; one draw per call."""
    drop = rng.random() < p
    if not pair.visible or not drop:
        return pair
    return replace(pair, face=np.zeros_like(pair.face), visible=False)


class SpectrogramStatExtractor:
    """Pools a segment's log-power spectrogram into a C x H x W audio map.

    Frequency bins are split into ``c_audio * audio_h`` bands and frames into
    ``audio_w`` time cells; cell (c, i, j) is the mean over band c*audio_h+i
    and time cell j.
    """

    def __init__(self, cfg: Config, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng

    def audio_map(self, signal: AudioSignal) -> np.ndarray:
        cfg = self.cfg
        spec = compute_spectrogram(signal, cfg).frames
        pooled = pool_matrix(spec.shape[1], cfg.c_audio * cfg.audio_h) @ spec.T
        pooled = pooled @ pool_matrix(spec.shape[0], cfg.audio_w).T
        return pooled.reshape(cfg.c_audio, cfg.audio_h, cfg.audio_w)

    def _pick_face(self, face_source):
        if face_source is None:
            return None
        if isinstance(face_source, np.ndarray):
            return face_source
        track = list(face_source)
        if not track:
            return None
        rng = self.rng if self.rng is not None else np.random.default_rng(0)
        return track[int(rng.integers(len(track)))]

    def extract(self, segment, audio, face_source=None, video_id="", true_speaker=None):
        if audio is None:
            raise ValueError("spectrogram-stat extractor needs audio")
        if segment.offset > audio.duration + EPS:
            raise ValueError(f"segment {segment} lies outside {audio.duration:.3f}s of audio")
        face = self._pick_face(face_source)
        return AVPairFeatures(
            audio=self.audio_map(audio.slice(segment)),
            face=None if face is None else np.asarray(face, dtype=np.float64),
            visible=face is not None,
            segment=segment,
            video_id=video_id,
            true_speaker=true_speaker,
        )


@dataclass(frozen=True, eq=False)
class SyntheticSpeaker:
    label: str
    audio_prototype: np.ndarray
    face_prototype: np.ndarray
    off_screen: bool


@dataclass(frozen=True, eq=False)
class SyntheticVideo:
    video_id: str
    speakers: tuple[SyntheticSpeaker, ...]
    pairs: tuple[AVPairFeatures, ...]

    @property
    def reference(self) -> Diarization:
        records = [RttmRecord(self.video_id, 1, p.segment, p.true_speaker) for p in self.pairs]
        return normalize_diarization(records, self.video_id)


@dataclass(frozen=True, eq=False)
class SyntheticCorpus:
    videos: tuple[SyntheticVideo, ...]
    noise_sigma: float
    dims: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.videos)

    @property
    def references(self) -> dict[str, Diarization]:
        return {v.video_id: v.reference for v in self.videos}

    def subset(self, start: int, stop: int) -> "SyntheticCorpus":
        return SyntheticCorpus(self.videos[start:stop], self.noise_sigma, dict(self.dims))


class SyntheticExtractor:
    """Serves the stored pair whose reference segment best overlaps a window."""

    def __init__(self, video: SyntheticVideo):
        self.video = video

    def extract(self, segment, audio=None, face_source=None):
        best = max(self.video.pairs, key=lambda p: p.segment.overlap(segment))
        if best.segment.overlap(segment) <= 0:
            raise ValueError(f"segment {segment} has no speech in {self.video.video_id}")
        return best


def extract_pair_features(segment: TimeInterval, audio: AudioSignal | None,
                          face_source, extractor: PairExtractor) -> AVPairFeatures:
    return extractor.extract(segment, audio, face_source)


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def make_synthetic_corpus(
    n_videos: int,
    speakers_per_video: int | tuple[int, int],
    off_screen_fraction: float,
    segs_per_speaker: int,
    noise_sigma: float,
    seed: int,
    cfg: Config | None = None,
    seg_duration: tuple[float, float] = (0.8, 3.5),
    gap: tuple[float, float] = (0.5, 1.5),
    video_prefix: str = "vid",
) -> SyntheticCorpus:
    """Random multi-speaker videos with Gaussian identity prototypes.

    Each speaker's audio and face prototypes are unit vectors; each segment
    broadcasts them over the map grid and adds N(0, noise_sigma) per element.
    ``round(off_screen_fraction * n_speakers)`` speakers per video never show
    a face. Speech turns are separated by silent gaps. Features are rounded to
    float32 so the in-memory corpus equals its on-disk form.
    """
    cfg = cfg or Config()
    lo, hi = (speakers_per_video, speakers_per_video) if isinstance(speakers_per_video, int) \
        else speakers_per_video
    if n_videos < 1 or lo < 2 or hi < lo or segs_per_speaker < 1:
        raise ValueError("need n_videos >= 1, speakers_per_video >= 2, segs_per_speaker >= 1")
    if not 0.0 <= off_screen_fraction <= 1.0:
        raise ValueError("off_screen_fraction must lie in [0, 1]")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")

    audio_shape = (cfg.c_audio, cfg.audio_h, cfg.audio_w)
    face_shape = (cfg.c_face, cfg.h, cfg.w)
    videos = []
    for v in range(n_videos):
        rng = make_rng(seed, "video", v)
        video_id = f"{video_prefix}{v:03d}"
        n_spk = int(rng.integers(lo, hi + 1))
        n_off = int(round(off_screen_fraction * n_spk))
        off = set(rng.permutation(n_spk)[:n_off].tolist())
        speakers = tuple(
            SyntheticSpeaker(f"spk{k}", _unit(rng, cfg.c_audio), _unit(rng, cfg.c_face), k in off)
            for k in range(n_spk)
        )
        order = rng.permutation(np.repeat(np.arange(n_spk), segs_per_speaker))
        t = round(float(rng.uniform(*gap)), 3)
        pairs = []
        for k in order:
            spk = speakers[k]
            dur = round(float(rng.uniform(*seg_duration)), 3)
            seg = TimeInterval(t, round(t + dur, 3))
            audio = spk.audio_prototype[:, None, None] + noise_sigma * rng.standard_normal(audio_shape)
            face = spk.face_prototype[:, None, None] + noise_sigma * rng.standard_normal(face_shape)
            pairs.append(AVPairFeatures(
                audio=audio.astype(np.float32).astype(np.float64),
                face=None if spk.off_screen else face.astype(np.float32).astype(np.float64),
                visible=not spk.off_screen,
                segment=seg,
                video_id=video_id,
                true_speaker=spk.label,
            ))
            t = round(seg.offset + float(rng.uniform(*gap)), 3)
        videos.append(SyntheticVideo(video_id, speakers, tuple(pairs)))
    dims = {"c_audio": cfg.c_audio, "audio_h": cfg.audio_h, "audio_w": cfg.audio_w,
            "c_face": cfg.c_face, "h": cfg.h, "w": cfg.w}
    return SyntheticCorpus(tuple(videos), noise_sigma, dims)


def encode_pair(pair: AVPairFeatures) -> bytes:
    c_a, h_a, w_a = pair.audio.shape
    c_i, h_i, w_i = pair.face.shape if pair.face is not None else (0, 0, 0)
    header = _PAIR_HEADER.pack(PAIR_MAGIC, PAIR_VERSION, c_a, h_a, w_a, c_i, h_i, w_i,
                               int(pair.visible))
    body = pair.audio.astype("<f4").tobytes()
    if pair.visible:
        body += pair.face.astype("<f4").tobytes()
    return header + body


def decode_pair(data: bytes, segment: TimeInterval, video_id: str,
                true_speaker: str | None = None) -> AVPairFeatures:
    magic, version, c_a, h_a, w_a, c_i, h_i, w_i, visible = _PAIR_HEADER.unpack_from(data)
    if magic != PAIR_MAGIC or version != PAIR_VERSION:
        raise ValueError("not an AVPF v1 feature file")
    offset = _PAIR_HEADER.size
    n_audio = c_a * h_a * w_a
    audio = np.frombuffer(data, "<f4", n_audio, offset).reshape(c_a, h_a, w_a)
    face = None
    if visible:
        face = np.frombuffer(data, "<f4", c_i * h_i * w_i, offset + 4 * n_audio)
        face = face.reshape(c_i, h_i, w_i).astype(np.float64)
    return AVPairFeatures(audio.astype(np.float64), face, bool(visible), segment, video_id,
                          true_speaker)


def save_corpus(corpus: SyntheticCorpus, directory: str | Path, split: str = "") -> None:
    """Write manifest.json, rttm/<video>.rttm and feats/<video>_<k>.bin."""
    root = Path(directory)
    (root / "rttm").mkdir(parents=True, exist_ok=True)
    (root / "feats").mkdir(exist_ok=True)
    videos = []
    for video in corpus.videos:
        (root / "rttm" / f"{video.video_id}.rttm").write_text(
            serialize_rttm(video.reference.to_records()))
        pairs = []
        for k, pair in enumerate(video.pairs):
            name = f"feats/{video.video_id}_{k:03d}.bin"
            (root / name).write_bytes(encode_pair(pair))
            pairs.append({"file": name, "onset": pair.segment.onset,
                          "offset": pair.segment.offset, "speaker": pair.true_speaker,
                          "visible": pair.visible})
        videos.append({
            "video_id": video.video_id,
            "speakers": [{"label": s.label, "off_screen": s.off_screen,
                          "audio_prototype": s.audio_prototype.tolist(),
                          "face_prototype": s.face_prototype.tolist()} for s in video.speakers],
            "pairs": pairs,
        })
    manifest = {"split": split, "noise_sigma": corpus.noise_sigma, "dims": corpus.dims,
                "videos": videos}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_corpus(directory: str | Path) -> SyntheticCorpus:
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text())
    videos = []
    for entry in manifest["videos"]:
        vid = entry["video_id"]
        speakers = tuple(
            SyntheticSpeaker(s["label"], np.array(s["audio_prototype"]),
                             np.array(s["face_prototype"]), s["off_screen"])
            for s in entry["speakers"])
        pairs = tuple(
            decode_pair((root / p["file"]).read_bytes(), TimeInterval(p["onset"], p["offset"]),
                        vid, p["speaker"])
            for p in entry["pairs"])
        videos.append(SyntheticVideo(vid, speakers, pairs))
    return SyntheticCorpus(tuple(videos), manifest["noise_sigma"], manifest["dims"])


def load_reference(directory: str | Path, video_id: str) -> Diarization:
    text = (Path(directory) / "rttm" / f"{video_id}.rttm").read_text()
    return normalize_diarization(parse_rttm(text), video_id)


def pair_dims_match(pairs: Sequence[AVPairFeatures], cfg: Config) -> bool:
    for p in pairs:
        if p.audio.shape[0] != cfg.c_audio:
            return False
        if p.face is not None and p.face.shape != (cfg.c_face, cfg.h, cfg.w):
            return False
    return True
