"""WAV input, log-power spectrograms, energy VAD and sliding windows."""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .core import EPS, Config, TimeInterval, merge_intervals

LOG_FLOOR = 1e-10
N_FFT = 512


class UnsupportedAudioError(ValueError):
    pass


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or not np.all(np.isfinite(samples)):
            raise ValueError("samples must be a finite 1-D sequence")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def slice(self, interval: TimeInterval) -> "AudioSignal":
        if interval.offset > self.duration + EPS:
            raise ValueError(f"segment {interval} exceeds audio duration {self.duration:.3f}s")
        start = int(round(interval.onset * self.sample_rate))
        stop = int(round(interval.offset * self.sample_rate))
        return AudioSignal(self.samples[start:stop], self.sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    frames: np.ndarray  # (num_frames, num_bins) log-power
    hop_ms: float
    win_ms: float


def read_wav(data: bytes, expected_rate: int = 16000) -> AudioSignal:
    try:
        with wave.open(io.BytesIO(data)) as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            comptype = wf.getcomptype()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise UnsupportedAudioError(f"not a PCM WAV file: {exc}") from None
    if comptype != "NONE" or width != 2:
        raise UnsupportedAudioError("only 16-bit PCM is supported")
    if channels != 1:
        raise UnsupportedAudioError(f"only mono is supported, got {channels} channels")
    if rate != expected_rate:
        raise UnsupportedAudioError(
            f"sample rate {rate} Hz; resample to {expected_rate} Hz before diarizing"
        )
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return AudioSignal(pcm / 32768.0, rate)


def write_wav(signal: AudioSignal) -> bytes:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(signal.sample_rate)
        wf.writeframes(pcm.tobytes())
    return buf.getvalue()


def _frames(signal: AudioSignal, cfg: Config) -> np.ndarray:
    win = int(round(cfg.spec_win_ms * signal.sample_rate / 1000))
    hop = int(round(cfg.spec_hop_ms * signal.sample_rate / 1000))
    if len(signal.samples) < win:
        raise ValueError(f"signal of {len(signal.samples)} samples is shorter than one window ({win})")
    return np.lib.stride_tricks.sliding_window_view(signal.samples, win)[::hop]


def compute_spectrogram(signal: AudioSignal, cfg: Config) -> Spectrogram:
    frames = _frames(signal, cfg)
    window = np.hamming(frames.shape[1])
    spectrum = np.fft.rfft(frames * window, n=N_FFT, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    return Spectrogram(np.log(power + LOG_FLOOR), cfg.spec_hop_ms, cfg.spec_win_ms)


def frame_energies_db(signal: AudioSignal, cfg: Config) -> np.ndarray:
    frames = _frames(signal, cfg)
    return 10.0 * np.log10(np.mean(frames**2, axis=1) + LOG_FLOOR)


def energy_vad(signal: AudioSignal, cfg: Config) -> list[TimeInterval]:
    """Threshold frame energies and turn active runs into speech intervals.

    A frame is active when its energy exceeds both the absolute floor
    ``vad_floor_db`` and ``min(percentile + offset, max - offset)``; the
    second term keeps a signal that is speech throughout from voting
    itself silent.
    """
    if len(signal.samples) < int(round(cfg.spec_win_ms * signal.sample_rate / 1000)):
        return []
    energy = frame_energies_db(signal, cfg)
    relative = min(np.percentile(energy, cfg.vad_percentile) + cfg.vad_offset_db,
                   energy.max() - cfg.vad_offset_db)
    active = (energy > relative) & (energy > cfg.vad_floor_db)
    active = median_filter(active.astype(np.uint8), size=cfg.vad_median, mode="nearest") > 0

    hop = cfg.spec_hop_ms / 1000
    win = cfg.spec_win_ms / 1000
    edges = np.diff(np.concatenate([[0], active.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    intervals = []
    for a, b in zip(starts, stops):
        onset = round(a * hop, 6)
        offset = round(min(b * hop + win, signal.duration), 6)
        if offset - onset >= cfg.vad_min_s - EPS:
            intervals.append(TimeInterval(onset, offset))

    bridged: list[TimeInterval] = []
    for iv in intervals:
        if bridged and iv.onset - bridged[-1].offset < cfg.vad_bridge_s - EPS:
            bridged[-1] = TimeInterval(bridged[-1].onset, iv.offset)
        else:
            bridged.append(iv)
    return merge_intervals(bridged)


def slide_segments(interval: TimeInterval, cfg: Config) -> list[TimeInterval]:
    win, stride = cfg.window_s, cfg.stride_s
    if interval.duration < win - EPS:
        return [interval]
    windows = []
    k = 0
    while interval.onset + k * stride + win <= interval.offset + EPS:
        start = interval.onset + k * stride
        windows.append(TimeInterval(start, min(start + win, interval.offset)))
        k += 1
    if interval.offset - windows[-1].offset > EPS:
        windows.append(TimeInterval(max(interval.offset - win, interval.onset), interval.offset))
    return windows
