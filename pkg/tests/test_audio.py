import io
import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avrdiar.audio import (
    LOG_FLOOR,
    AudioSignal,
    UnsupportedAudioError,
    compute_spectrogram,
    energy_vad,
    read_wav,
    slide_segments,
    write_wav,
)
from avrdiar.core import Config, TimeInterval
from oracles import dft_peak_bin, frame_energies

SR = 16000
CFG = Config()


def pcm_bytes(values, channels=1, rate=SR, width=2):
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(np.asarray(values, dtype="<i2" if width == 2 else "u1").tobytes())
    return buf.getvalue()


def tone(seconds, freq=1000.0, amp=1.0):
    t = np.arange(int(seconds * SR)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


class TestReadWav:
    def test_zeros(self):
        sig = read_wav(pcm_bytes(np.zeros(SR)))
        assert sig.samples.shape == (16000,)
        assert not sig.samples.any()

    def test_scaling(self):
        sig = read_wav(pcm_bytes([32767, -32768]))
        assert sig.samples[0] == 32767 / 32768
        assert sig.samples[1] == -1.0

    def test_stereo_rejected(self):
        with pytest.raises(UnsupportedAudioError):
            read_wav(pcm_bytes(np.zeros(200), channels=2))

    def test_eight_bit_rejected(self):
        with pytest.raises(UnsupportedAudioError):
            read_wav(pcm_bytes(np.zeros(200, dtype=np.uint8), width=1))

    def test_wrong_rate_asks_for_resampling(self):
        with pytest.raises(UnsupportedAudioError, match="resample"):
            read_wav(pcm_bytes(np.zeros(800), rate=8000))

    def test_write_read_round_trip(self):
        sig = AudioSignal(np.round(tone(0.1, amp=0.5) * 32768) / 32768, SR)
        assert np.array_equal(read_wav(write_wav(sig)).samples, sig.samples)


class TestSpectrogram:
    def test_silence_is_log_floor(self):
        spec = compute_spectrogram(AudioSignal(np.zeros(2 * SR), SR), CFG)
        assert np.all(spec.frames == np.log(LOG_FLOOR))

    def test_two_second_shape(self):
        # floor((32000 - 400) / 160) + 1 = 198 frames, 512 / 2 + 1 = 257 bins
        spec = compute_spectrogram(AudioSignal(np.zeros(32000), SR), CFG)
        assert spec.frames.shape == (198, 257)

    def test_sine_peak_bin(self):
        sig = AudioSignal(tone(0.1), SR)
        spec = compute_spectrogram(sig, CFG)
        expected = dft_peak_bin(sig.samples[:400] * np.hamming(400), 512)
        assert expected == round(1000 / 16000 * 512) == 32
        assert np.all(spec.frames.argmax(axis=1) == 32)

    def test_too_short(self):
        with pytest.raises(ValueError):
            compute_spectrogram(AudioSignal(np.zeros(399), SR), CFG)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(400, 40000))
    def test_frame_count_formula(self, n):
        spec = compute_spectrogram(AudioSignal(np.zeros(n), SR), CFG)
        assert spec.frames.shape[0] == math.floor((n - 400) / 160) + 1


def oracle_vad(samples, cfg):
    """Intervals from directly computed frame energies and the documented rule."""
    energy = frame_energies(list(samples), 400, 160)
    rel = min(np.percentile(energy, cfg.vad_percentile) + cfg.vad_offset_db,
              max(energy) - cfg.vad_offset_db)
    active = [e > rel and e > cfg.vad_floor_db for e in energy]
    runs, start = [], None
    for k, a in enumerate(active + [False]):
        if a and start is None:
            start = k
        if not a and start is not None:
            runs.append((start * 0.01, min((k - 1) * 0.01 + 0.025, len(samples) / SR)))
            start = None
    return runs


class TestEnergyVad:
    def test_silence(self):
        assert energy_vad(AudioSignal(np.zeros(2 * SR), SR), CFG) == []

    def test_full_scale_tone(self):
        sig = AudioSignal(tone(2.0), SR)
        (iv,) = energy_vad(sig, CFG)
        assert iv.onset <= 0.05 and iv.offset >= 1.95
        assert oracle_vad(sig.samples, CFG) == [(pytest.approx(iv.onset), pytest.approx(iv.offset))]

    def test_two_bursts_without_bridging(self):
        samples = np.concatenate([tone(1.0), np.zeros(SR), tone(1.0)])
        cfg = CFG.replace(vad_bridge_s=0.0)
        got = energy_vad(AudioSignal(samples, SR), cfg)
        expected = oracle_vad(samples, cfg)
        assert len(got) == len(expected) == 2
        for iv, (a, b) in zip(got, expected):
            assert iv.onset == pytest.approx(a) and iv.offset == pytest.approx(b)

    def test_short_gap_is_bridged(self):
        samples = np.concatenate([tone(1.0), np.zeros(int(0.1 * SR)), tone(1.0)])
        assert len(energy_vad(AudioSignal(samples, SR), CFG)) == 1

    def test_short_blip_dropped(self):
        samples = np.concatenate([np.zeros(SR), tone(0.03), np.zeros(SR)])
        assert energy_vad(AudioSignal(samples, SR), CFG) == []

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.integers(1, 12)), min_size=1, max_size=8))
    def test_output_disjoint_sorted_inside(self, blocks):
        parts = [tone(n / 10) if on else np.zeros(int(n / 10 * SR)) for on, n in blocks]
        samples = np.concatenate(parts)
        sig = AudioSignal(samples, SR)
        ivs = energy_vad(sig, CFG)
        for a, b in zip(ivs, ivs[1:]):
            assert a.offset < b.onset
        for iv in ivs:
            assert 0 <= iv.onset < iv.offset <= sig.duration + 1e-9


class TestSlideSegments:
    def test_exact_window(self):
        assert slide_segments(TimeInterval(0, 2.0), CFG) == [TimeInterval(0, 2.0)]

    def test_tail_window(self):
        got = slide_segments(TimeInterval(0, 3.2), CFG)
        expected = [(0, 2.0), (0.5, 2.5), (1.0, 3.0), (1.2, 3.2)]
        assert [(w.onset, w.offset) for w in got] == [pytest.approx(e) for e in expected]

    def test_short_interval(self):
        assert slide_segments(TimeInterval(0, 1.0), CFG) == [TimeInterval(0, 1.0)]

    def test_no_duplicate_tail(self):
        assert len(slide_segments(TimeInterval(0, 3.0), CFG)) == 3

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 20_000))
    def test_windows_cover_interval(self, start_ms, dur_ms):
        iv = TimeInterval(start_ms / 1000, (start_ms + dur_ms) / 1000)
        wins = slide_segments(iv, CFG)
        assert all(iv.contains(w) for w in wins)
        assert wins[0].onset == iv.onset
        assert wins[-1].offset == pytest.approx(iv.offset)
        for a, b in zip(wins, wins[1:]):
            assert b.onset <= a.offset + 1e-9
