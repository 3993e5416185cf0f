"""Waveform I/O, alignment, grid, and blend behavior."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bridge_oa.audio import (
    PCM16_SCALE,
    Waveform,
    align_pair,
    load_wav,
    oa_blend,
    oa_grid,
    save_wav,
    wav_bytes,
    wav_from_bytes,
)


def make_wave(samples, rate=16000):
    return Waveform(np.asarray(samples, dtype=np.float64), rate)


class TestWavRoundTrip:
    def test_full_scale_mapping(self, tmp_path):
        w = make_wave([32767 / 32768, 0.0, -1.0])
        path = tmp_path / "t.wav"
        save_wav(w, path)
        back = load_wav(path)
        assert back.samples[0] == pytest.approx(32767 / 32768, abs=0)
        assert back.samples[1] == 0.0
        assert back.samples[2] == -1.0

    def test_ramp_error_within_one_lsb(self, tmp_path):
        ramp = np.linspace(-0.9, 0.9, 100)
        path = tmp_path / "ramp.wav"
        save_wav(make_wave(ramp), path)
        back = load_wav(path)
        assert np.max(np.abs(back.samples - ramp)) <= 1.0 / PCM16_SCALE

    def test_zeros_stay_zero(self, tmp_path):
        path = tmp_path / "z.wav"
        save_wav(make_wave(np.zeros(64)), path)
        assert np.all(load_wav(path).samples == 0.0)

    def test_sample_rate_preserved(self, tmp_path):
        path = tmp_path / "r.wav"
        save_wav(make_wave(np.zeros(16000), rate=16000), path)
        loaded = load_wav(path)
        assert loaded.sample_rate == 16000
        assert len(loaded) == 16000

    def test_bytes_round_trip(self):
        w = make_wave(np.linspace(-0.5, 0.5, 320))
        back = wav_from_bytes(wav_bytes(w))
        assert back.sample_rate == w.sample_rate
        assert np.max(np.abs(back.samples - w.samples)) <= 1.0 / PCM16_SCALE


class TestWavErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ValueError, match="cannot open|unreadable"):
            load_wav(tmp_path / "nope.wav")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"not a riff file at all")
        with pytest.raises(ValueError):
            load_wav(path)

    def test_unsupported_sample_width(self, tmp_path):
        import wave

        path = tmp_path / "w8.wav"
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(16000)
            wf.writeframes(bytes(100))
        with pytest.raises(ValueError, match="unsupported encoding"):
            load_wav(path)

    def test_channel_selection(self, tmp_path):
        import wave

        path = tmp_path / "stereo.wav"
        left = (np.ones(50) * 1000).astype("<i2")
        right = (np.ones(50) * -2000).astype("<i2")
        interleaved = np.stack([left, right], axis=1).reshape(-1)
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(interleaved.tobytes())
        assert np.all(load_wav(path, channel=0).samples == 1000 / PCM16_SCALE)
        assert np.all(load_wav(path, channel=1).samples == -2000 / PCM16_SCALE)
        with pytest.raises(ValueError, match="channels"):
            load_wav(path)  # multichannel needs an explicit index
        with pytest.raises(ValueError, match="absent"):
            load_wav(path, channel=5)


class TestAlignPair:
    def test_equal_lengths_untouched(self):
        x = make_wave(np.ones(16000))
        y = make_wave(np.zeros(16000))
        ax, ay = align_pair(x, y)
        assert len(ax) == len(ay) == 16000

    def test_min_rule(self):
        x = make_wave(np.arange(16000) / 16000)
        y = make_wave(np.arange(15840) / 16000)
        ax, ay = align_pair(x, y)
        assert len(ax) == len(ay) == 15840
        assert np.array_equal(ax.samples, x.samples[:15840])
        assert np.array_equal(ay.samples, y.samples)

    def test_tolerance_exceeded(self):
        x = make_wave(np.zeros(16000))
        y = make_wave(np.zeros(4000))
        with pytest.raises(ValueError, match="tolerance"):
            align_pair(x, y)

    def test_rate_mismatch(self):
        x = make_wave(np.zeros(8000), rate=8000)
        y = make_wave(np.zeros(8000), rate=16000)
        with pytest.raises(ValueError, match="rate"):
            align_pair(x, y)


class TestOaBlend:
    def test_identity_endpoints(self):
        rng = np.random.default_rng(7)
        x = make_wave(rng.uniform(-1, 1, 500))
        y = make_wave(rng.uniform(-1, 1, 500))
        assert np.array_equal(oa_blend(x, y, 1.0).samples, x.samples)
        assert np.array_equal(oa_blend(x, y, 0.0).samples, y.samples)

    def test_midpoint_arithmetic(self):
        x = make_wave([0.2, -0.4])
        y = make_wave([0.0, 0.4])
        out = oa_blend(x, y, 0.5)
        assert out.samples == pytest.approx([0.1, 0.0], abs=1e-15)

    def test_omega_out_of_range(self):
        x = make_wave(np.zeros(10))
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            oa_blend(x, x, 1.5)

    def test_length_mismatch(self):
        x = make_wave(np.zeros(10))
        y = make_wave(np.zeros(12))
        with pytest.raises(ValueError, match="length"):
            oa_blend(x, y, 0.5)

    @settings(max_examples=50, deadline=None)
    @given(
        st.integers(min_value=0, max_value=2**32 - 1),
        st.floats(min_value=0.0, max_value=1.0),
        st.floats(min_value=0.0, max_value=1.0),
    )
    def test_linearity_and_convexity(self, seed, w1, w2):
        rng = np.random.default_rng(seed)
        x = make_wave(rng.uniform(-1, 1, 64))
        y = make_wave(rng.uniform(-1, 1, 64))
        b1 = oa_blend(x, y, w1).samples
        b2 = oa_blend(x, y, w2).samples
        mid = oa_blend(x, y, (w1 + w2) / 2).samples
        assert np.max(np.abs(b1 + b2 - 2 * mid)) < 1e-12
        bound = max(np.max(np.abs(x.samples)), np.max(np.abs(y.samples)))
        assert np.max(np.abs(b1)) <= bound + 1e-15


class TestOaGrid:
    def test_default_step(self):
        g = oa_grid(0.1)
        assert len(g) == 11
        assert g.coefficients[0] == 0.0
        assert g.coefficients[-1] == 1.0
        assert np.allclose(np.diff(g.coefficients), 0.1, atol=1e-9)

    def test_fine_step(self):
        assert len(oa_grid(0.05)) == 21

    @pytest.mark.parametrize("k", [0.3, 0.0, -0.1, 0.11])
    def test_step_out_of_range(self, k):
        with pytest.raises(ValueError):
            oa_grid(k)

    def test_non_integral_reciprocal(self):
        with pytest.raises(ValueError, match="integral"):
            oa_grid(0.07)

    def test_sorted_unique_endpoints(self):
        for k in (0.1, 0.05, 0.02, 0.01):
            g = oa_grid(k)
            c = g.coefficients
            assert np.all(np.diff(c) > 0)
            assert c[0] == 0.0 and c[-1] == 1.0
            assert len(np.unique(c)) == len(c)

    def test_descending_and_nearest(self):
        g = oa_grid(0.1)
        assert g.descending()[0] == 1.0
        assert g.descending()[-1] == 0.0
        assert g.nearest(0.42) == pytest.approx(0.4)
        assert g.nearest(0.97) == pytest.approx(1.0)


class TestWaveformValidation:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            make_wave([0.0, np.nan])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            make_wave([])

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError, match="positive"):
            Waveform(np.zeros(10), sample_rate=0)
