"""Filterbank and SpecAugment behavior."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bridge_oa.audio import Waveform
from bridge_oa.features import (
    AugmentPolicy,
    FbankConfig,
    FeatureCache,
    fbank,
    frame_count,
    mel_filterbank,
    spec_augment,
)


def wave(n, rate=16000, seed=0):
    rng = np.random.default_rng(seed)
    return Waveform(rng.uniform(-0.5, 0.5, n), rate)


class TestFbank:
    def test_one_second_shape(self):
        feats = fbank(wave(16000))
        assert feats.shape == (80, 98)

    def test_too_short_errors(self):
        with pytest.raises(ValueError, match="shorter than one window"):
            fbank(wave(399))

    def test_silence_hits_floor(self):
        cfg = FbankConfig()
        feats = fbank(Waveform(np.zeros(1600)), cfg)
        assert np.allclose(feats, np.log(cfg.energy_floor))
        assert np.ptp(feats) == 0.0

    def test_all_finite(self):
        feats = fbank(wave(8000, seed=3))
        assert np.all(np.isfinite(feats))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(min_value=400, max_value=50000))
    def test_frame_count_formula(self, n):
        feats = fbank(wave(n, seed=n))
        assert feats.shape[1] == (n - 400) // 160 + 1

    def test_frame_count_formula_many_lengths(self):
        rng = np.random.default_rng(11)
        for n in rng.integers(400, 100000, size=1000):
            assert frame_count(int(n), 400, 160) == (int(n) - 400) // 160 + 1

    def test_scale_covariance_in_log_domain(self):
        w = wave(4000, seed=5)
        base = fbank(w)
        for c in (2.0, 0.5, 10.0):
            scaled = fbank(Waveform(np.clip(c * w.samples, -1e9, 1e9), w.sample_rate))
            above_floor = base > np.log(1e-10) + 1.0
            delta = (scaled - base)[above_floor]
            assert np.max(np.abs(delta - 2.0 * np.log(c))) < 1e-6

    def test_mean_norm_toggle(self):
        w = wave(4000, seed=9)
        feats = fbank(w, FbankConfig(mean_norm=True))
        assert np.allclose(feats.mean(axis=1), 0.0, atol=1e-9)

    def test_filterbank_shape_and_coverage(self):
        cfg = FbankConfig()
        filters = mel_filterbank(cfg, 16000)
        assert filters.shape == (80, 257)
        assert np.all(filters >= 0)
        assert np.all(filters.sum(axis=1) > 0)

    def test_fft_smaller_than_window_errors(self):
        with pytest.raises(ValueError, match="fft_size"):
            fbank(wave(16000), FbankConfig(fft_size=256))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FbankConfig(n_mels=0)
        with pytest.raises(ValueError):
            FbankConfig(window_ms=10, hop_ms=25)


class TestSpecAugment:
    def feats(self, seed=0, shape=(80, 120)):
        return np.random.default_rng(seed).normal(size=shape)

    def test_deterministic_given_seed(self):
        f = self.feats()
        a = spec_augment(f, AugmentPolicy(), seed=123)
        b = spec_augment(f, AugmentPolicy(), seed=123)
        assert np.array_equal(a, b)

    def test_zero_width_leaves_input(self):
        f = self.feats()
        policy = AugmentPolicy(max_time_mask_frames=0, max_freq_mask_channels=0)
        assert np.array_equal(spec_augment(f, policy, seed=5), f)

    def test_mask_extent_bounds(self):
        f = np.ones((80, 120))
        for seed in range(1000):
            out = spec_augment(f, AugmentPolicy(), seed=seed)
            zero_cols = int(np.sum(np.all(out == 0.0, axis=0)))
            zero_rows = int(np.sum(np.all(out == 0.0, axis=1)))
            assert zero_cols <= 5
            assert zero_rows <= 4

    @pytest.mark.parametrize("seed", [7, 77, 777, 7777])
    def test_changed_cells_form_one_band_per_axis(self, seed):
        f = self.feats(seed=2)
        out = spec_augment(f, AugmentPolicy(mask_value=np.pi), seed=seed)
        changed = out != f
        assert np.array_equal(out[~changed], f[~changed])
        # with a sentinel mask value, changed cells are exactly the union of
        # one column band (time mask, all rows) and one row band (freq mask)
        time_cols = np.nonzero(np.all(changed, axis=0))[0]
        freq_rows = np.nonzero(np.all(changed, axis=1))[0]
        assert time_cols.size <= 5
        assert freq_rows.size <= 4
        if time_cols.size > 1:
            assert np.all(np.diff(time_cols) == 1)
        if freq_rows.size > 1:
            assert np.all(np.diff(freq_rows) == 1)
        expected = np.zeros_like(changed)
        expected[:, time_cols] = True
        expected[freq_rows, :] = True
        assert np.array_equal(changed, expected)

    def test_widths_clip_to_small_matrices(self):
        f = self.feats(seed=3, shape=(2, 3))
        for seed in range(50):
            out = spec_augment(f, AugmentPolicy(), seed=seed)
            assert out.shape == f.shape

    def test_input_never_mutated(self):
        f = self.feats(seed=4)
        snapshot = f.copy()
        spec_augment(f, AugmentPolicy(), seed=9)
        assert np.array_equal(f, snapshot)

    def test_generator_stream_advances(self):
        f = self.feats(seed=6)
        rng = np.random.default_rng(42)
        first = spec_augment(f, AugmentPolicy(), rng)
        second = spec_augment(f, AugmentPolicy(), rng)
        rng2 = np.random.default_rng(42)
        assert np.array_equal(first, spec_augment(f, AugmentPolicy(), rng2))
        assert np.array_equal(second, spec_augment(f, AugmentPolicy(), rng2))

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            AugmentPolicy(max_time_mask_frames=-1)


class TestFeatureCache:
    def test_round_trip_and_config_keying(self, tmp_path):
        cfg_a = FbankConfig()
        cfg_b = FbankConfig(n_mels=40)
        cache_a = FeatureCache(tmp_path, cfg_a)
        cache_b = FeatureCache(tmp_path, cfg_b)
        feats = np.random.default_rng(0).normal(size=(80, 10))
        cache_a.put("utt1", "noisy", feats)
        assert np.array_equal(cache_a.get("utt1", "noisy"), feats)
        assert cache_b.get("utt1", "noisy") is None
