"""Log-mel filterbank extraction and SpecAugment masking.

Feature matrices are plain numpy arrays of shape (n_mels, n_frames).
Frames are taken without padding or centering, so
``n_frames = (len(samples) - window) // hop + 1``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .audio import Waveform


@dataclass(frozen=True)
class FbankConfig:
    n_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    mel_low_hz: float = 20.0
    mel_high_hz: float | None = None  # None = Nyquist
    energy_floor: float = 1e-10
    pre_emphasis: float | None = None
    mean_norm: bool = False

    def __post_init__(self):
        if self.n_mels < 1:
            raise ValueError(f"n_mels must be >= 1, got {self.n_mels}")
        if not self.window_ms > self.hop_ms > 0:
            raise ValueError(
                f"need window_ms > hop_ms > 0, got {self.window_ms}/{self.hop_ms}"
            )
        if self.energy_floor <= 0:
            raise ValueError("energy_floor must be positive")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def fingerprint(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class AugmentPolicy:
    """One contiguous mask per axis: widths drawn uniformly from 0..max."""

    max_time_mask_frames: int = 5
    max_freq_mask_channels: int = 4
    masks_per_axis: int = 1
    mask_value: float = 0.0

    def __post_init__(self):
        if self.max_time_mask_frames < 0 or self.max_freq_mask_channels < 0:
            raise ValueError("mask bounds must be non-negative")
        if self.masks_per_axis < 0:
            raise ValueError("masks_per_axis must be non-negative")


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FbankConfig, sample_rate: int) -> np.ndarray:
    """Triangular mel filters as a (n_mels, fft_size // 2 + 1) matrix."""
    high = cfg.mel_high_hz if cfg.mel_high_hz is not None else sample_rate / 2.0
    if not 0 <= cfg.mel_low_hz < high <= sample_rate / 2.0:
        raise ValueError(
            f"invalid mel band edges [{cfg.mel_low_hz}, {high}] at {sample_rate} Hz"
        )
    mel_points = np.linspace(_hz_to_mel(cfg.mel_low_hz), _hz_to_mel(high), cfg.n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    bin_freqs = np.arange(cfg.fft_size // 2 + 1) * sample_rate / cfg.fft_size
    filters = np.zeros((cfg.n_mels, bin_freqs.size), dtype=np.float64)
    for m in range(cfg.n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (bin_freqs - left) / max(center - left, 1e-12)
        falling = (right - bin_freqs) / max(right - center, 1e-12)
        filters[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return filters


def frame_count(n_samples: int, window: int, hop: int) -> int:
    if n_samples < window:
        raise ValueError(f"waveform of {n_samples} samples is shorter than one window ({window})")
    return (n_samples - window) // hop + 1


def fbank(w: Waveform, cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    """Natural-log mel filter energies, shape (n_mels, n_frames).

    Energies are floored at ``cfg.energy_floor`` before the log, so pure
    silence yields a constant matrix instead of -inf.
    """
    window = cfg.window_samples(w.sample_rate)
    hop = cfg.hop_samples(w.sample_rate)
    if cfg.fft_size < window:
        raise ValueError(f"fft_size {cfg.fft_size} smaller than window {window}")
    samples = w.samples
    if cfg.pre_emphasis:
        samples = np.concatenate(([samples[0]], samples[1:] - cfg.pre_emphasis * samples[:-1]))
    n_frames = frame_count(samples.size, window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)
    spectrum = np.fft.rfft(frames * hann, n=cfg.fft_size, axis=1)
    power = np.abs(spectrum) ** 2
    energies = power @ mel_filterbank(cfg, w.sample_rate).T
    feats = np.log(np.maximum(energies, cfg.energy_floor)).T
    if cfg.mean_norm:
        feats = feats - feats.mean(axis=1, keepdims=True)
    return feats


def spec_augment(
    f: np.ndarray,
    policy: AugmentPolicy = AugmentPolicy(),
    seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Apply seeded time and frequency masking; returns a masked copy.

    Per mask, a width is drawn uniformly from 0..max (clipped to the
    matrix extent) and a start position uniformly over the valid range.
    Passing a Generator lets callers draw several augmentations from one
    reproducible stream.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = np.array(f, copy=True)
    n_mels, n_frames = out.shape
    for _ in range(policy.masks_per_axis):
        width = int(rng.integers(0, policy.max_time_mask_frames + 1))
        width = min(width, n_frames)
        start = int(rng.integers(0, n_frames - width + 1))
        if width > 0:
            out[:, start : start + width] = policy.mask_value
    for _ in range(policy.masks_per_axis):
        width = int(rng.integers(0, policy.max_freq_mask_channels + 1))
        width = min(width, n_mels)
        start = int(rng.integers(0, n_mels - width + 1))
        if width > 0:
            out[start : start + width, :] = policy.mask_value
    return out


class FeatureCache:
    """Optional on-disk cache of feature matrices, keyed by utterance id,
    stream tag, and feature-config hash."""

    def __init__(self, root: Path | str, cfg: FbankConfig):
        self.dir = Path(root) / "features" / cfg.fingerprint()
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, utt_id: str, stream: str) -> Path:
        return self.dir / f"{utt_id}.{stream}.npy"

    def get(self, utt_id: str, stream: str) -> np.ndarray | None:
        path = self._path(utt_id, stream)
        if not path.exists():
            return None
        return np.load(path)

    def put(self, utt_id: str, stream: str, feats: np.ndarray) -> None:
        np.save(self._path(utt_id, stream), feats)
