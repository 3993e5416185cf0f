"""Waveform I/O, alignment, and observation-addition blending.

Audio moves through the pipeline as mono float arrays in [-1, 1]. The
blend `omega * noisy + (1 - omega) * enhanced` is computed on raw
amplitudes in the time domain, with no re-normalization afterwards.
"""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass, field

import numpy as np

PCM16_SCALE = 32768  # one LSB of 16-bit PCM is 1/32768 full scale
DEFAULT_SAMPLE_RATE = 16000
ALIGN_TOLERANCE_S = 0.5


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float64 samples plus sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {samples.shape}")
        if samples.size < 1:
            raise ValueError("waveform must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class OaGrid:
    """Uniform blend-coefficient grid from 0 to 1 with step ``step``."""

    step: float
    coefficients: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.coefficients.size

    def descending(self) -> np.ndarray:
        """Coefficients ordered 1.0 down to 0.0 (the WER-vector convention)."""
        return self.coefficients[::-1].copy()

    def nearest(self, omega: float) -> float:
        """Snap an arbitrary coefficient in [0, 1] to the closest grid point."""
        idx = int(np.argmin(np.abs(self.coefficients - omega)))
        return float(self.coefficients[idx])

    def fingerprint(self) -> str:
        return f"grid:k={self.step:.6g}:n={len(self)}"


def oa_grid(k: float) -> OaGrid:
    """Build the coefficient grid [0, k, 2k, ..., 1] for step k in (0, 0.1]."""
    if not 0.0 < k <= 0.1:
        raise ValueError(f"grid step must lie in (0, 0.1], got {k}")
    n = round(1.0 / k)
    if abs(1.0 / k - n) > 1e-9:
        raise ValueError(f"1/k must be integral, got 1/{k} = {1.0 / k}")
    coeffs = np.arange(n + 1, dtype=np.float64) / n
    return OaGrid(step=k, coefficients=coeffs)


def _read_pcm16(source, channel: int | None, label: str) -> Waveform:
    try:
        with wave.open(source, "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise ValueError(f"unreadable or non-PCM WAV {label}: {exc}") from exc
    except OSError as exc:
        raise ValueError(f"cannot open WAV {label}: {exc}") from exc
    if sampwidth != 2:
        raise ValueError(
            f"unsupported encoding in {label}: expected 16-bit PCM, got {8 * sampwidth}-bit"
        )
    data = np.frombuffer(raw, dtype="<i2").reshape(-1, n_channels)
    if channel is None:
        if n_channels != 1:
            raise ValueError(
                f"{label} has {n_channels} channels; pass an explicit channel index"
            )
        channel = 0
    if not 0 <= channel < n_channels:
        raise ValueError(f"channel {channel} absent in {label} ({n_channels} channel(s))")
    samples = data[:, channel].astype(np.float64) / PCM16_SCALE
    return Waveform(samples=samples, sample_rate=rate)


def load_wav(path, channel: int | None = None) -> Waveform:
    """Read a 16-bit PCM RIFF file as a mono waveform in [-1, 1].

    ``channel`` selects one channel of a multi-channel file (zero-based).
    With ``channel=None`` the file must be mono.
    """
    return _read_pcm16(str(path), channel, str(path))


def wav_from_bytes(data: bytes, channel: int | None = None) -> Waveform:
    """Parse in-memory 16-bit PCM WAV bytes (inverse of :func:`wav_bytes`)."""
    return _read_pcm16(io.BytesIO(data), channel, "payload")


def _pcm16_frames(w: Waveform) -> bytes:
    scaled = np.round(w.samples * PCM16_SCALE)
    return np.clip(scaled, -PCM16_SCALE, PCM16_SCALE - 1).astype("<i2").tobytes()


def save_wav(w: Waveform, path) -> None:
    """Write a waveform as mono 16-bit PCM; samples are clipped to full scale."""
    try:
        with wave.open(str(path), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(w.sample_rate)
            wf.writeframes(_pcm16_frames(w))
    except OSError as exc:
        raise ValueError(f"cannot write WAV file {path}: {exc}") from exc


def wav_bytes(w: Waveform) -> bytes:
    """Serialize to in-memory 16-bit PCM WAV bytes (for HTTP backends)."""
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(_pcm16_frames(w))
    return buf.getvalue()


def align_pair(
    x: Waveform, y_hat: Waveform, tolerance_s: float = ALIGN_TOLERANCE_S
) -> tuple[Waveform, Waveform]:
    """Truncate both signals to the shorter prefix so they can be blended.

    A length difference beyond ``tolerance_s`` signals an enhancement
    backend fault and raises instead of silently truncating.
    """
    if x.sample_rate != y_hat.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: {x.sample_rate} vs {y_hat.sample_rate}"
        )
    diff = abs(len(x) - len(y_hat))
    if diff > tolerance_s * x.sample_rate:
        raise ValueError(
            f"length difference {diff} samples exceeds tolerance "
            f"{tolerance_s} s at {x.sample_rate} Hz"
        )
    n = min(len(x), len(y_hat))
    return (
        Waveform(x.samples[:n], x.sample_rate),
        Waveform(y_hat.samples[:n], y_hat.sample_rate),
    )


def oa_blend(x: Waveform, y_hat: Waveform, omega: float) -> Waveform:
    """Blend noisy and enhanced audio: ``omega * x + (1 - omega) * y_hat``.

    omega=1 returns the noisy signal exactly, omega=0 the enhanced one.
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"blend coefficient must lie in [0, 1], got {omega}")
    if x.sample_rate != y_hat.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: {x.sample_rate} vs {y_hat.sample_rate}"
        )
    if len(x) != len(y_hat):
        raise ValueError(
            f"length mismatch: {len(x)} vs {len(y_hat)} (align_pair first)"
        )
    blended = omega * x.samples + (1.0 - omega) * y_hat.samples
    return Waveform(blended, x.sample_rate)
