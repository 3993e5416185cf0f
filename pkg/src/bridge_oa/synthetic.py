"""Synthetic desk-scale corpora: tones in white noise at known SNRs.

These keep the whole pipeline testable without any real corpus or
model. Every utterance is a pure tone ("clean") plus white noise
scaled to an exact target SNR, with a random short transcript so WER
machinery has something to chew on.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import Waveform, save_wav
from .manifest import ManifestRecord, save_manifest

VOCAB = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima "
    "mike november oscar papa quebec romeo sierra tango uniform victor whiskey "
    "xray yankee zulu"
).split()


def tone_with_noise(
    snr_db: float,
    duration_s: float = 1.0,
    sample_rate: int = 16000,
    freq_hz: float = 440.0,
    amplitude: float = 0.1,
    rng: np.random.Generator | None = None,
) -> tuple[Waveform, Waveform]:
    """Returns (noisy, clean); the noise is scaled for an exact SNR."""
    rng = rng or np.random.default_rng(0)
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    clean = amplitude * np.sin(2 * np.pi * freq_hz * t)
    noise = rng.standard_normal(clean.size)
    p_sig = np.mean(clean**2)
    p_noise = np.mean(noise**2)
    noise *= np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return (
        Waveform(clean + noise, sample_rate),
        Waveform(clean, sample_rate),
    )


def make_corpus(
    root,
    counts: dict[str, int],
    snr_range: tuple[float, float] = (-5.0, 20.0),
    duration_s: float = 1.0,
    sample_rate: int = 16000,
    seed: int = 0,
) -> tuple[list[ManifestRecord], Path]:
    """Generate WAVs plus a manifest; ``counts`` maps subset tags to sizes.

    Each record carries the exact mixing SNR in ``meta['snr_db']`` and
    a clean_path, so both synthetic-scorer modes work.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    records = []
    for subset, n in counts.items():
        subset_dir = root / subset
        subset_dir.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            utt_id = f"{subset}_{i:04d}"
            snr_db = float(rng.uniform(*snr_range))
            freq_hz = float(rng.uniform(200.0, 3000.0))
            noisy, clean = tone_with_noise(
                snr_db, duration_s, sample_rate, freq_hz, rng=rng
            )
            noisy_path = subset_dir / f"{utt_id}.wav"
            clean_path = subset_dir / f"{utt_id}.clean.wav"
            save_wav(noisy, noisy_path)
            save_wav(clean, clean_path)
            n_words = int(rng.integers(4, 9))
            words = [VOCAB[int(rng.integers(0, len(VOCAB)))] for _ in range(n_words)]
            records.append(
                ManifestRecord(
                    utt_id=utt_id,
                    noisy_path=str(noisy_path),
                    clean_path=str(clean_path),
                    transcript=" ".join(words),
                    subset=subset,
                    meta={"snr_db": snr_db, "freq_hz": freq_hz},
                )
            )
    manifest_path = root / "manifest.jsonl"
    save_manifest(records, manifest_path)
    return records, manifest_path


def fake_recognizer_table(
    records: list[ManifestRecord],
    grid_coefficients,
    wer_fn,
) -> dict[tuple[str, float], str]:
    """Build a lookup table for the scriptable fake recognizer.

    ``wer_fn(record, omega) -> float`` sets the desired error rate; the
    hypothesis realizes it by substituting ``round(wer * len(ref))``
    reference words with an out-of-vocabulary token.
    """
    table = {}
    for rec in records:
        ref = rec.transcript.split()
        for omega in grid_coefficients:
            omega = float(omega)
            n_err = int(round(wer_fn(rec, omega) * len(ref)))
            n_err = min(n_err, len(ref))
            hyp = list(ref)
            for j in range(n_err):
                hyp[j] = f"err{j}"
            table[(rec.utt_id, omega)] = " ".join(hyp)
    return table
