"""Precomputed supervision targets: quality scores and per-coefficient WERs.

Both caches are append-only JSON-Lines files so interrupted sweeps can
resume; records carry the backend/scorer ids and the grid, and lookups
match on all of them, so switching a backend invalidates old entries
without touching the file.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import backends
from .audio import OaGrid, align_pair, oa_blend
from .backends import BackendDescriptor, BackendError
from .manifest import ManifestRecord
from .losses import pq_target
from .metrics import edit_distance, normalize_text

log = logging.getLogger(__name__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class _JsonlCache:
    """Append-only JSONL store; the newest record for a key wins."""

    def __init__(self, path):
        self.path = Path(path)
        self._entries: dict = {}
        if self.path.exists():
            with open(self.path) as f:
                for line in f:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[self._key(rec)] = rec

    def _key(self, rec: dict):
        raise NotImplementedError

    def _append(self, rec: dict) -> None:
        self._entries[self._key(rec)] = rec
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as f:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


class PqTargetCache(_JsonlCache):
    """Per-utterance quality targets keyed by (utt_id, scorer id)."""

    def _key(self, rec):
        return (rec["utt_id"], rec["scorer_id"])

    def get(self, utt_id: str, scorer_id: str) -> float | None:
        rec = self._entries.get((utt_id, scorer_id))
        return None if rec is None else float(rec["values"][0])

    def put(self, utt_id: str, scorer_id: str, target: float, sig: float, bak: float) -> None:
        self._append(
            {
                "utt_id": utt_id,
                "scorer_id": scorer_id,
                "values": [target],
                "sig": sig,
                "bak": bak,
                "created_at": _now(),
            }
        )


class WerVectorCache(_JsonlCache):
    """Per-utterance WER vectors keyed by (utt_id, backend ids, grid)."""

    def _key(self, rec):
        return (
            rec["utt_id"],
            rec["backend_ids"]["enhancer"],
            rec["backend_ids"]["recognizer"],
            tuple(rec["grid"]),
        )

    def get(self, utt_id: str, enhancer_id: str, recognizer_id: str, grid: OaGrid):
        rec = self._entries.get(
            (utt_id, enhancer_id, recognizer_id, tuple(grid.descending().tolist()))
        )
        return None if rec is None else np.asarray(rec["values"], dtype=np.float64)

    def put(self, utt_id: str, enhancer_id: str, recognizer_id: str, grid: OaGrid, values) -> None:
        self._append(
            {
                "utt_id": utt_id,
                "backend_ids": {"enhancer": enhancer_id, "recognizer": recognizer_id},
                "grid": grid.descending().tolist(),
                "values": [float(v) for v in values],
                "created_at": _now(),
            }
        )


@dataclass(frozen=True)
class WerRow:
    """Edit-distance outcome for one (utterance, coefficient) pair."""

    omega: float
    distance: int
    ref_len: int

    @property
    def wer(self) -> float:
        return self.distance / self.ref_len


def compute_wer_rows(
    rec: ManifestRecord,
    grid: OaGrid,
    enhancer: BackendDescriptor,
    recognizer: BackendDescriptor,
) -> list[WerRow]:
    """Blend, transcribe, and score the utterance at every grid coefficient.

    Rows come back in ascending-coefficient order.
    """
    if not rec.transcript or not normalize_text(rec.transcript):
        raise BackendError("missing or empty reference transcript", rec.utt_id)
    ref = normalize_text(rec.transcript)
    x = rec.load_noisy()
    y_hat = backends.enhance(x, enhancer, enhanced_path=rec.enhanced_path, utt_id=rec.utt_id)
    x, y_hat = align_pair(x, y_hat)
    rows = []
    for omega in grid.coefficients:
        blended = oa_blend(x, y_hat, float(omega))
        hyp_text = backends.transcribe(
            blended, recognizer, utt_id=rec.utt_id, omega=float(omega)
        )
        hyp = normalize_text(hyp_text)
        rows.append(WerRow(omega=float(omega), distance=edit_distance(ref, hyp), ref_len=len(ref)))
    return rows


def build_wer_vector(
    rec: ManifestRecord,
    grid: OaGrid,
    enhancer: BackendDescriptor,
    recognizer: BackendDescriptor,
    cache: WerVectorCache | None = None,
) -> np.ndarray:
    """Per-coefficient WERs in descending-coefficient order (index 0 is
    omega=1.0). Served from the cache when an entry matches."""
    if cache is not None:
        hit = cache.get(rec.utt_id, enhancer.id, recognizer.id, grid)
        if hit is not None:
            return hit
    rows = compute_wer_rows(rec, grid, enhancer, recognizer)
    values = np.array([row.wer for row in reversed(rows)], dtype=np.float64)
    if cache is not None:
        cache.put(rec.utt_id, enhancer.id, recognizer.id, grid, values)
    return values


def build_pq_targets(
    records: list[ManifestRecord],
    scorer: BackendDescriptor,
    cache: PqTargetCache,
) -> tuple[dict[str, float], list[tuple[str, str]]]:
    """Score every utterance's noisy audio into a blend-coefficient target.

    Failures are recorded and skipped; returns (targets, failures).
    """
    targets: dict[str, float] = {}
    failures: list[tuple[str, str]] = []
    for rec in records:
        cached = cache.get(rec.utt_id, scorer.id)
        if cached is not None:
            targets[rec.utt_id] = cached
            continue
        try:
            x = rec.load_noisy()
            mos = backends.score(
                x,
                scorer,
                clean=rec.load_clean(),
                snr_db=rec.meta.get("snr_db"),
                utt_id=rec.utt_id,
            )
        except (BackendError, ValueError) as exc:
            log.warning("scorer failed on %s: %s", rec.utt_id, exc)
            failures.append((rec.utt_id, str(exc)))
            continue
        target = pq_target(mos)
        cache.put(rec.utt_id, scorer.id, target, mos.sig, mos.bak)
        targets[rec.utt_id] = target
    return targets, failures
