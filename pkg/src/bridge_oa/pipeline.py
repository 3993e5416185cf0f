"""End-to-end inference and corpus evaluation.

One utterance flows: load noisy audio, run the enhancement front-end,
extract features of both streams, run the bridging module, blend with
the selected coefficient, and transcribe the blend. Corpus reports use
pooled word error rate (total edit distance over total reference
words); per-utterance failures are excluded from the pooled numbers
but stay visible in the report.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import backends
from .audio import OaGrid, Waveform, align_pair, oa_blend
from .backends import BackendDescriptor, BackendError
from .features import FbankConfig, fbank
from .manifest import ManifestRecord
from .metrics import edit_distance, normalize_text
from .model import BridgingModule, ForwardOutput
from .targets import WerRow, WerVectorCache, compute_wer_rows
from .training import select_omega


class StageFailure(RuntimeError):
    """A pipeline stage failed for one utterance."""

    def __init__(self, utt_id: str, stage: str, cause: Exception):
        super().__init__(f"[utt {utt_id}] stage {stage!r}: {cause}")
        self.utt_id = utt_id
        self.stage = stage
        self.cause = cause


@dataclass
class InferResult:
    utt_id: str
    omega: float
    blended: Waveform
    hypothesis: str
    output: ForwardOutput


@dataclass
class SubsetStats:
    utterances: int = 0
    failed: int = 0
    errors: int = 0
    ref_words: int = 0

    @property
    def wer(self) -> float:
        return self.errors / self.ref_words if self.ref_words else 0.0

    def add(self, distance: int, ref_len: int) -> None:
        self.utterances += 1
        self.errors += distance
        self.ref_words += ref_len

    def as_dict(self) -> dict:
        return {
            "utterances": self.utterances,
            "failed": self.failed,
            "errors": self.errors,
            "ref_words": self.ref_words,
            "wer": self.wer,
        }


@dataclass
class EvalReport:
    fingerprint: str
    subsets: dict[str, SubsetStats] = field(default_factory=dict)
    overall: SubsetStats = field(default_factory=SubsetStats)
    rows: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "fingerprint": self.fingerprint,
                "overall": self.overall.as_dict(),
                "subsets": {k: v.as_dict() for k, v in sorted(self.subsets.items())},
                "rows": self.rows,
                "failures": self.failures,
            },
            indent=2,
            sort_keys=True,
        )

    def format_table(self) -> str:
        lines = [f"{'subset':<10} {'utts':>6} {'failed':>6} {'ref':>8} {'errs':>8} {'wer':>8}"]
        for name in sorted(self.subsets):
            s = self.subsets[name]
            lines.append(
                f"{name:<10} {s.utterances:>6} {s.failed:>6} {s.ref_words:>8} "
                f"{s.errors:>8} {100 * s.wer:>7.2f}%"
            )
        s = self.overall
        lines.append(
            f"{'overall':<10} {s.utterances:>6} {s.failed:>6} {s.ref_words:>8} "
            f"{s.errors:>8} {100 * s.wer:>7.2f}%"
        )
        return "\n".join(lines)


def _fingerprint(parts: dict) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:16]


def infer_utterance(
    rec: ManifestRecord,
    model: BridgingModule,
    enhancer: BackendDescriptor,
    recognizer: BackendDescriptor | None,
    strategy: str,
    grid: OaGrid,
    fbank_cfg: FbankConfig = FbankConfig(),
) -> InferResult:
    """Full pipeline for one utterance; failures carry the stage name.

    With ``recognizer=None`` the transcription stage is skipped (used
    by the coefficient histogram).
    """

    def run(stage, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, OSError, BackendError) as exc:
            raise StageFailure(rec.utt_id, stage, exc) from exc

    x = run("load", rec.load_noisy)
    y_hat = run(
        "enhance", backends.enhance, x, enhancer,
        enhanced_path=rec.enhanced_path, utt_id=rec.utt_id,
    )
    x, y_hat = run("align", align_pair, x, y_hat)
    noisy_feat = run("features", fbank, x, fbank_cfg)
    enh_feat = run("features", fbank, y_hat, fbank_cfg)
    output = run("forward", model.predict, noisy_feat, enh_feat)
    omega = select_omega(output, strategy, grid)
    blended = run("blend", oa_blend, x, y_hat, omega)
    hypothesis = ""
    if recognizer is not None:
        hypothesis = run(
            "transcribe", backends.transcribe, blended, recognizer,
            utt_id=rec.utt_id, omega=omega,
        )
    return InferResult(rec.utt_id, omega, blended, hypothesis, output)


def _score_into_report(report: EvalReport, rec: ManifestRecord, omega: float, hyp_text: str):
    ref = normalize_text(rec.transcript or "")
    if not ref:
        raise StageFailure(rec.utt_id, "reference", ValueError("missing or empty transcript"))
    distance = edit_distance(ref, normalize_text(hyp_text))
    report.subsets.setdefault(rec.subset, SubsetStats()).add(distance, len(ref))
    report.overall.add(distance, len(ref))
    report.rows.append(
        {
            "utt_id": rec.utt_id,
            "subset": rec.subset,
            "omega": omega,
            "errors": distance,
            "ref_words": len(ref),
            "wer": distance / len(ref),
        }
    )


def _note_failure(report: EvalReport, rec: ManifestRecord, exc: StageFailure):
    report.subsets.setdefault(rec.subset, SubsetStats()).failed += 1
    report.overall.failed += 1
    report.failures.append({"utt_id": rec.utt_id, "stage": exc.stage, "error": str(exc.cause)})


def evaluate(
    records: list[ManifestRecord],
    model: BridgingModule,
    enhancer: BackendDescriptor,
    recognizer: BackendDescriptor,
    strategy: str,
    grid: OaGrid,
    fbank_cfg: FbankConfig = FbankConfig(),
) -> EvalReport:
    """Model-driven evaluation: pooled WER per subset and overall."""
    report = EvalReport(
        fingerprint=_fingerprint(
            {
                "model": model.cfg.fingerprint(),
                "enhancer": enhancer.id,
                "recognizer": recognizer.id,
                "strategy": strategy,
                "grid": grid.fingerprint(),
            }
        )
    )
    for rec in records:
        try:
            result = infer_utterance(rec, model, enhancer, recognizer, strategy, grid, fbank_cfg)
            _score_into_report(report, rec, result.omega, result.hypothesis)
        except StageFailure as exc:
            _note_failure(report, rec, exc)
    return report


def _evaluate_stream(
    records: list[ManifestRecord],
    enhancer: BackendDescriptor,
    recognizer: BackendDescriptor,
    omega: float | None,
    source: str,
) -> EvalReport:
    report = EvalReport(
        fingerprint=_fingerprint(
            {
                "enhancer": enhancer.id,
                "recognizer": recognizer.id,
                "omega": omega,
                "source": source,
            }
        )
    )
    for rec in records:
        try:
            try:
                x = rec.load_noisy()
            except (ValueError, OSError) as exc:
                raise StageFailure(rec.utt_id, "load", exc) from exc
            try:
                if source == "noisy":
                    audio, context_omega = x, 1.0
                else:
                    y_hat = backends.enhance(
                        x, enhancer, enhanced_path=rec.enhanced_path, utt_id=rec.utt_id
                    )
                    if source == "enhanced":
                        audio, context_omega = y_hat, 0.0
                    else:
                        xa, ya = align_pair(x, y_hat)
                        audio, context_omega = oa_blend(xa, ya, omega), omega
            except (ValueError, BackendError) as exc:
                raise StageFailure(rec.utt_id, "enhance", exc) from exc
            try:
                hyp = backends.transcribe(
                    audio, recognizer, utt_id=rec.utt_id, omega=context_omega
                )
            except BackendError as exc:
                raise StageFailure(rec.utt_id, "transcribe", exc) from exc
            _score_into_report(report, rec, context_omega, hyp)
        except StageFailure as exc:
            _note_failure(report, rec, exc)
    return report


def evaluate_fixed_omega(
    records, enhancer, recognizer, omega: float
) -> EvalReport:
    """Evaluation with one preset blend coefficient for every utterance."""
    return _evaluate_stream(records, enhancer, recognizer, omega, source="blend")


def evaluate_passthrough(
    records, enhancer, recognizer, which: str
) -> EvalReport:
    """Evaluate raw noisy audio (``which='noisy'``) or the enhanced
    stream alone (``which='enhanced'``) without blending."""
    if which not in ("noisy", "enhanced"):
        raise ValueError(f"which must be 'noisy' or 'enhanced', got {which!r}")
    return _evaluate_stream(records, enhancer, recognizer, None, source=which)


@dataclass
class SweepReport:
    """Pooled WER for every grid coefficient, ascending order."""

    grid_step: float
    rows: list[dict]
    failures: list[dict]

    def to_json(self) -> str:
        return json.dumps(
            {"grid_step": self.grid_step, "rows": self.rows, "failures": self.failures},
            indent=2,
            sort_keys=True,
        )

    def format_table(self) -> str:
        lines = [f"{'OA':>5} {'errs':>8} {'ref':>8} {'wer':>8}"]
        for row in self.rows:
            lines.append(
                f"{row['omega']:>5.2f} {row['errors']:>8} {row['ref_words']:>8} "
                f"{100 * row['wer']:>7.2f}%"
            )
        return "\n".join(lines)


def sweep(
    records: list[ManifestRecord],
    grid: OaGrid,
    enhancer: BackendDescriptor,
    recognizer: BackendDescriptor,
    cache: WerVectorCache | None = None,
    workers: int = 1,
) -> SweepReport:
    """Pooled WER at every grid coefficient over the manifest.

    Also fills the per-utterance WER-vector cache when one is given;
    cached utterances are not re-transcribed. Utterance-level work may
    run in parallel; aggregation is order-independent.
    """

    def rows_for(rec: ManifestRecord) -> list[WerRow]:
        if cache is not None:
            values = cache.get(rec.utt_id, enhancer.id, recognizer.id, grid)
            if values is not None:
                ref_len = len(normalize_text(rec.transcript or ""))
                if ref_len == 0:
                    raise BackendError("missing or empty reference transcript", rec.utt_id)
                ascending = values[::-1]
                return [
                    WerRow(float(omega), int(round(v * ref_len)), ref_len)
                    for omega, v in zip(grid.coefficients, ascending)
                ]
        return compute_wer_rows(rec, grid, enhancer, recognizer)

    results: dict[str, list[WerRow]] = {}
    failures: list[dict] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {rec.utt_id: pool.submit(rows_for, rec) for rec in records}
        for rec in records:
            try:
                results[rec.utt_id] = futures[rec.utt_id].result()
            except (BackendError, ValueError) as exc:
                failures.append({"utt_id": rec.utt_id, "error": str(exc)})
    else:
        for rec in records:
            try:
                results[rec.utt_id] = rows_for(rec)
            except (BackendError, ValueError) as exc:
                failures.append({"utt_id": rec.utt_id, "error": str(exc)})

    if cache is not None:
        for rec in records:
            rows = results.get(rec.utt_id)
            if rows is not None and cache.get(rec.utt_id, enhancer.id, recognizer.id, grid) is None:
                cache.put(
                    rec.utt_id, enhancer.id, recognizer.id, grid,
                    [row.wer for row in reversed(rows)],
                )

    table = []
    for i, omega in enumerate(grid.coefficients):
        errors = sum(rows[i].distance for rows in results.values())
        ref_words = sum(rows[i].ref_len for rows in results.values())
        table.append(
            {
                "omega": float(omega),
                "errors": errors,
                "ref_words": ref_words,
                "wer": errors / ref_words if ref_words else 0.0,
            }
        )
    return SweepReport(grid_step=grid.step, rows=table, failures=failures)


@dataclass
class HistogramResult:
    edges: np.ndarray
    counts: np.ndarray
    omegas: dict[str, float]
    failures: list[dict]

    def format_bars(self, width: int = 40) -> str:
        peak = max(1, int(self.counts.max()))
        lines = []
        for i, count in enumerate(self.counts):
            closer = "]" if i == len(self.counts) - 1 else ")"
            label = f"[{self.edges[i]:.1f},{self.edges[i + 1]:.1f}{closer}"
            bar = "#" * int(round(width * count / peak))
            lines.append(f"{label:>10} {count:>6} {bar}")
        return "\n".join(lines)


def histogram(
    records: list[ManifestRecord],
    model: BridgingModule,
    enhancer: BackendDescriptor,
    strategy: str,
    grid: OaGrid,
    fbank_cfg: FbankConfig = FbankConfig(),
    bins: int = 10,
) -> HistogramResult:
    """Distribution of chosen coefficients over the manifest.

    Uniform bins on [0, 1]; the last bin is right-closed so a
    coefficient of exactly 1.0 lands in it. Counts sum to the number of
    successfully evaluated utterances.
    """
    omegas: dict[str, float] = {}
    failures: list[dict] = []
    for rec in records:
        try:
            result = infer_utterance(rec, model, enhancer, None, strategy, grid, fbank_cfg)
            omegas[rec.utt_id] = result.omega
        except StageFailure as exc:
            failures.append({"utt_id": rec.utt_id, "stage": exc.stage, "error": str(exc.cause)})
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(list(omegas.values()), bins=edges)
    return HistogramResult(edges=edges, counts=counts, omegas=omegas, failures=failures)
