"""Command-line entry points.

Subcommands: prepare-manifest, prepare-pq-targets, sweep-wer, train,
infer, evaluate, histogram. Every configuration key can be overridden
with ``--set section.key=value``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, targets, training
from .audio import oa_grid, save_wav
from .config import AppConfig, load_config
from .features import FeatureCache
from .manifest import ManifestRecord, filter_subsets, load_manifest, save_manifest
from .model import load_checkpoint

log = logging.getLogger("bridge_oa")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _load_cfg(args) -> AppConfig:
    return load_config(args.config, args.overrides)


def _records(args, cfg: AppConfig) -> list[ManifestRecord]:
    records = load_manifest(args.manifest)
    if getattr(args, "subset", None):
        records = filter_subsets(records, args.subset)
    return records


def _require_recognizer(cfg: AppConfig):
    if cfg.recognizer is None:
        raise SystemExit("this command needs a [backends.recognizer] section in the config")
    return cfg.recognizer


def cmd_prepare_manifest(args) -> int:
    audio_dir = Path(args.audio_dir)
    transcripts = {}
    if args.transcripts:
        with open(args.transcripts) as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                utt_id, _, text = line.partition("\t")
                transcripts[utt_id] = text
    records = []
    for wav in sorted(audio_dir.glob("*.wav")):
        utt_id = wav.stem
        enhanced = Path(args.enhanced_dir) / wav.name if args.enhanced_dir else None
        clean = Path(args.clean_dir) / wav.name if args.clean_dir else None
        records.append(
            ManifestRecord(
                utt_id=utt_id,
                noisy_path=str(wav),
                transcript=transcripts.get(utt_id),
                enhanced_path=str(enhanced) if enhanced and enhanced.exists() else None,
                clean_path=str(clean) if clean and clean.exists() else None,
                subset=args.subset,
                channel=args.channel,
            )
        )
    save_manifest(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_prepare_pq_targets(args) -> int:
    cfg = _load_cfg(args)
    records = _records(args, cfg)
    cache = targets.PqTargetCache(cfg.cache_dir() / "pq_targets.jsonl")
    scored, failures = targets.build_pq_targets(records, cfg.scorer, cache)
    print(f"scored {len(scored)} utterances ({len(failures)} failed) -> {cache.path}")
    for utt_id, error in failures:
        print(f"  FAILED {utt_id}: {error}", file=sys.stderr)
    return 0 if not failures else 1


def cmd_sweep_wer(args) -> int:
    cfg = _load_cfg(args)
    records = _records(args, cfg)
    recognizer = _require_recognizer(cfg)
    grid = oa_grid(cfg.train.k)
    cache = targets.WerVectorCache(cfg.cache_dir() / "wer_vectors.jsonl")
    report = pipeline.sweep(
        records, grid, cfg.enhancer, recognizer, cache=cache, workers=args.workers
    )
    print(report.format_table())
    if report.failures:
        print(f"{len(report.failures)} utterance(s) failed", file=sys.stderr)
    if args.out:
        Path(args.out).write_text(report.to_json())
        print(f"wrote {args.out}")
    return 0 if not report.failures else 1


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    records = _records(args, cfg)
    out_dir = Path(args.out_dir or cfg.paths.out_dir)
    pq_targets = wer_vectors = None
    if cfg.train.strategy in ("pq", "combined"):
        cache = targets.PqTargetCache(cfg.cache_dir() / "pq_targets.jsonl")
        pq_targets = {
            r.utt_id: t
            for r in records
            if (t := cache.get(r.utt_id, cfg.scorer.id)) is not None
        }
    if cfg.train.strategy in ("ri", "combined"):
        recognizer = _require_recognizer(cfg)
        cache = targets.WerVectorCache(cfg.cache_dir() / "wer_vectors.jsonl")
        grid = oa_grid(cfg.train.k)
        wer_vectors = {
            r.utt_id: v
            for r in records
            if (v := cache.get(r.utt_id, cfg.enhancer.id, recognizer.id, grid)) is not None
        }
    feature_cache = None
    if args.feature_cache:
        feature_cache = FeatureCache(cfg.cache_dir(), cfg.features)
    result = training.train(
        records,
        cfg.model,
        cfg.train,
        cfg.enhancer,
        out_dir,
        fbank_cfg=cfg.features,
        augment=cfg.augment,
        pq_targets=pq_targets,
        wer_vectors=wer_vectors,
        feature_cache=feature_cache,
    )
    print(
        f"best val loss {result.best_val_loss:.6f}; "
        f"checkpoint {result.checkpoint_path}; metrics {result.metrics_path}"
    )
    return 0


def cmd_infer(args) -> int:
    cfg = _load_cfg(args)
    records = _records(args, cfg)
    model, meta = load_checkpoint(args.checkpoint)
    model.eval()
    strategy = args.strategy or meta.get("strategy", cfg.train.strategy)
    grid = oa_grid(cfg.train.k)
    recognizer = cfg.recognizer if not args.no_asr else None
    audio_dir = Path(args.save_audio) if args.save_audio else None
    if audio_dir:
        audio_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for rec in records:
        try:
            result = pipeline.infer_utterance(
                rec, model, cfg.enhancer, recognizer, strategy, grid, cfg.features
            )
        except pipeline.StageFailure as exc:
            print(json.dumps({"utt_id": rec.utt_id, "error": str(exc)}), file=sys.stderr)
            failures += 1
            continue
        if audio_dir:
            save_wav(result.blended, audio_dir / f"{rec.utt_id}.wav")
        print(
            json.dumps(
                {"utt_id": rec.utt_id, "omega": result.omega, "hypothesis": result.hypothesis},
                sort_keys=True,
            )
        )
    return 0 if not failures else 1


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    records = _records(args, cfg)
    recognizer = _require_recognizer(cfg)
    grid = oa_grid(cfg.train.k)
    if args.passthrough:
        report = pipeline.evaluate_passthrough(records, cfg.enhancer, recognizer, args.passthrough)
    elif args.fixed_omega is not None:
        report = pipeline.evaluate_fixed_omega(records, cfg.enhancer, recognizer, args.fixed_omega)
    else:
        if not args.checkpoint:
            raise SystemExit("evaluate needs --checkpoint (or --fixed-omega / --passthrough)")
        model, meta = load_checkpoint(args.checkpoint)
        model.eval()
        strategy = args.strategy or meta.get("strategy", cfg.train.strategy)
        report = pipeline.evaluate(
            records, model, cfg.enhancer, recognizer, strategy, grid, cfg.features
        )
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(report.to_json())
        print(f"wrote {args.out}")
    return 0 if not report.failures else 1


def cmd_histogram(args) -> int:
    cfg = _load_cfg(args)
    records = _records(args, cfg)
    model, meta = load_checkpoint(args.checkpoint)
    model.eval()
    strategy = args.strategy or meta.get("strategy", cfg.train.strategy)
    grid = oa_grid(cfg.train.k)
    result = pipeline.histogram(
        records, model, cfg.enhancer, strategy, grid, cfg.features, bins=args.bins
    )
    print(result.format_bars())
    if args.out:
        payload = {
            "edges": result.edges.tolist(),
            "counts": result.counts.tolist(),
            "omegas": result.omegas,
            "failures": result.failures,
        }
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True))
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridge-oa",
        description="Observation-addition bridging between enhancement and recognition models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-manifest", help="build a manifest from audio directories")
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--transcripts", help="TSV file: utt_id<TAB>reference text")
    p.add_argument("--enhanced-dir")
    p.add_argument("--clean-dir")
    p.add_argument("--subset", default="tr_simu")
    p.add_argument("--channel", type=int, help="zero-based channel for multi-channel WAVs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare_manifest)

    p = sub.add_parser("prepare-pq-targets", help="score quality targets into the cache")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", nargs="*")
    p.set_defaults(func=cmd_prepare_pq_targets)

    p = sub.add_parser("sweep-wer", help="WER at every grid coefficient; fills the WER cache")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", nargs="*")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write the table as JSON")
    p.set_defaults(func=cmd_sweep_wer)

    p = sub.add_parser("train", help="train the bridging module")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", nargs="*")
    p.add_argument("--out-dir")
    p.add_argument("--feature-cache", action="store_true", help="cache features on disk")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict coefficients and transcribe a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", nargs="*")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", choices=training.STRATEGIES)
    p.add_argument("--save-audio", help="directory for blended WAVs")
    p.add_argument("--no-asr", action="store_true", help="skip transcription")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="pooled WER report over a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", nargs="*")
    p.add_argument("--checkpoint")
    p.add_argument("--strategy", choices=training.STRATEGIES)
    p.add_argument("--fixed-omega", type=float, help="evaluate one preset coefficient")
    p.add_argument(
        "--passthrough", choices=("noisy", "enhanced"),
        help="evaluate a raw stream without blending",
    )
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("histogram", help="distribution of chosen coefficients")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", nargs="*")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", choices=training.STRATEGIES)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", help="write counts as JSON")
    p.set_defaults(func=cmd_histogram)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, training.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
