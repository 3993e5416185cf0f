"""Optimization loop for the bridging module.

Three supervision strategies share one loop: quality regression (pq),
recognition information (ri), and their combination. The loop uses
adaptive moment estimation with a linear learning-rate warmup, global
gradient-norm clipping, per-epoch validation on the held-out subset
without augmentation, and best-validation checkpoint selection.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from . import backends
from .audio import OaGrid, align_pair, oa_grid
from .backends import BackendDescriptor
from .features import AugmentPolicy, FbankConfig, FeatureCache, fbank, spec_augment
from .losses import loss_combined, loss_pq, loss_ri
from .manifest import ManifestRecord
from .model import BridgingModule, ForwardOutput, ModelConfig, save_checkpoint

log = logging.getLogger(__name__)

STRATEGIES = ("pq", "ri", "combined")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "pq"
    lr_peak: float = 0.0005
    warmup_steps: int = 1000
    max_epochs: int = 45
    clip_norm: float = 10.0
    batch_size: int = 16
    seed: int = 0
    k: float = 0.1
    val_fraction: float = 0.1  # only used when the manifest has no dt records

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.lr_peak <= 0 or self.clip_norm <= 0:
            raise ValueError("lr_peak and clip_norm must be positive")
        if self.max_epochs < 1 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ValueError("max_epochs/batch_size/warmup_steps out of range")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_val: float = float("inf")


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    best_val_loss: float
    epochs: int


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear ramp from 0 to lr_peak over warmup_steps, then constant."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if cfg.warmup_steps == 0:
        return cfg.lr_peak
    return cfg.lr_peak * min(1.0, step / cfg.warmup_steps)


def clip_gradients(
    grads: Mapping[str, torch.Tensor], max_norm: float = 10.0
) -> dict[str, torch.Tensor]:
    """Scale all gradients by max_norm/norm when the global L2 norm exceeds it."""
    total = 0.0
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name}")
        total += float((g.double() ** 2).sum())
    norm = total**0.5
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def select_omega(out: ForwardOutput, strategy: str, grid: OaGrid) -> float:
    """Inference-time coefficient choice.

    pq/combined pass the predicted coefficient through; ri picks the
    grid coefficient whose logit is minimal, in descending-coefficient
    indexing, with ties broken toward the larger coefficient.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if strategy in ("pq", "combined"):
        return float(out.omega_hat)
    logits = np.asarray(out.logits)
    # argmin returns the first minimal index; descending order makes that
    # the larger coefficient
    return float(grid.descending()[int(np.argmin(logits))])


@dataclass
class _Item:
    utt_id: str
    noisy: np.ndarray
    enhanced: np.ndarray
    target: float | None = None
    wers: np.ndarray | None = None


def _utt_seed(seed: int, epoch: int, utt_id: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{epoch}:{utt_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def prepare_features(
    rec: ManifestRecord,
    enhancer: BackendDescriptor,
    fbank_cfg: FbankConfig,
    cache: FeatureCache | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Load, enhance, align, and featurize one utterance's two streams."""
    stream_tag = f"enh.{enhancer.id}"
    if cache is not None:
        noisy_feat = cache.get(rec.utt_id, "noisy")
        enh_feat = cache.get(rec.utt_id, stream_tag)
        if noisy_feat is not None and enh_feat is not None:
            return noisy_feat, enh_feat
    x = rec.load_noisy()
    y_hat = backends.enhance(x, enhancer, enhanced_path=rec.enhanced_path, utt_id=rec.utt_id)
    x, y_hat = align_pair(x, y_hat)
    noisy_feat = fbank(x, fbank_cfg)
    enh_feat = fbank(y_hat, fbank_cfg)
    if cache is not None:
        cache.put(rec.utt_id, "noisy", noisy_feat)
        cache.put(rec.utt_id, stream_tag, enh_feat)
    return noisy_feat, enh_feat


def _collate(
    items: list[_Item],
    strategy: str,
    augment: AugmentPolicy | None,
    epoch: int,
    seed: int,
):
    max_t = max(item.noisy.shape[1] for item in items)
    n_mels = items[0].noisy.shape[0]
    noisy = torch.zeros(len(items), n_mels, max_t)
    enh = torch.zeros(len(items), n_mels, max_t)
    lengths = torch.zeros(len(items), dtype=torch.long)
    for i, item in enumerate(items):
        nf, ef = item.noisy, item.enhanced
        if augment is not None:
            rng = np.random.default_rng(_utt_seed(seed, epoch, item.utt_id))
            nf = spec_augment(nf, augment, rng)
            ef = spec_augment(ef, augment, rng)
        t = nf.shape[1]
        noisy[i, :, :t] = torch.as_tensor(nf, dtype=torch.float32)
        enh[i, :, :t] = torch.as_tensor(ef, dtype=torch.float32)
        lengths[i] = t
    targets = None
    wers = None
    if strategy in ("pq", "combined"):
        targets = torch.tensor([item.target for item in items], dtype=torch.float32)
    if strategy in ("ri", "combined"):
        wers = torch.tensor(np.stack([item.wers for item in items]), dtype=torch.float32)
    return noisy, enh, lengths, targets, wers


def _strategy_loss(strategy, omega_hat, logits, targets, wers):
    if strategy == "pq":
        return loss_pq(omega_hat, targets)
    if strategy == "ri":
        return loss_ri(logits, wers)
    return loss_combined(loss_pq(omega_hat, targets), loss_ri(logits, wers))


def split_train_val(
    records: list[ManifestRecord], cfg: TrainConfig
) -> tuple[list[ManifestRecord], list[ManifestRecord]]:
    """tr_* records train, dt_* validate; without dt records a seeded
    val_fraction split of the tr records is used instead."""
    train = [r for r in records if r.subset.startswith("tr")]
    val = [r for r in records if r.subset.startswith("dt")]
    if not train:
        raise TrainingError("no tr_* records in the manifest")
    if not val:
        rng = np.random.default_rng(cfg.seed)
        order = rng.permutation(len(train))
        n_val = max(1, int(len(train) * cfg.val_fraction))
        val = [train[i] for i in order[:n_val]]
        train = [train[i] for i in order[n_val:]]
    return train, val


def _build_items(
    records: list[ManifestRecord],
    cfg: TrainConfig,
    enhancer: BackendDescriptor,
    fbank_cfg: FbankConfig,
    pq_targets: Mapping[str, float] | None,
    wer_vectors: Mapping[str, np.ndarray] | None,
    cache: FeatureCache | None,
) -> list[_Item]:
    need_pq = cfg.strategy in ("pq", "combined")
    need_ri = cfg.strategy in ("ri", "combined")
    if need_pq:
        missing = [r.utt_id for r in records if r.utt_id not in (pq_targets or {})]
        if missing:
            raise TrainingError(
                f"strategy {cfg.strategy!r} needs quality targets; missing: {missing}"
            )
    if need_ri:
        missing = [r.utt_id for r in records if r.utt_id not in (wer_vectors or {})]
        if missing:
            raise TrainingError(
                f"strategy {cfg.strategy!r} needs WER vectors; missing: {missing}"
            )
    grid_len = len(oa_grid(cfg.k))
    items = []
    for rec in records:
        noisy_feat, enh_feat = prepare_features(rec, enhancer, fbank_cfg, cache)
        item = _Item(rec.utt_id, noisy_feat.astype(np.float32), enh_feat.astype(np.float32))
        if need_pq:
            item.target = float(pq_targets[rec.utt_id])
        if need_ri:
            wers = np.asarray(wer_vectors[rec.utt_id], dtype=np.float32)
            if wers.shape != (grid_len,):
                raise TrainingError(
                    f"WER vector for {rec.utt_id} has shape {wers.shape}, "
                    f"expected ({grid_len},)"
                )
            item.wers = wers
        items.append(item)
    return items


def _epoch_loss(model, items, cfg) -> float:
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(items), cfg.batch_size):
            chunk = items[start : start + cfg.batch_size]
            noisy, enh, lengths, targets, wers = _collate(chunk, cfg.strategy, None, 0, 0)
            omega_hat, logits = model(noisy, enh, lengths)
            loss = _strategy_loss(cfg.strategy, omega_hat, logits, targets, wers)
            total += float(loss) * len(chunk)
    return total / len(items)


def train(
    records: list[ManifestRecord],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    enhancer: BackendDescriptor,
    out_dir,
    fbank_cfg: FbankConfig = FbankConfig(),
    augment: AugmentPolicy | None = AugmentPolicy(),
    pq_targets: Mapping[str, float] | None = None,
    wer_vectors: Mapping[str, np.ndarray] | None = None,
    feature_cache: FeatureCache | None = None,
) -> TrainResult:
    """Train the bridging module and keep the best-validation checkpoint.

    Required caches are checked up front: quality targets for pq and
    combined, WER vectors for ri and combined. The metrics log is a
    JSON-Lines file with one record per step and per epoch.
    """
    if model_cfg.logits_dim != len(oa_grid(cfg.k)):
        raise TrainingError(
            f"model logits_dim {model_cfg.logits_dim} does not match grid length "
            f"{len(oa_grid(cfg.k))} for k={cfg.k}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_records, val_records = split_train_val(records, cfg)
    train_items = _build_items(
        train_records, cfg, enhancer, fbank_cfg, pq_targets, wer_vectors, feature_cache
    )
    val_items = _build_items(
        val_records, cfg, enhancer, fbank_cfg, pq_targets, wer_vectors, feature_cache
    )

    model = BridgingModule(model_cfg, seed=cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=0.0)
    state = TrainState()
    ckpt_path = out_dir / "best.ckpt"
    metrics_path = out_dir / "metrics.jsonl"
    shuffle_rng = np.random.default_rng(_utt_seed(cfg.seed, 0, "shuffle"))

    with open(metrics_path, "w") as metrics:

        def emit(**fields):
            metrics.write(json.dumps(fields, sort_keys=True) + "\n")

        for epoch in range(cfg.max_epochs):
            state.epoch = epoch
            model.train()
            order = shuffle_rng.permutation(len(train_items))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                chunk = [train_items[i] for i in order[start : start + cfg.batch_size]]
                noisy, enh, lengths, targets, wers = _collate(
                    chunk, cfg.strategy, augment, epoch, cfg.seed
                )
                omega_hat, logits = model(noisy, enh, lengths)
                loss = _strategy_loss(cfg.strategy, omega_hat, logits, targets, wers)
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at step {state.step} on batch "
                        f"{[c.utt_id for c in chunk]}"
                    )
                optimizer.zero_grad()
                loss.backward()
                grads = {n: p.grad for n, p in model.named_parameters() if p.grad is not None}
                try:
                    clipped = clip_gradients(grads, cfg.clip_norm)
                except TrainingError as exc:
                    raise TrainingError(
                        f"{exc} at step {state.step} on batch {[c.utt_id for c in chunk]}"
                    ) from exc
                for name, p in model.named_parameters():
                    if name in clipped:
                        p.grad = clipped[name]
                lr = lr_schedule(state.step, cfg)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.step()
                emit(step=state.step, epoch=epoch, lr=lr, loss=float(loss), val_loss=None)
                epoch_losses.append(float(loss))
                state.step += 1

            model.eval()
            val_loss = _epoch_loss(model, val_items, cfg)
            emit(
                step=state.step,
                epoch=epoch,
                lr=lr_schedule(state.step, cfg),
                loss=float(np.mean(epoch_losses)),
                val_loss=val_loss,
            )
            if val_loss < state.best_val:
                state.best_val = val_loss
                save_checkpoint(
                    model,
                    ckpt_path,
                    meta={
                        "epoch": epoch,
                        "val_loss": val_loss,
                        "strategy": cfg.strategy,
                        "k": cfg.k,
                        "seed": cfg.seed,
                    },
                )
            log.info(
                "epoch %d: train %.5f val %.5f%s",
                epoch,
                float(np.mean(epoch_losses)),
                val_loss,
                " *" if val_loss == state.best_val else "",
            )

    return TrainResult(
        checkpoint_path=ckpt_path,
        metrics_path=metrics_path,
        best_val_loss=state.best_val,
        epochs=cfg.max_epochs,
    )
