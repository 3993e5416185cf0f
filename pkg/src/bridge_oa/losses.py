"""Training targets and losses for the bridging module.

Quality scores (sig/bak, each in [1, 5]) are mapped to [0, 1] and
averaged into the regression target for the predicted blend
coefficient. The recognition-information loss compares the logits
against the per-coefficient WER vector through sigmoids and cosine
similarity; because both sigmoided vectors are strictly positive, the
cosine lies in (0, 1] and the loss in [softplus(-1), softplus(0)) =
[0.313262, 0.693147).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class MosScore:
    """Non-intrusive quality estimate: speech (sig) and background (bak)."""

    sig: float
    bak: float

    def __post_init__(self):
        for name, value in (("sig", self.sig), ("bak", self.bak)):
            if not 1.0 <= value <= 5.0:
                raise ValueError(f"{name} must lie in [1, 5], got {value}")


def norm_mos(alpha: float) -> float:
    """Map a score from [1, 5] onto [0, 1]: (alpha - 1) / 4."""
    if not 1.0 <= alpha <= 5.0:
        raise ValueError(f"score must lie in [1, 5], got {alpha}")
    return (alpha - 1.0) / 4.0


def pq_target(m: MosScore) -> float:
    """Blend-coefficient regression target: mean of the normalized scores."""
    return (norm_mos(m.sig) + norm_mos(m.bak)) / 2.0


def _tensor(x) -> torch.Tensor:
    # plain Python floats go through numpy so they keep float64 precision
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x))


def loss_pq(omega_hat, target) -> torch.Tensor:
    """Squared error between predicted coefficient and quality target.

    Accepts scalars or batched tensors; batches are averaged.
    """
    omega_hat = _tensor(omega_hat)
    target = _tensor(target).to(dtype=omega_hat.dtype, device=omega_hat.device)
    return ((omega_hat - target) ** 2).mean()


def loss_ri(logits, wers) -> torch.Tensor:
    """Recognition-information loss: -log sigmoid(cos(sig(logits), sig(wers))).

    ``wers`` holds raw per-coefficient word error rates in descending
    blend-coefficient order; it is treated as a constant target.
    Batched inputs of shape (B, D) are averaged over the batch.
    """
    logits = _tensor(logits)
    wers = _tensor(wers).to(dtype=logits.dtype, device=logits.device).detach()
    if logits.shape[-1] != wers.shape[-1]:
        raise ValueError(
            f"length mismatch: logits dim {logits.shape[-1]} vs wers dim {wers.shape[-1]}"
        )
    if logits.shape[-1] < 2:
        raise ValueError("vectors must have at least 2 entries")
    cs = F.cosine_similarity(torch.sigmoid(logits), torch.sigmoid(wers), dim=-1)
    # -log(sigmoid(x)) == softplus(-x), the numerically stable form
    return F.softplus(-cs).mean()


def loss_combined(lpq, lri) -> torch.Tensor:
    """Joint objective: arithmetic mean of the two losses."""
    lpq = _tensor(lpq)
    lri = _tensor(lri).to(dtype=lpq.dtype, device=lpq.device)
    return (lpq + lri) / 2.0
