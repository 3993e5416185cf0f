"""The trainable bridging network.

Consumes the noisy and enhanced feature matrices of one utterance and
emits the blend coefficient (through a sigmoid, so strictly inside
(0, 1)) together with a logits vector with one entry per grid
coefficient. Structure: the two feature matrices are stacked into the
input channels of a 1-D convolutional frame layer, followed by
residual Res2 + squeeze-excitation stages, a channel-time attention
stage, attentive statistics pooling over time, a shared fully
connected layer, and the two output heads.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

CHECKPOINT_MAGIC = b"BOA1"


class CheckpointCorruptError(ValueError):
    """Raised when a checkpoint fails its CRC or container framing."""


class CheckpointShapeError(ValueError):
    """Raised when stored tensors do not match the target model's shapes."""


@dataclass(frozen=True)
class ModelConfig:
    """Network shape knobs. Standard sizes use 256 or 384 convolution
    channels; smaller values are accepted for desk-scale models."""

    conv_channels: int = 256
    bottleneck_dim: int = 256
    res2_scale: int = 8
    fc_nodes: int = 384
    logits_dim: int = 11
    n_mels: int = 80
    depth: int = 1

    def __post_init__(self):
        if self.res2_scale < 1 or self.conv_channels % self.res2_scale != 0:
            raise ValueError(
                f"res2_scale {self.res2_scale} must divide conv_channels {self.conv_channels}"
            )
        for name in ("conv_channels", "bottleneck_dim", "fc_nodes", "n_mels", "depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.logits_dim < 2:
            raise ValueError(f"logits_dim must be >= 2, got {self.logits_dim}")

    def fingerprint(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class ForwardOutput:
    omega_hat: float
    logits: np.ndarray = field(repr=False)


def lengths_to_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """Boolean mask (B, T): True on valid frames."""
    steps = torch.arange(max_len, device=lengths.device)
    return steps.unsqueeze(0) < lengths.unsqueeze(1)


def _masked_mean(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    """Mean over time of (B, C, T), excluding padded frames."""
    if mask is None:
        return x.mean(dim=2)
    m = mask.unsqueeze(1).to(x.dtype)
    return (x * m).sum(dim=2) / m.sum(dim=2).clamp(min=1.0)


class Res2Block(nn.Module):
    """Hierarchical grouped convolution: channels are split into ``scale``
    groups; group i is convolved together with the output of group i-1,
    so information flows only from lower to higher groups."""

    def __init__(self, channels: int, scale: int, kernel_size: int = 3, dilation: int = 1):
        super().__init__()
        assert channels % scale == 0
        self.scale = scale
        width = channels // scale
        self.convs = nn.ModuleList(
            nn.Conv1d(width, width, kernel_size, dilation=dilation, padding="same")
            for _ in range(scale - 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        groups = torch.chunk(x, self.scale, dim=1)
        out = [groups[0]]
        prev = None
        for i in range(1, self.scale):
            inp = groups[i] if prev is None else groups[i] + prev
            prev = torch.relu(self.convs[i - 1](inp))
            out.append(prev)
        return torch.cat(out, dim=1)


class SEBlock(nn.Module):
    """Squeeze-excitation channel gating with a bottleneck projection."""

    def __init__(self, channels: int, bottleneck: int):
        super().__init__()
        self.squeeze = nn.Linear(channels, bottleneck)
        self.excite = nn.Linear(bottleneck, channels)

    def gate(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        s = _masked_mean(x, mask)
        return torch.sigmoid(self.excite(torch.relu(self.squeeze(s))))

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        return x * self.gate(x, mask).unsqueeze(-1)


class ChannelTimeAttention(nn.Module):
    """Weights features along both axes: a squeeze-excitation style gate
    per channel and an additive-attention gate per frame."""

    def __init__(self, channels: int, bottleneck: int):
        super().__init__()
        self.channel_squeeze = nn.Linear(channels, bottleneck)
        self.channel_excite = nn.Linear(bottleneck, channels)
        self.time_proj = nn.Conv1d(channels, bottleneck, kernel_size=1)
        self.time_score = nn.Conv1d(bottleneck, 1, kernel_size=1)

    def channel_gate(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        s = _masked_mean(x, mask)
        return torch.sigmoid(self.channel_excite(torch.relu(self.channel_squeeze(s))))

    def time_gate(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.time_score(torch.tanh(self.time_proj(x))).squeeze(1))

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        return x * self.channel_gate(x, mask).unsqueeze(-1) * self.time_gate(x).unsqueeze(1)


class AttentiveStatsPooling(nn.Module):
    """Time pooling into attention-weighted mean and standard deviation."""

    def __init__(self, channels: int, bottleneck: int):
        super().__init__()
        self.proj = nn.Conv1d(channels, bottleneck, kernel_size=1)
        self.score = nn.Conv1d(bottleneck, 1, kernel_size=1)

    def attention(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Per-frame weights (B, T), softmax-normalized over valid frames."""
        scores = self.score(torch.tanh(self.proj(x))).squeeze(1)
        if mask is not None:
            scores = scores.masked_fill(~mask, float("-inf"))
        return torch.softmax(scores, dim=1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        w = self.attention(x, mask).unsqueeze(1)
        mean = (x * w).sum(dim=2)
        var = (x.pow(2) * w).sum(dim=2) - mean.pow(2)
        std = var.clamp(min=1e-12).sqrt()
        return torch.cat([mean, std], dim=1)


class BridgingModule(nn.Module):
    """Predicts the blend coefficient and per-coefficient logits from a
    (noisy, enhanced) pair of log-mel feature matrices."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        c = cfg.conv_channels
        self.frame_conv = nn.Conv1d(2 * cfg.n_mels, c, kernel_size=5, padding="same")
        self.res2_stages = nn.ModuleList(
            Res2Block(c, cfg.res2_scale, kernel_size=3, dilation=2 + i)
            for i in range(cfg.depth)
        )
        self.se_stages = nn.ModuleList(
            SEBlock(c, cfg.bottleneck_dim) for _ in range(cfg.depth)
        )
        self.ct_attention = ChannelTimeAttention(c, cfg.bottleneck_dim)
        self.pool = AttentiveStatsPooling(c, cfg.bottleneck_dim)
        self.fc = nn.Linear(2 * c, cfg.fc_nodes)
        self.ri_head = nn.Linear(cfg.fc_nodes, cfg.logits_dim)
        self.pq_head = nn.Linear(cfg.fc_nodes, 1)
        init_params(self, seed)

    def forward(
        self,
        noisy: torch.Tensor,
        enhanced: torch.Tensor,
        lengths: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Batched forward: inputs (B, n_mels, T) -> (omega_hat (B,), logits (B, D))."""
        if noisy.shape != enhanced.shape:
            raise ValueError(
                f"stream shape mismatch: {tuple(noisy.shape)} vs {tuple(enhanced.shape)}"
            )
        if noisy.dim() != 3 or noisy.shape[1] != self.cfg.n_mels:
            raise ValueError(
                f"expected (B, {self.cfg.n_mels}, T) inputs, got {tuple(noisy.shape)}"
            )
        if noisy.shape[2] < 1:
            raise ValueError("inputs must contain at least one frame")
        mask = None
        if lengths is not None:
            mask = lengths_to_mask(lengths, noisy.shape[2])
        x = torch.relu(self.frame_conv(torch.cat([noisy, enhanced], dim=1)))
        for res2, se in zip(self.res2_stages, self.se_stages):
            x = x + se(res2(x), mask)
        x = self.ct_attention(x, mask)
        pooled = self.pool(x, mask)
        shared = torch.relu(self.fc(pooled))
        logits = self.ri_head(shared)
        omega_hat = torch.sigmoid(self.pq_head(shared)).squeeze(-1)
        return omega_hat, logits

    @torch.no_grad()
    def predict(self, noisy_feat: np.ndarray, enh_feat: np.ndarray) -> ForwardOutput:
        """Single-utterance inference from (n_mels, T) feature matrices."""
        if noisy_feat.shape != enh_feat.shape:
            raise ValueError(
                f"stream shape mismatch: {noisy_feat.shape} vs {enh_feat.shape}"
            )
        dtype = next(self.parameters()).dtype
        noisy = torch.as_tensor(noisy_feat, dtype=dtype).unsqueeze(0)
        enh = torch.as_tensor(enh_feat, dtype=dtype).unsqueeze(0)
        omega_hat, logits = self(noisy, enh)
        return ForwardOutput(
            omega_hat=float(omega_hat[0]),
            logits=logits[0].numpy().copy(),
        )


def init_params(model: nn.Module, seed: int) -> None:
    """Deterministic re-initialization: weights ~ N(0, 2/fan_in), biases zero."""
    gen = torch.Generator().manual_seed(seed)
    for name, p in model.named_parameters():
        with torch.no_grad():
            if p.dim() >= 2:
                fan_in = int(np.prod(p.shape[1:]))
                p.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=gen)
            else:
                p.zero_()


def save_checkpoint(model: BridgingModule, path, meta: dict | None = None) -> None:
    """Write the self-describing checkpoint container.

    Layout: magic, uint32 header length, JSON header (config, config
    hash, metadata, tensor index), concatenated little-endian float32
    payloads, trailing CRC32 of everything before it.
    """
    names, blobs, index = [], [], []
    offset = 0
    for name, p in model.state_dict().items():
        if p.dtype != torch.float32:
            raise ValueError(
                f"checkpoint stores float32 tensors; {name} is {p.dtype} "
                "(convert the model to float32 before saving)"
            )
        data = p.detach().cpu().numpy().astype("<f4", copy=False).tobytes()
        index.append(
            {"name": name, "shape": list(p.shape), "dtype": "float32",
             "offset": offset, "nbytes": len(data)}
        )
        names.append(name)
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {
            "format_version": 1,
            "config": asdict(model.cfg),
            "config_hash": model.cfg.fingerprint(),
            "meta": meta or {},
            "tensors": index,
        },
        sort_keys=True,
    ).encode()
    body = CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    """Parse and CRC-check a checkpoint; returns (config, tensors, meta)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointCorruptError(f"{path}: not a checkpoint file")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    body = raw[:-4]
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CheckpointCorruptError(f"{path}: checksum mismatch (truncated or corrupt)")
    header_len = struct.unpack("<I", body[4:8])[0]
    header = json.loads(body[8 : 8 + header_len].decode())
    payload = body[8 + header_len :]
    tensors = {}
    for entry in header["tensors"]:
        chunk = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
    cfg = ModelConfig(**header["config"])
    if header.get("config_hash") != cfg.fingerprint():
        raise CheckpointCorruptError(f"{path}: config hash mismatch")
    return cfg, tensors, header.get("meta", {})


def load_checkpoint(path, cfg: ModelConfig | None = None) -> tuple[BridgingModule, dict]:
    """Rebuild a model from a checkpoint.

    If ``cfg`` is given it must match the stored tensor shapes; a
    differing logits_dim or channel width raises CheckpointShapeError.
    """
    stored_cfg, tensors, meta = read_checkpoint(path)
    model = BridgingModule(cfg or stored_cfg)
    state = model.state_dict()
    if set(state) != set(tensors):
        missing = set(state) ^ set(tensors)
        raise CheckpointShapeError(f"{path}: tensor set mismatch: {sorted(missing)}")
    for name, arr in tensors.items():
        if tuple(state[name].shape) != tuple(arr.shape):
            raise CheckpointShapeError(
                f"{path}: shape mismatch for {name}: "
                f"stored {tuple(arr.shape)}, model {tuple(state[name].shape)}"
            )
    model.load_state_dict({n: torch.from_numpy(a) for n, a in tensors.items()})
    return model, meta
