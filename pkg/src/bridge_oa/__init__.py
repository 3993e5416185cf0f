"""bridge-oa: observation-addition bridging between frozen speech
enhancement front-ends and speech recognition back-ends.

The package predicts a per-utterance blend coefficient that mixes
noisy audio back into enhanced audio before recognition, trained from
perceptual-quality scores and per-coefficient word error rates.
"""

from .audio import OaGrid, Waveform, align_pair, load_wav, oa_blend, oa_grid, save_wav
from .features import AugmentPolicy, FbankConfig, fbank, spec_augment
from .losses import MosScore, loss_combined, loss_pq, loss_ri, norm_mos, pq_target
from .manifest import ManifestRecord, load_manifest, save_manifest
from .metrics import edit_distance, normalize_text, wer
from .model import BridgingModule, ForwardOutput, ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, clip_gradients, lr_schedule, select_omega, train

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "BridgingModule",
    "FbankConfig",
    "ForwardOutput",
    "ManifestRecord",
    "ModelConfig",
    "MosScore",
    "OaGrid",
    "TrainConfig",
    "Waveform",
    "align_pair",
    "clip_gradients",
    "edit_distance",
    "fbank",
    "load_checkpoint",
    "load_manifest",
    "load_wav",
    "loss_combined",
    "loss_pq",
    "loss_ri",
    "lr_schedule",
    "norm_mos",
    "normalize_text",
    "oa_blend",
    "oa_grid",
    "pq_target",
    "save_checkpoint",
    "save_manifest",
    "save_wav",
    "select_omega",
    "spec_augment",
    "train",
    "wer",
]
