"""Manifest records drive every pipeline stage.

A manifest is a JSON-Lines file, one utterance per line, with the
noisy-audio path, optional enhanced/clean paths, the reference
transcript, a subset tag, and an optional channel index chosen when
the manifest was built.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .audio import Waveform, load_wav

SUBSETS = tuple(f"{split}_{kind}" for split in ("tr", "dt", "et") for kind in ("simu", "real"))


@dataclass
class ManifestRecord:
    utt_id: str
    noisy_path: str
    transcript: str | None = None
    enhanced_path: str | None = None
    clean_path: str | None = None
    subset: str = "tr_simu"
    channel: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.utt_id:
            raise ValueError("utt_id must be non-empty")
        if self.subset not in SUBSETS:
            raise ValueError(f"subset must be one of {SUBSETS}, got {self.subset!r}")

    def load_noisy(self) -> Waveform:
        return load_wav(self.noisy_path, channel=self.channel)

    def load_clean(self) -> Waveform | None:
        if self.clean_path is None:
            return None
        return load_wav(self.clean_path, channel=self.channel)


def save_manifest(records: list[ManifestRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for rec in records:
            row = {k: v for k, v in asdict(rec).items() if v not in (None, {})}
            f.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path) -> list[ManifestRecord]:
    records = []
    seen = set()
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = ManifestRecord(**json.loads(line))
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest row: {exc}") from exc
            if rec.utt_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate utt_id {rec.utt_id!r}")
            seen.add(rec.utt_id)
            records.append(rec)
    return records


def filter_subsets(records: list[ManifestRecord], subsets) -> list[ManifestRecord]:
    wanted = {subsets} if isinstance(subsets, str) else set(subsets)
    unknown = wanted - set(SUBSETS)
    if unknown:
        raise ValueError(f"unknown subset tags: {sorted(unknown)}")
    return [r for r in records if r.subset in wanted]
