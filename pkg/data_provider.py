# data_provider.py

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import torch

from errors import DataError
from evaldata.synthetic import DatasetManifest
from substrate.fpt import load_fpt

logger = logging.getLogger(__name__)


class ClipDataProvider:
    """
    Seeded mini-batches of clips from one split of a dataset manifest.

    Each epoch is a fresh permutation drawn from a private generator; the
    generator state and the cursor are part of ``state_dict`` so a resumed
    run sees the same batches as an uninterrupted one.
    """
    def __init__(
        self,
        manifest: Union[str, Path, DatasetManifest],
        batch_size: int,
        split: Optional[str] = "train",
        seed: int = 0,
        cache: bool = True,
    ):
        self.manifest = manifest if isinstance(manifest, DatasetManifest) else DatasetManifest.read(manifest)
        self.entries = self.manifest.clips_for(split)
        if not self.entries:
            raise DataError(f"split {split!r} of {self.manifest.root} holds no clips")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.batch_size = batch_size
        self.split = split
        self.generator = torch.Generator().manual_seed(seed)
        self.cache = cache
        self._clips: Dict[int, torch.Tensor] = {}
        self.order = self._permutation()
        self.cursor = 0
        self.epoch = 0
        self.current_batch = 0

    def __len__(self) -> int:
        return len(self.entries)

    def _permutation(self) -> torch.Tensor:
        return torch.randperm(len(self.entries), generator=self.generator)

    def _load(self, index: int) -> torch.Tensor:
        if index in self._clips:
            return self._clips[index]
        entry = self.entries[index]
        clip = load_fpt(self.manifest.clip_path(entry))
        if list(clip.shape) != self.manifest.dims:
            raise DataError(f"{entry.path} has shape {list(clip.shape)}, manifest says {self.manifest.dims}")
        if self.cache:
            self._clips[index] = clip
        return clip

    def load_all(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Every clip of the split in manifest order."""
        clips = torch.stack([self._load(i) for i in range(len(self.entries))])
        labels = torch.tensor([e.label for e in self.entries], dtype=torch.long)
        return clips, labels

    def get_next_batch(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """(clips (B, T, H, W, 3), labels (B,)); wraps into a new epoch when the split runs out."""
        picks = []
        while len(picks) < self.batch_size:
            if self.cursor >= len(self.order):
                self.order = self._permutation()
                self.cursor = 0
                self.epoch += 1
                logger.debug(f"Data provider starting epoch {self.epoch}")
            picks.append(int(self.order[self.cursor]))
            self.cursor += 1
        self.current_batch += 1
        clips = torch.stack([self._load(i) for i in picks])
        labels = torch.tensor([self.entries[i].label for i in picks], dtype=torch.long)
        return clips, labels

    def state_dict(self) -> Dict[str, Any]:
        return {
            "generator": self.generator.get_state().numpy().tobytes().hex(),
            "order": self.order.tolist(),
            "cursor": self.cursor,
            "epoch": self.epoch,
            "current_batch": self.current_batch,
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        try:
            raw = bytes.fromhex(state["generator"])
            self.generator.set_state(torch.frombuffer(bytearray(raw), dtype=torch.uint8))
            self.order = torch.tensor(state["order"], dtype=torch.long)
            self.cursor = int(state["cursor"])
            self.epoch = int(state["epoch"])
            self.current_batch = int(state["current_batch"])
        except (KeyError, ValueError, RuntimeError) as e:
            raise DataError(f"corrupt data provider state: {e}") from e
        if len(self.order) != len(self.entries):
            raise DataError("data provider state belongs to a different split")
