# File: codec/volumes.py

from dataclasses import dataclass
from typing import Optional

import torch

from config import CodecConfig
from errors import NumericError, ShapeError

__all__ = ["VideoClip", "LatentVolume"]


@dataclass
class VideoClip:
    """Channel-last RGB video, (T, H, W, 3) or batched (B, T, H, W, 3), values in [-1, 1]."""
    values: torch.Tensor
    fps: float = 8.0

    def __post_init__(self):
        if self.values.dim() not in (4, 5) or self.values.shape[-1] != 3:
            raise ShapeError(f"clip values must be (T, H, W, 3) or (B, T, H, W, 3), got {tuple(self.values.shape)}")

    @property
    def batched(self) -> bool:
        return self.values.dim() == 5

    @property
    def T(self) -> int:
        return self.values.shape[-4]

    @property
    def H(self) -> int:
        return self.values.shape[-3]

    @property
    def W(self) -> int:
        return self.values.shape[-2]

    def validate(self, config: CodecConfig) -> None:
        if (self.T - 1) % config.f_t:
            raise ShapeError(f"clip length {self.T} does not satisfy (T - 1) % {config.f_t} == 0")
        if self.H % config.f_s or self.W % config.f_s:
            raise ShapeError(f"clip size {self.H}x{self.W} is not divisible by f_s={config.f_s}")
        if not torch.isfinite(self.values).all():
            raise NumericError("clip contains non-finite values")

    def frame(self, index: int) -> "VideoClip":
        return VideoClip(self.values.narrow(-4, index, 1), self.fps)


@dataclass
class LatentVolume:
    """Encoder output Z, (..., t, h, w, c), with the posterior moments when variational."""
    values: torch.Tensor
    mean: Optional[torch.Tensor] = None
    logvar: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.values.dim() < 4:
            raise ShapeError(f"latent values must be (..., t, h, w, c), got {tuple(self.values.shape)}")

    @property
    def t(self) -> int:
        return self.values.shape[-4]

    @property
    def h(self) -> int:
        return self.values.shape[-3]

    @property
    def w(self) -> int:
        return self.values.shape[-2]

    @property
    def c(self) -> int:
        return self.values.shape[-1]
