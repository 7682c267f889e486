# File: diffusion/losses.py

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from diffusion.sampling import Denoise, q_sample, v_target
from diffusion.schedule import NoiseSchedule
from errors import ShapeError

__all__ = ["DiffusionBatch", "make_batch", "training_loss"]


@dataclass
class DiffusionBatch:
    z0: torch.Tensor  # (B, L, c) clean target tokens
    t: torch.Tensor  # (B,) timesteps in [1, T_d]
    eps: torch.Tensor  # same shape as z0
    cond_tokens: Optional[torch.Tensor] = None  # (B, Lc, c)
    labels: Optional[torch.Tensor] = None  # (B,)
    task: Optional[str] = None
    layout: Any = None  # LatentLayout of the target/conditioning planes
    planes: Optional[Tuple[str, ...]] = None  # explicit target planes, e.g. ("volume",)

    def __post_init__(self):
        if self.eps.shape != self.z0.shape:
            raise ShapeError(f"noise shape {tuple(self.eps.shape)} != token shape {tuple(self.z0.shape)}")
        if self.t.shape != self.z0.shape[:1]:
            raise ShapeError(f"need one timestep per batch element, got {tuple(self.t.shape)}")

    def conditioning(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        if self.cond_tokens is not None:
            out["cond_tokens"] = self.cond_tokens
        if self.labels is not None:
            out["labels"] = self.labels
        if self.task is not None:
            out["task"] = self.task
        if self.layout is not None:
            out["layout"] = self.layout
        if self.planes is not None:
            out["planes"] = self.planes
        return out


def make_batch(
    z0: torch.Tensor,
    schedule: NoiseSchedule,
    generator: torch.Generator,
    **conditioning: Any,
) -> DiffusionBatch:
    """Draw timesteps uniformly from [1, T_d] and i.i.d. standard normal noise."""
    t = torch.randint(1, schedule.steps + 1, (z0.shape[0],), generator=generator)
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    return DiffusionBatch(z0=z0, t=t, eps=eps, **conditioning)


def training_loss(
    denoiser: Denoise,
    batch: DiffusionBatch,
    schedule: NoiseSchedule,
    self_cond_rate: float = 0.9,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """
    Mean squared error between predicted and target v.

    With probability ``self_cond_rate`` per example a gradient-free first
    pass supplies the self-conditioning input; otherwise it is zeros. A rate
    of 0 draws no extra randomness.
    """
    z_t = q_sample(batch.z0, batch.t, batch.eps, schedule)
    target = v_target(batch.z0, batch.eps, batch.t, schedule)
    conditioning = batch.conditioning()
    self_cond = torch.zeros_like(z_t)
    if self_cond_rate > 0:
        use = torch.rand(z_t.shape[0], generator=generator) < self_cond_rate
        if bool(use.any()):
            with torch.no_grad():
                estimate = denoiser(z_t, batch.t, self_cond=self_cond, **conditioning)
            mask = use.view(-1, *([1] * (z_t.dim() - 1))).to(z_t.dtype)
            self_cond = estimate.detach() * mask
    prediction = denoiser(z_t, batch.t, self_cond=self_cond, **conditioning)
    return F.mse_loss(prediction, target)
