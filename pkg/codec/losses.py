# File: codec/losses.py

from typing import Dict, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import ShapeError

__all__ = ["kl_divergence", "codec_loss_terms", "codec_loss", "CodecLoss"]


def kl_divergence(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mean, exp(logvar)) || N(0, 1)) summed over latent elements, averaged over the batch."""
    per_element = 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar)
    batch = mean.shape[0] if mean.dim() == 5 else 1
    return per_element.sum() / batch


def codec_loss_terms(
    clip: torch.Tensor,
    reconstruction: torch.Tensor,
    mean: Optional[torch.Tensor] = None,
    logvar: Optional[torch.Tensor] = None,
    kl_weight: float = 1e-6,
) -> Dict[str, torch.Tensor]:
    if clip.shape != reconstruction.shape:
        raise ShapeError(f"reconstruction {tuple(reconstruction.shape)} does not match clip {tuple(clip.shape)}")
    recon = F.mse_loss(reconstruction, clip)
    kl = torch.zeros((), dtype=recon.dtype, device=recon.device)
    if mean is not None and logvar is not None:
        if mean.shape != logvar.shape:
            raise ShapeError("mean and logvar shapes differ")
        kl = kl_divergence(mean, logvar)
    return {"loss": recon + kl_weight * kl, "recon": recon, "kl": kl}


def codec_loss(
    clip: torch.Tensor,
    reconstruction: torch.Tensor,
    mean: Optional[torch.Tensor] = None,
    logvar: Optional[torch.Tensor] = None,
    kl_weight: float = 1e-6,
) -> torch.Tensor:
    """L2 reconstruction error plus kl_weight times the posterior KL when moments are given."""
    return codec_loss_terms(clip, reconstruction, mean, logvar, kl_weight)["loss"]


class CodecLoss(nn.Module):
    """Module wrapper used by the trainer."""
    def __init__(self, kl_weight: float = 1e-6):
        super().__init__()
        self.kl_weight = kl_weight

    def forward(self, clip, reconstruction, mean=None, logvar=None) -> Dict[str, torch.Tensor]:
        return codec_loss_terms(clip, reconstruction, mean, logvar, self.kl_weight)
