# File: codec/inflation.py

import logging
from typing import Dict, Mapping

import torch

from codec.autoencoder import VideoAutoencoder, build_codec
from config import CodecConfig
from errors import ShapeError

logger = logging.getLogger(__name__)

__all__ = ["inflate_kernel", "inflate_image_weights", "inflate_codec"]


def inflate_kernel(kernel_2d: torch.Tensor, kt: int) -> torch.Tensor:
    """(1, kh, kw, cin, cout) -> (kt, kh, kw, cin, cout), zero except the last temporal slice."""
    if kernel_2d.dim() != 5 or kernel_2d.shape[0] != 1:
        raise ShapeError(f"expected a (1, kh, kw, cin, cout) kernel, got {tuple(kernel_2d.shape)}")
    out = kernel_2d.new_zeros((kt,) + tuple(kernel_2d.shape[1:]))
    out[-1] = kernel_2d[0]
    return out


def inflate_image_weights(
    image_state: Mapping[str, torch.Tensor],
    video_state: Mapping[str, torch.Tensor],
) -> Dict[str, torch.Tensor]:
    """
    Map a 2D codec's weights onto a 3D codec of the same layout.

    Conv kernels whose temporal extent grew are inflated with
    :func:`inflate_kernel`; every other tensor is copied.
    """
    missing = sorted(set(video_state) - set(image_state))
    extra = sorted(set(image_state) - set(video_state))
    if missing or extra:
        raise ShapeError(f"architecture mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    inflated: Dict[str, torch.Tensor] = {}
    grown = 0
    for name, target in video_state.items():
        source = image_state[name]
        if source.shape == target.shape:
            inflated[name] = source.detach().clone()
        elif source.dim() == 5 and target.dim() == 5 and source.shape[1:] == target.shape[1:]:
            inflated[name] = inflate_kernel(source.detach(), target.shape[0])
            grown += 1
        else:
            raise ShapeError(f"architecture mismatch at {name}: {tuple(source.shape)} vs {tuple(target.shape)}")
    logger.info(f"Inflated {grown} conv kernels, copied {len(inflated) - grown} tensors")
    return inflated


def inflate_codec(image_codec: VideoAutoencoder, temporal_kernel: int) -> VideoAutoencoder:
    """Build the video codec for ``image_codec``'s config and load the inflated weights."""
    if image_codec.config.temporal_kernel != 1:
        raise ShapeError("source codec is not a 2D codec (temporal_kernel != 1)")
    video_config: CodecConfig = image_codec.config.replace(temporal_kernel=temporal_kernel)
    video = build_codec(video_config)
    video.load_state_dict(inflate_image_weights(image_codec.state_dict(), video.state_dict()))
    return video
