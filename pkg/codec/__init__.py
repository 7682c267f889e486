"""Causal 3D video autoencoder, weight inflation and reconstruction losses."""

from codec.autoencoder import (
    CausalConv3d,
    Decoder,
    Encoder,
    FrameGroupNorm,
    ResidualBlock,
    VideoAutoencoder,
    build_codec,
)
from codec.inflation import inflate_codec, inflate_image_weights, inflate_kernel
from codec.losses import CodecLoss, codec_loss, codec_loss_terms, kl_divergence
from codec.volumes import LatentVolume, VideoClip

__all__ = [
    "CausalConv3d",
    "Decoder",
    "Encoder",
    "FrameGroupNorm",
    "ResidualBlock",
    "VideoAutoencoder",
    "build_codec",
    "inflate_codec",
    "inflate_image_weights",
    "inflate_kernel",
    "CodecLoss",
    "codec_loss",
    "codec_loss_terms",
    "kl_divergence",
    "LatentVolume",
    "VideoClip",
]
