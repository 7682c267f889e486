# File: codec/autoencoder.py

import logging
import math
from typing import List, Optional, Tuple, Union

import torch
import torch.nn as nn

from codec.volumes import LatentVolume, VideoClip
from config import CodecConfig
from errors import ShapeError
from factorization import (
    AxisReducer,
    CombineKind,
    LatentLayout,
    PlaneSet,
    ReduceKind,
    SpatialPlaneMode,
    boundary_planes,
    factorize,
    factorize_boundary,
    factorize_triplane,
    recompose,
    recompose_triplane,
)
from substrate import ops

logger = logging.getLogger(__name__)

__all__ = [
    "CausalConv3d",
    "FrameGroupNorm",
    "ResidualBlock",
    "Encoder",
    "Decoder",
    "VideoAutoencoder",
    "build_codec",
]

ClipLike = Union[VideoClip, torch.Tensor]

# ============================
# Building Blocks
# ============================

class CausalConv3d(nn.Module):
    """3D convolution with a (kt, kh, kw, cin, cout) kernel and past-only temporal padding."""
    def __init__(self, cin: int, cout: int, kernel: Tuple[int, int, int], stride: Tuple[int, int, int] = (1, 1, 1)):
        super().__init__()
        kt, kh, kw = kernel
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(kt, kh, kw, cin, cout))
        self.bias = nn.Parameter(torch.zeros(cout))
        nn.init.normal_(self.weight, std=1.0 / math.sqrt(kt * kh * kw * cin))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.conv3d_causal(x, self.weight, self.stride, self.bias)


class FrameGroupNorm(nn.Module):
    """Group normalization with statistics per frame, so normalization never mixes time."""
    def __init__(self, groups: int, channels: int):
        super().__init__()
        self.groups = math.gcd(groups, channels)
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, h, w, c = x.shape
        out = ops.group_norm(x.reshape(b * t, h, w, c), self.groups, self.weight, self.bias)
        return out.reshape(b, t, h, w, c)


class ResidualBlock(nn.Module):
    """norm -> act -> conv, twice, plus a (1x1x1-projected) skip connection."""
    def __init__(self, cin: int, cout: int, config: CodecConfig):
        super().__init__()
        kernel = (config.temporal_kernel, config.spatial_kernel, config.spatial_kernel)
        self.activation = ops.activation(config.activation)
        self.norm1 = FrameGroupNorm(config.norm_groups, cin)
        self.conv1 = CausalConv3d(cin, cout, kernel)
        self.norm2 = FrameGroupNorm(config.norm_groups, cout)
        self.conv2 = CausalConv3d(cout, cout, kernel)
        self.skip = CausalConv3d(cin, cout, (1, 1, 1)) if cin != cout else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.conv1(self.activation(self.norm1(x)))
        out = self.conv2(self.activation(self.norm2(out)))
        residual = x if self.skip is None else self.skip(x)
        return ops.add(residual, out)


class _Level(nn.Module):
    def __init__(self, blocks: List[nn.Module], resample: nn.Module):
        super().__init__()
        self.blocks = nn.ModuleList(blocks)
        self.resample = resample


class Upsample(nn.Module):
    """Nearest-neighbor upsample then conv. Temporal doubling drops the first frame: t -> 2t - 1."""
    def __init__(self, cin: int, cout: int, temporal: bool, spatial: bool, config: CodecConfig):
        super().__init__()
        self.temporal = temporal
        self.spatial = spatial
        self.conv = CausalConv3d(cin, cout, (config.temporal_kernel, config.spatial_kernel, config.spatial_kernel))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = 2 if self.spatial else 1
        out = ops.upsample_nearest(x, (2 if self.temporal else 1, s, s))
        if self.temporal:
            out = ops.slice_axis(out, 1, 1, out.shape[1])
        return self.conv(out)

# ============================
# Encoder and Decoder
# ============================

class Encoder(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        kernel = (config.temporal_kernel, config.spatial_kernel, config.spatial_kernel)
        channels = config.level_channels(0)
        self.conv_in = CausalConv3d(3, channels, kernel)
        self.levels = nn.ModuleList()
        for i in range(config.levels):
            cout = config.level_channels(i)
            blocks = [ResidualBlock(channels if j == 0 else cout, cout, config) for j in range(config.residual_blocks)]
            cin = cout if blocks else channels
            st = 2 if i < config.temporal_down_layers else 1
            ss = 2 if i < config.spatial_down_layers else 1
            self.levels.append(_Level(blocks, CausalConv3d(cin, cout, kernel, (st, ss, ss))))
            channels = cout
        self.mid = ResidualBlock(channels, channels, config)
        self.norm_out = FrameGroupNorm(config.norm_groups, channels)
        self.activation = ops.activation(config.activation)
        self.conv_out = CausalConv3d(channels, config.c * (2 if config.variational else 1), kernel)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv_in(x)
        for level in self.levels:
            for block in level.blocks:
                h = block(h)
            h = level.resample(h)
        h = self.mid(h)
        return self.conv_out(self.activation(self.norm_out(h)))


class Decoder(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        kernel = (config.temporal_kernel, config.spatial_kernel, config.spatial_kernel)
        channels = config.level_channels(max(config.levels - 1, 0))
        self.in_channels = config.decoder_in_channels
        self.conv_in = CausalConv3d(self.in_channels, channels, kernel)
        self.mid = ResidualBlock(channels, channels, config)
        self.levels = nn.ModuleList()
        for i in reversed(range(config.levels)):
            cout = config.level_channels(i)
            up = Upsample(channels, cout, i < config.temporal_down_layers, i < config.spatial_down_layers, config)
            blocks = [ResidualBlock(cout, cout, config) for _ in range(config.residual_blocks)]
            self.levels.append(_Level(blocks, up))
            channels = cout
        self.norm_out = FrameGroupNorm(config.norm_groups, channels)
        self.activation = ops.activation(config.activation)
        self.conv_out = CausalConv3d(channels, 3, kernel)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        h = self.mid(self.conv_in(v))
        for level in self.levels:
            h = level.resample(h)
            for block in level.blocks:
                h = block(h)
        return self.conv_out(self.activation(self.norm_out(h)))

# ============================
# Autoencoder
# ============================

class VideoAutoencoder(nn.Module):
    """
    Causal video autoencoder with a configurable latent representation.

    ``fourplane`` and ``triplane`` factorize Z and recompose the planes before
    decoding; ``volumetric`` decodes Z directly.
    """
    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)
        t, h, w = config.latent_extents()
        self.layout = LatentLayout(t, h, w, config.c)
        lp = config.reduce == "lp" and config.latent_kind != "volumetric"
        self.reducer = AxisReducer(config.reduce if lp else "mp", self.layout if lp else None)

    # -- encoding --------------------------------------------------------

    def _clip_values(self, clip: ClipLike) -> Tuple[torch.Tensor, bool]:
        values = clip.values if isinstance(clip, VideoClip) else clip
        VideoClip(values).validate(self.config)
        unbatched = values.dim() == 4
        return (values.unsqueeze(0) if unbatched else values), unbatched

    def encode(self, clip: ClipLike, sample: bool = False, generator: Optional[torch.Generator] = None) -> LatentVolume:
        """Z for a clip; the posterior mean unless ``sample`` draws a reparameterized latent."""
        x, unbatched = self._clip_values(clip)
        h = self.encoder(x)
        mean = logvar = None
        z = h
        if self.config.variational:
            mean, logvar = h.chunk(2, dim=-1)
            logvar = logvar.clamp(-30.0, 20.0)
            z = mean
            if sample:
                noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
                z = mean + torch.exp(0.5 * logvar) * noise
        if unbatched:
            z = z.squeeze(0)
            mean = mean.squeeze(0) if mean is not None else None
            logvar = logvar.squeeze(0) if logvar is not None else None
        return LatentVolume(z, mean, logvar)

    def encode_latent(self, values: torch.Tensor) -> torch.Tensor:
        return self.encode(values).values

    # -- latent representation --------------------------------------------

    def axis_reducer(self, z: torch.Tensor, reduce: Optional[str] = None) -> AxisReducer:
        """The trained reducer, or a fresh one when ``reduce`` asks for the other kind."""
        if reduce is None or ReduceKind(reduce) is self.reducer.kind:
            return self.reducer
        if ReduceKind(reduce) is ReduceKind.MEAN_POOL:
            return AxisReducer()
        # untrained LinearProj: zero logits, so uniform weights
        return AxisReducer(ReduceKind.LINEAR_PROJ, LatentLayout.of(z))

    def planes(
        self,
        z: torch.Tensor,
        clip_values: Optional[torch.Tensor] = None,
        mode: Optional[str] = None,
        reduce: Optional[str] = None,
    ) -> PlaneSet:
        """Four planes of Z; boundary mode encodes the clip's first and last frame."""
        if self.config.latent_kind != "fourplane":
            raise ValueError(f"{self.config.latent_kind} codec has no four-plane representation")
        mode = SpatialPlaneMode(mode or self.config.spatial_mode)
        reducer = self.axis_reducer(z, reduce)
        if mode is SpatialPlaneMode.BOUNDARY_ENCODE:
            if clip_values is None:
                raise ValueError("boundary spatial planes need the source clip")
            first, last = boundary_planes(
                clip_values.narrow(-4, 0, 1), clip_values.narrow(-4, clip_values.shape[-4] - 1, 1), self.encode_latent
            )
            return factorize_boundary(z, first, last, reducer)
        return factorize(z, reducer)

    def feature_volume(self, z: torch.Tensor, clip_values: Optional[torch.Tensor] = None) -> torch.Tensor:
        kind = self.config.latent_kind
        if kind == "volumetric":
            return z
        if kind == "triplane":
            return recompose_triplane(factorize_triplane(z, self.reducer), self.config.combine)
        return recompose(self.planes(z, clip_values), self.config.combine)

    # -- decoding --------------------------------------------------------

    def decode_raw(self, volume: torch.Tensor) -> torch.Tensor:
        if volume.shape[-1] != self.decoder.in_channels:
            raise ShapeError(f"decoder expects {self.decoder.in_channels} channels, got {volume.shape[-1]}")
        unbatched = volume.dim() == 4
        out = self.decoder(volume.unsqueeze(0) if unbatched else volume)
        return out.squeeze(0) if unbatched else out

    def decode(self, volume: torch.Tensor) -> VideoClip:
        return VideoClip(self.decode_raw(volume).clamp(-1.0, 1.0))

    def decode_planes(self, planes: PlaneSet, combine: Optional[str] = None) -> VideoClip:
        return self.decode(recompose(planes, CombineKind(combine or self.config.combine)))

    # -- full path -------------------------------------------------------

    def forward(
        self, clip: ClipLike, sample: bool = False, generator: Optional[torch.Generator] = None
    ) -> Tuple[torch.Tensor, LatentVolume]:
        """Unclamped reconstruction and the latent, for training."""
        values = clip.values if isinstance(clip, VideoClip) else clip
        latent = self.encode(values, sample=sample, generator=generator)
        return self.decode_raw(self.feature_volume(latent.values, values)), latent

    @torch.no_grad()
    def reconstruct(self, clip: ClipLike) -> VideoClip:
        recon, _ = self.forward(clip)
        return VideoClip(recon.clamp(-1.0, 1.0))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_codec(config: CodecConfig, seed: Optional[int] = None) -> VideoAutoencoder:
    if seed is None:
        return VideoAutoencoder(config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return VideoAutoencoder(config)
