# File: pipelines/tasks.py

"""
Task wiring on top of a trained codec and denoiser.

Every task samples only its target planes; conditioning planes are encoded
from the inputs, scaled into token space for the denoiser and inserted
unscaled and untouched into the recomposed PlaneSet.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import torch

from codec.autoencoder import VideoAutoencoder, build_codec
from codec.volumes import VideoClip
from config import CodecConfig, DenoiserConfig, DiffusionConfig
from diffusion.sampling import ddim_sample
from diffusion.schedule import NoiseSchedule, build_schedule
from errors import ConfigError, ShapeError
from factorization.planes import PLANE_ORDER, T_AXIS, CombineKind, LatentLayout, PlaneSet, boundary_planes
from factorization.sequence import (
    IMAGE_PLANES,
    flatten_planes,
    flatten_sequence,
    flatten_volume,
    merge_planes,
    split_sequence,
    task_partition,
    unflatten_volume,
)
from networks import PlaneDenoiser, build_denoiser
from substrate.checkpoint import load_container, restore_module, save_container

logger = logging.getLogger(__name__)

__all__ = [
    "TaskSpec",
    "context_frame_count",
    "task_partition",
    "video_planes",
    "video_tokens",
    "image_planes",
    "image_tokens",
    "save_planes",
    "load_planes",
    "planes_combine",
    "load_codec",
    "load_denoiser",
    "FourPlanePipeline",
]

ClipLike = Union[VideoClip, torch.Tensor]


@dataclass(frozen=True)
class TaskSpec:
    """A generation task and its payload (label, context plane or boundary frames)."""
    task: str
    label: Optional[int] = None
    context: Optional[torch.Tensor] = field(default=None, compare=False)
    boundary: Optional[Tuple[torch.Tensor, torch.Tensor]] = field(default=None, compare=False)

    def __post_init__(self):
        task_partition(self.task)

    @classmethod
    def class_conditional(cls, label: int) -> "TaskSpec":
        return cls("class", label=label)

    @classmethod
    def frame_prediction(cls, context_plane: torch.Tensor) -> "TaskSpec":
        return cls("predict", context=context_plane)

    @classmethod
    def interpolation(cls, first: torch.Tensor, last: torch.Tensor) -> "TaskSpec":
        return cls("interp", boundary=(first, last))

    @classmethod
    def image_generation(cls, label: Optional[int] = None) -> "TaskSpec":
        return cls("image", label=label)

    @property
    def conditioning_planes(self) -> Tuple[str, ...]:
        return task_partition(self.task)[0]

    @property
    def target_planes(self) -> Tuple[str, ...]:
        return task_partition(self.task)[1]


def context_frame_count(t: int, f_t: int) -> int:
    """Pixel frames whose latents are exactly the first spatial segment Z[0:t//2]."""
    if t < 2:
        raise ValueError(f"frame prediction needs at least two latent frames, got t={t}")
    return (t // 2 - 1) * f_t + 1


# ============================
# Tokenization
# ============================

def _values(clip: ClipLike) -> torch.Tensor:
    values = clip.values if isinstance(clip, VideoClip) else clip
    return values.unsqueeze(0) if values.dim() == 4 else values


@torch.no_grad()
def video_planes(
    codec: VideoAutoencoder, clips: ClipLike, mode: Optional[str] = None, reduce: Optional[str] = None
) -> PlaneSet:
    values = _values(clips)
    return codec.planes(codec.encode(values).values, values, mode=mode, reduce=reduce)


@torch.no_grad()
def video_tokens(codec: VideoAutoencoder, clips: ClipLike) -> torch.Tensor:
    """Full token sequence: all four planes, or every latent voxel for a volumetric codec."""
    values = _values(clips)
    if codec.config.latent_kind == "volumetric":
        return flatten_volume(codec.encode(values).values)
    if codec.config.latent_kind != "fourplane":
        raise ConfigError(f"{codec.config.latent_kind} latents have no token sequence")
    return flatten_sequence(video_planes(codec, values))


@torch.no_grad()
def image_planes(codec: VideoAutoencoder, image: torch.Tensor) -> PlaneSet:
    """Planes of single frames (H, W, 3), (B, H, W, 3) or (B, 1, H, W, 3); t == 1."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() == 4:
        image = image.unsqueeze(1)
    if image.shape[1] != 1:
        raise ShapeError(f"expected single-frame input, got {image.shape[1]} frames")
    return video_planes(codec, image)


@torch.no_grad()
def image_tokens(codec: VideoAutoencoder, image: torch.Tensor) -> torch.Tensor:
    """One spatial plane plus both axis vectors: h*w + h + w tokens."""
    planes = image_planes(codec, image)
    if not torch.equal(planes.xy1, planes.xy2):
        raise ValueError("single-frame spatial planes differ; cannot drop the redundant one")
    return flatten_planes(planes.as_dict(), IMAGE_PLANES)


def save_planes(path: Union[str, Path], planes: PlaneSet, combine: Optional[str] = None) -> Path:
    header = {"layout": planes.layout.to_dict(), "mode": planes.mode.value, "reduce": planes.reduce.value}
    if combine is not None:
        header["combine"] = CombineKind(combine).value
    return save_container(path, "planes", header, {f"planes/{name}": planes.get(name) for name in PLANE_ORDER})


def load_planes(path: Union[str, Path]) -> PlaneSet:
    container = load_container(path, expect_kind="planes")
    layout = LatentLayout(**container.header["layout"])
    return merge_planes(layout, container.section("planes"), container.header["mode"], container.header["reduce"])


def planes_combine(path: Union[str, Path]) -> Optional[str]:
    """Combine recorded when the planes were written, if any."""
    return load_container(path, expect_kind="planes").header.get("combine")


# ============================
# Checkpoint loading
# ============================

def load_codec(path: Union[str, Path]) -> VideoAutoencoder:
    container = load_container(path, expect_kind="codec")
    codec = build_codec(CodecConfig.from_dict(container.header["codec_config"]))
    restore_module(codec, container.section("params"))
    codec.eval()
    logger.info(f"Loaded codec from {path} (step {container.header.get('step')})")
    return codec


def load_denoiser(path: Union[str, Path]) -> Tuple[PlaneDenoiser, Dict[str, Any]]:
    """Denoiser and the diffusion checkpoint header (schedule config, latent scale, codec path)."""
    container = load_container(path, expect_kind="diffusion")
    denoiser = build_denoiser(DenoiserConfig.from_dict(container.header["denoiser_config"]))
    restore_module(denoiser, container.section("params"))
    denoiser.eval()
    logger.info(f"Loaded denoiser from {path} (step {container.header.get('step')})")
    return denoiser, container.header


# ============================
# Pipeline
# ============================

class FourPlanePipeline:
    """Class-conditional generation, frame prediction, interpolation and image generation."""

    def __init__(
        self,
        codec: VideoAutoencoder,
        denoiser: PlaneDenoiser,
        schedule: NoiseSchedule,
        latent_scale: float = 1.0,
        sample_steps: int = 50,
        eta: float = 0.0,
    ):
        if denoiser.config.token_dim != codec.config.c:
            raise ConfigError(f"denoiser token_dim {denoiser.config.token_dim} != codec latent channels {codec.config.c}")
        if latent_scale <= 0:
            raise ValueError("latent_scale must be positive")
        self.codec = codec.eval()
        self.denoiser = denoiser.eval()
        self.schedule = schedule
        self.latent_scale = float(latent_scale)
        self.sample_steps = sample_steps
        self.eta = eta

    @classmethod
    def from_checkpoints(
        cls,
        codec_path: Union[str, Path],
        diffusion_path: Union[str, Path],
        sample_steps: Optional[int] = None,
        eta: Optional[float] = None,
    ) -> "FourPlanePipeline":
        codec = load_codec(codec_path)
        denoiser, header = load_denoiser(diffusion_path)
        diffusion = DiffusionConfig.from_dict(header["diffusion_config"])
        schedule = build_schedule(diffusion.steps, diffusion.beta_start, diffusion.beta_end, diffusion.zero_terminal)
        return cls(
            codec,
            denoiser,
            schedule,
            latent_scale=header["latent_scale"],
            sample_steps=diffusion.sample_steps if sample_steps is None else sample_steps,
            eta=diffusion.eta if eta is None else eta,
        )

    @property
    def layout(self) -> LatentLayout:
        return self.codec.layout

    @property
    def image_layout(self) -> LatentLayout:
        return LatentLayout(1, self.layout.h, self.layout.w, self.layout.c)

    def _require(self, spatial_mode: Optional[str] = None) -> None:
        if self.codec.config.latent_kind != "fourplane":
            raise ConfigError(f"this task needs a fourplane codec, got {self.codec.config.latent_kind}")
        if spatial_mode is not None and self.codec.config.spatial_mode != spatial_mode:
            raise ConfigError(f"this task needs a codec in {spatial_mode} mode, got {self.codec.config.spatial_mode}")

    def _labels(self, label: Optional[int], batch: int) -> Optional[torch.Tensor]:
        if label is None:
            return None
        if not 0 <= label < self.denoiser.config.vocab:
            raise ValueError(f"label {label} outside [0, {self.denoiser.config.vocab})")
        return torch.full((batch,), label, dtype=torch.long)

    def sample_tokens(
        self,
        spec: TaskSpec,
        layout: LatentLayout,
        seed: int,
        batch: int = 1,
        cond_tokens: Optional[torch.Tensor] = None,
        planes: Optional[Tuple[str, ...]] = None,
    ) -> torch.Tensor:
        """Unscaled target tokens for one task, (batch, L_target, c)."""
        targets = planes if planes is not None else spec.target_planes
        length = layout.volume_length if targets == ("volume",) else layout.sequence_length(targets)
        conditioning: Dict[str, Any] = {"task": spec.task, "layout": layout}
        labels = self._labels(spec.label, batch)
        if labels is not None:
            conditioning["labels"] = labels
        if cond_tokens is not None:
            conditioning["cond_tokens"] = cond_tokens * self.latent_scale
        if planes is not None:
            conditioning["planes"] = planes
        tokens = ddim_sample(
            self.denoiser,
            (batch, length, layout.c),
            self.schedule,
            steps=self.sample_steps,
            eta=self.eta,
            seed=seed,
            conditioning=conditioning,
            self_conditioning=self.denoiser.config.self_conditioning,
        )
        return tokens / self.latent_scale

    def _assemble(self, layout: LatentLayout, spec: TaskSpec, tokens: torch.Tensor, given: Dict[str, torch.Tensor]) -> PlaneSet:
        parts = split_sequence(tokens, layout, spec.target_planes)
        parts.update(given)
        return merge_planes(layout, parts, self.codec.config.spatial_mode, self.codec.reducer.kind)

    # -- class-conditional ------------------------------------------------

    @torch.no_grad()
    def generate_class_conditional_planes(self, label: Optional[int], seed: int, batch: int = 1) -> PlaneSet:
        self._require()
        spec = TaskSpec("class", label=label)
        return self._assemble(self.layout, spec, self.sample_tokens(spec, self.layout, seed, batch), {})

    @torch.no_grad()
    def generate_class_conditional(self, label: Optional[int], seed: int, batch: int = 1) -> VideoClip:
        if self.codec.config.latent_kind == "volumetric":
            spec = TaskSpec("class", label=label)
            tokens = self.sample_tokens(spec, self.layout, seed, batch, planes=("volume",))
            return self.codec.decode(unflatten_volume(tokens, self.layout))
        return self.codec.decode_planes(self.generate_class_conditional_planes(label, seed, batch))

    # -- frame prediction ---------------------------------------------------

    @torch.no_grad()
    def context_plane(self, context: ClipLike) -> torch.Tensor:
        """First spatial plane from the leading context frames of a clip."""
        self._require("segment")
        values = _values(context)
        frames = context_frame_count(self.layout.t, self.codec.config.f_t)
        if values.shape[1] < frames:
            raise ShapeError(f"prediction context needs {frames} frames, got {values.shape[1]}")
        z = self.codec.encode(values[:, :frames]).values
        return self.codec.reducer(z, T_AXIS, "xy1")

    @torch.no_grad()
    def predict_future_planes(self, context_plane: torch.Tensor, seed: int) -> PlaneSet:
        self._require("segment")
        layout = self.layout
        if context_plane.dim() == 3:
            context_plane = context_plane.unsqueeze(0)
        if tuple(context_plane.shape[1:]) != (layout.h, layout.w, layout.c):
            raise ShapeError(f"context plane {tuple(context_plane.shape)} does not match layout {layout}")
        spec = TaskSpec.frame_prediction(context_plane)
        cond = flatten_planes({"xy1": context_plane}, spec.conditioning_planes)
        tokens = self.sample_tokens(spec, layout, seed, context_plane.shape[0], cond_tokens=cond)
        return self._assemble(layout, spec, tokens, {"xy1": context_plane})

    @torch.no_grad()
    def predict_future(self, context_plane: torch.Tensor, seed: int) -> VideoClip:
        return self.codec.decode_planes(self.predict_future_planes(context_plane, seed))

    # -- interpolation ------------------------------------------------------

    @torch.no_grad()
    def boundary_planes(self, first: torch.Tensor, last: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Spatial planes of the two boundary frames, each (B, h, w, c)."""
        self._require("boundary")
        xy1, xy2 = boundary_planes(first, last, self.codec.encode_latent)
        if xy1.dim() == 3:
            xy1, xy2 = xy1.unsqueeze(0), xy2.unsqueeze(0)
        return xy1, xy2

    @torch.no_grad()
    def interpolate_planes(self, first: torch.Tensor, last: torch.Tensor, seed: int) -> PlaneSet:
        xy1, xy2 = self.boundary_planes(first, last)
        if xy1.shape != xy2.shape:
            raise ShapeError("boundary frames differ in shape")
        spec = TaskSpec.interpolation(first, last)
        cond = flatten_planes({"xy1": xy1, "xy2": xy2}, spec.conditioning_planes)
        tokens = self.sample_tokens(spec, self.layout, seed, xy1.shape[0], cond_tokens=cond)
        return self._assemble(self.layout, spec, tokens, {"xy1": xy1, "xy2": xy2})

    @torch.no_grad()
    def interpolate(self, first: torch.Tensor, last: torch.Tensor, seed: int) -> VideoClip:
        return self.codec.decode_planes(self.interpolate_planes(first, last, seed))

    # -- images ---------------------------------------------------------------

    def image_tokens(self, image: torch.Tensor) -> torch.Tensor:
        self._require()
        return image_tokens(self.codec, image)

    @torch.no_grad()
    def generate_image(self, seed: int, label: Optional[int] = None, batch: int = 1) -> VideoClip:
        """Single-frame sample: (batch, 1, H, W, 3)."""
        self._require()
        spec = TaskSpec.image_generation(label)
        layout = self.image_layout
        tokens = self.sample_tokens(spec, layout, seed, batch)
        parts = split_sequence(tokens, layout, IMAGE_PLANES)
        parts["xy2"] = parts["xy1"]
        planes = merge_planes(layout, parts, self.codec.config.spatial_mode, self.codec.reducer.kind)
        return self.codec.decode_planes(planes)
