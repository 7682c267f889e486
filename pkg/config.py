# File: config.py

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar, Union

from errors import ConfigError

T = TypeVar("T", bound="JsonConfig")

LATENT_KINDS = ("fourplane", "volumetric", "triplane")
SPATIAL_MODES = ("segment", "boundary")
REDUCE_KINDS = ("mp", "lp")
COMBINE_KINDS = ("concat", "sum")
ACTIVATIONS = ("silu", "gelu", "relu")
TASKS = ("class", "predict", "interp", "image")

ENV_PREFIX = "FOURPLANE_"


class JsonConfig:
    """Mixin giving dataclass configs a stable JSON form."""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls: Type[T], data: Dict[str, Any]) -> T:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{cls.__name__}: unknown fields {unknown}")
        return cls(**data)

    @classmethod
    def load(cls: Type[T], path: Union[str, Path]) -> T:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def replace(self: T, **changes: Any) -> T:
        return replace(self, **changes)


@dataclass
class CodecConfig(JsonConfig):
    """Causal 3D autoencoder plus the latent representation it feeds."""
    latent_kind: str = "fourplane"  # fourplane | volumetric | triplane
    c: int = 8  # latent channels
    base_channels: int = 32
    residual_blocks: int = 1  # per resolution level
    temporal_down_layers: int = 2
    spatial_down_layers: int = 3
    variational: bool = False
    kl_weight: float = 1e-6
    activation: str = "silu"
    norm_groups: int = 8
    temporal_kernel: int = 3
    spatial_kernel: int = 3
    spatial_mode: str = "segment"  # segment | boundary
    reduce: str = "mp"  # mp | lp
    combine: str = "concat"  # concat | sum
    clip_frames: int = 17
    clip_height: int = 128
    clip_width: int = 128

    def __post_init__(self):
        if self.latent_kind not in LATENT_KINDS:
            raise ConfigError(f"latent_kind must be one of {LATENT_KINDS}, got {self.latent_kind!r}")
        if self.spatial_mode not in SPATIAL_MODES:
            raise ConfigError(f"spatial_mode must be one of {SPATIAL_MODES}, got {self.spatial_mode!r}")
        if self.reduce not in REDUCE_KINDS:
            raise ConfigError(f"reduce must be one of {REDUCE_KINDS}, got {self.reduce!r}")
        if self.combine not in COMBINE_KINDS:
            raise ConfigError(f"combine must be one of {COMBINE_KINDS}, got {self.combine!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.c < 1 or self.base_channels < 1 or self.residual_blocks < 0:
            raise ConfigError("c and base_channels must be >= 1, residual_blocks >= 0")
        if self.temporal_down_layers < 0 or self.spatial_down_layers < 0:
            raise ConfigError("downsampling layer counts must be >= 0")
        if self.temporal_kernel < 1 or self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ConfigError("kernels must be >= 1 and the spatial kernel odd")
        if self.norm_groups < 1 or self.base_channels % self.norm_groups:
            raise ConfigError("norm_groups must divide base_channels")
        if self.spatial_mode == "boundary" and self.latent_kind != "fourplane":
            raise ConfigError("boundary spatial planes only exist for the fourplane latent")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be >= 0")
        if self.clip_frames < 1 or (self.clip_frames - 1) % self.f_t:
            raise ConfigError(f"clip_frames - 1 must be divisible by f_t={self.f_t}")
        if self.clip_height % self.f_s or self.clip_width % self.f_s or self.clip_height < 1 or self.clip_width < 1:
            raise ConfigError(f"clip height/width must be positive multiples of f_s={self.f_s}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CodecConfig":
        data = dict(data)
        f_t = data.pop("f_t", None)
        f_s = data.pop("f_s", None)
        config = super().from_dict(data)
        if f_t is not None and f_t != config.f_t:
            raise ConfigError(f"f_t={f_t} disagrees with temporal_down_layers={config.temporal_down_layers}")
        if f_s is not None and f_s != config.f_s:
            raise ConfigError(f"f_s={f_s} disagrees with spatial_down_layers={config.spatial_down_layers}")
        return config

    @property
    def f_t(self) -> int:
        return 2 ** self.temporal_down_layers

    @property
    def f_s(self) -> int:
        return 2 ** self.spatial_down_layers

    @property
    def levels(self) -> int:
        return max(self.temporal_down_layers, self.spatial_down_layers)

    def level_channels(self, level: int) -> int:
        return self.base_channels * min(2 ** level, 4)

    def latent_extents(self, frames: Optional[int] = None) -> Tuple[int, int, int]:
        frames = self.clip_frames if frames is None else frames
        return (frames - 1) // self.f_t + 1, self.clip_height // self.f_s, self.clip_width // self.f_s

    @property
    def decoder_in_channels(self) -> int:
        if self.latent_kind == "volumetric" or self.combine == "sum":
            return self.c
        return self.c * (4 if self.latent_kind == "fourplane" else 3)

    def image_config(self) -> "CodecConfig":
        """The 2D counterpart: same blocks with a temporal kernel of one."""
        return self.replace(temporal_kernel=1)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["f_t"] = self.f_t
        data["f_s"] = self.f_s
        return data


@dataclass
class DenoiserConfig(JsonConfig):
    """Plane-sequence transformer."""
    depth: int = 8
    width: int = 256
    heads: int = 8
    lora_rank: int = 2
    vocab: int = 3  # class count for class-conditional generation
    max_seq: int = 2048
    token_dim: int = 8  # must equal the codec latent channels
    mlp_ratio: int = 4
    max_extent: int = 64  # largest row/col index the coordinate tables hold
    time_freq_dim: int = 256
    self_conditioning: bool = True

    def __post_init__(self):
        if self.width < 1 or self.heads < 1 or self.depth < 1:
            raise ConfigError("depth, width and heads must be >= 1")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.lora_rank < 1:
            raise ConfigError("lora_rank must be >= 1")
        if self.vocab < 1 or self.max_seq < 1 or self.token_dim < 1 or self.max_extent < 1:
            raise ConfigError("vocab, max_seq, token_dim and max_extent must be >= 1")
        if self.mlp_ratio < 1 or self.time_freq_dim < 2 or self.time_freq_dim % 2:
            raise ConfigError("mlp_ratio must be >= 1 and time_freq_dim a positive even number")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads


@dataclass
class DiffusionConfig(JsonConfig):
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.002
    zero_terminal: bool = True
    self_cond_rate: float = 0.9
    sample_steps: int = 50
    eta: float = 0.0

    def __post_init__(self):
        if self.steps < 2:
            raise ConfigError("diffusion steps must be >= 2")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}")
        if not 0.0 <= self.self_cond_rate <= 1.0:
            raise ConfigError("self_cond_rate must lie in [0, 1]")
        if not 1 <= self.sample_steps <= self.steps:
            raise ConfigError("sample_steps must lie in [1, steps]")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")


@dataclass
class OptimizerConfig(JsonConfig):
    lr: float = 5e-4
    warmup_steps: int = 100
    total_steps: int = 1000
    batch_size: int = 8
    weight_decay: float = 1e-5
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.total_steps < 1:
            raise ConfigError("lr must be > 0, batch_size and total_steps >= 1")
        if self.warmup_steps < 0 or self.max_grad_norm <= 0:
            raise ConfigError("warmup_steps must be >= 0 and max_grad_norm > 0")


DEFAULT_PALETTE: List[List[float]] = [
    [-0.8, -0.8, -0.8],
    [0.9, -0.6, -0.6],
    [-0.6, 0.8, -0.5],
    [-0.5, -0.4, 0.9],
    [0.8, 0.8, -0.7],
    [0.1, 0.1, 0.1],
]


@dataclass
class SyntheticSpec(JsonConfig):
    """Moving-sprite video generator."""
    clip_count: int = 2000
    frames: int = 9
    height: int = 32
    width: int = 32
    sprite_count: int = 2
    sprite_size: int = 8
    motion_kinds: List[str] = field(default_factory=lambda: ["translate", "rotate", "scale"])
    palette: List[List[float]] = field(default_factory=lambda: [list(p) for p in DEFAULT_PALETTE])
    checker_size: int = 4  # background texture period in pixels
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.clip_count < 1 or self.frames < 1 or self.height < 1 or self.width < 1:
            raise ConfigError("clip_count, frames, height and width must be >= 1")
        if self.sprite_count < 0 or self.sprite_size < 1 or self.checker_size < 1:
            raise ConfigError("sprite_count >= 0, sprite_size and checker_size >= 1 required")
        bad = [m for m in self.motion_kinds if m not in ("translate", "rotate", "scale")]
        if bad or not self.motion_kinds:
            raise ConfigError(f"motion_kinds must be a non-empty subset of translate/rotate/scale, got {self.motion_kinds}")
        if len(self.palette) < 2 or any(len(p) != 3 for p in self.palette):
            raise ConfigError("palette needs at least two RGB entries")
        if any(abs(v) > 1.0 for p in self.palette for v in p):
            raise ConfigError("palette values must lie in [-1, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")


@dataclass
class RunConfig(JsonConfig):
    """Everything needed to reproduce a run from its directory."""
    task: str = "class"  # class | predict | interp | image
    codec_config: Optional[str] = None
    denoiser_config: Optional[str] = None
    diffusion_config: Optional[str] = None
    manifest: Optional[str] = None
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    output_dir: str = "runs/default"
    log_interval: int = 10
    checkpoint_interval: int = 100
    threads: int = 1
    joint_image_rate: float = 0.0
    tensorboard: bool = False

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig.from_dict(self.optimizer)
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.log_interval < 1 or self.checkpoint_interval < 1 or self.threads < 1:
            raise ConfigError("log_interval, checkpoint_interval and threads must be >= 1")
        if not 0.0 <= self.joint_image_rate <= 1.0:
            raise ConfigError("joint_image_rate must lie in [0, 1]")


def env_overrides(environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """Runtime knobs read from FOURPLANE_* environment variables."""
    environ = os.environ if environ is None else environ
    out: Dict[str, Any] = {}
    for key, cast in (("SEED", int), ("THREADS", int)):
        raw = environ.get(ENV_PREFIX + key)
        if raw is None or raw == "":
            continue
        try:
            out[key.lower()] = cast(raw)
        except ValueError as e:
            raise ConfigError(f"{ENV_PREFIX}{key}={raw!r} is not an integer") from e
    return out
