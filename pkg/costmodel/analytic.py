# File: costmodel/analytic.py

"""
Sequence length, FLOPs and activation memory of the plane denoiser.

Counts follow ``networks.PlaneDenoiser`` operation by operation and use two
FLOPs per multiply-accumulate. Only matrix products are counted; norms,
softmax, activations and embedding lookups are free.
"""

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Union

import pandas as pd
import torch
import torch.nn as nn
from torch.utils.flop_counter import FlopCounterMode

from config import TASKS, DenoiserConfig
from errors import ShapeError

logger = logging.getLogger(__name__)

__all__ = [
    "LatentShape",
    "RepresentationKind",
    "seq_len",
    "parameter_count",
    "flops_per_step",
    "activation_memory",
    "est_max_batch",
    "reference_surrogate",
    "CostReport",
    "cost_report",
    "reports_to_frame",
    "measure_flops",
]

BYTES_PER_FLOAT = 4
# weights, gradients and two AdamW moments
TRAINING_BYTES_PER_PARAM = 4 * BYTES_PER_FLOAT


@dataclass(frozen=True)
class LatentShape:
    t: int
    h: int
    w: int
    c: int = 8

    def __post_init__(self):
        if min(self.t, self.h, self.w, self.c) < 1:
            raise ShapeError(f"latent extents must be positive, got {self}")

    @classmethod
    def parse(cls, text: str) -> "LatentShape":
        """``"t,h,w"`` or ``"t,h,w,c"``."""
        try:
            values = [int(v) for v in text.split(",")]
        except ValueError as e:
            raise ShapeError(f"cannot parse latent shape {text!r}") from e
        if len(values) not in (3, 4):
            raise ShapeError(f"latent shape needs 3 or 4 comma-separated extents, got {text!r}")
        return cls(*values)

    def __str__(self) -> str:
        return f"{self.t}x{self.h}x{self.w}x{self.c}"


class RepresentationKind(str, Enum):
    VOLUMETRIC = "volumetric"
    FOUR_PLANE = "fourplane"
    TRI_PLANE = "triplane"
    IMAGE_FOUR_PLANE = "image_fourplane"


def seq_len(shape: LatentShape, kind: Union[RepresentationKind, str]) -> int:
    kind = RepresentationKind(kind)
    t, h, w = shape.t, shape.h, shape.w
    if kind is RepresentationKind.VOLUMETRIC:
        return t * h * w
    if kind is RepresentationKind.FOUR_PLANE:
        return t * (h + w) + 2 * h * w
    if kind is RepresentationKind.TRI_PLANE:
        return t * (h + w) + h * w
    return h * w + h + w


def parameter_count(config: DenoiserConfig) -> int:
    """Exact trainable parameter count of ``PlaneDenoiser(config)``."""
    d, c, m, r = config.width, config.token_dim, config.mlp_ratio, config.lora_rank
    c_in = 2 * c if config.self_conditioning else c
    total = c_in * d + d  # input_proj
    total += c * d + d  # cond_proj
    total += 10 * d + 3 * config.max_extent * d  # plane ids and axis tables
    total += config.time_freq_dim * d + d + d * d + d  # timestep MLP
    total += (config.vocab + 1) * d + len(TASKS) * d
    total += 6 * d * d + 6 * d  # shared modulation
    block = 3 * d * d + 3 * d  # qkv
    block += d * d + d  # proj
    block += config.heads  # temperatures
    block += 2 * m * d * d + m * d + d  # mlp
    block += d * r + r * 6 * d  # lora
    total += config.depth * block
    total += 2 * d * d + 2 * d + d * c + c  # final layer
    return total


def flops_per_step(config: DenoiserConfig, seq_len: int, cond_len: int = 0, batch: int = 1, training: bool = False) -> int:
    """
    FLOPs of one denoiser call on ``seq_len`` target and ``cond_len`` prefix tokens.

    ``training=True`` counts forward plus backward as three forward passes.
    """
    if seq_len < 1 or cond_len < 0 or batch < 1:
        raise ValueError("seq_len and batch must be >= 1 and cond_len >= 0")
    d, c, m, r = config.width, config.token_dim, config.mlp_ratio, config.lora_rank
    L = seq_len + cond_len
    c_in = 2 * c if config.self_conditioning else c
    macs = config.time_freq_dim * d + d * d  # timestep MLP
    macs += seq_len * c_in * d + cond_len * c * d  # token projections
    per_layer = 6 * d * d + d * r + r * 6 * d  # modulation
    per_layer += 3 * L * d * d + L * d * d  # qkv and output projection
    per_layer += 2 * L * L * d  # scores and weighted values
    per_layer += 2 * m * L * d * d  # mlp
    macs += config.depth * per_layer
    macs += 2 * d * d + seq_len * d * c  # final layer
    flops = 2 * macs * batch
    return 3 * flops if training else flops


def activation_memory(config: DenoiserConfig, seq_len: int, batch: int = 1, cond_len: int = 0) -> int:
    """
    Bytes of activations kept for backward.

    Per layer: eight (L, d) tensors (input, attention input, q, k, v,
    attention output, residual, MLP input), two (L, m*d) MLP tensors and
    two (heads, L, L) attention maps, all float32.
    """
    if batch < 0:
        raise ValueError("batch must be >= 0")
    L = seq_len + cond_len
    d = config.width
    per_layer = 8 * L * d + 2 * config.mlp_ratio * L * d + 2 * config.heads * L * L
    return config.depth * per_layer * BYTES_PER_FLOAT * batch


def est_max_batch(config: DenoiserConfig, seq_len: int, budget: int, cond_len: int = 0) -> int:
    """Largest batch whose parameters, optimizer state and activations fit in ``budget`` bytes."""
    fixed = parameter_count(config) * TRAINING_BYTES_PER_PARAM
    per_sample = activation_memory(config, seq_len, 1, cond_len)
    if budget <= fixed:
        return 0
    return int((budget - fixed) // per_sample)


def reference_surrogate() -> DenoiserConfig:
    """Stand-in for a ~214M-parameter video transformer (about 220M here)."""
    return DenoiserConfig(depth=13, width=1152, heads=16, lora_rank=2, vocab=101, max_seq=4096, token_dim=8)


@dataclass
class CostReport:
    kind: str
    shape: str
    seq_len: int
    cond_len: int
    flops_per_denoiser_step: int
    activation_bytes: int
    est_max_batch: int
    measured_ms: Optional[float] = None


def cost_report(
    shape: LatentShape,
    config: DenoiserConfig,
    budget: int,
    batch: int = 1,
    kinds: Iterable[Union[RepresentationKind, str]] = tuple(RepresentationKind),
) -> List[CostReport]:
    reports = []
    for kind in kinds:
        kind = RepresentationKind(kind)
        n = seq_len(shape, kind)
        reports.append(
            CostReport(
                kind=kind.value,
                shape=str(shape),
                seq_len=n,
                cond_len=0,
                flops_per_denoiser_step=flops_per_step(config, n, 0, batch),
                activation_bytes=activation_memory(config, n, batch),
                est_max_batch=est_max_batch(config, n, budget),
            )
        )
    return reports


def reports_to_frame(reports: Sequence[CostReport]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in reports])


def measure_flops(model: nn.Module, *args, **kwargs) -> int:
    """Matrix-product FLOPs of one forward call, counted by torch's dispatcher."""
    with torch.no_grad(), FlopCounterMode(display=False) as counter:
        model(*args, **kwargs)
    return int(counter.get_total_flops())
