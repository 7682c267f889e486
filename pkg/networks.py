# File: networks.py

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from config import TASKS, DenoiserConfig
from errors import ShapeError
from factorization import LatentLayout
from factorization.sequence import task_partition
from substrate import ops

logger = logging.getLogger(__name__)

TASK_IDS: Dict[str, int] = {task: i for i, task in enumerate(TASKS)}
PLANE_IDS: Dict[str, int] = {"xt": 0, "yt": 1, "xy1": 2, "xy2": 3, "volume": 4}
COND_PLANE_OFFSET = len(PLANE_IDS)
PLANE_AXES: Dict[str, Tuple[str, ...]] = {
    "xt": ("t", "y"),
    "yt": ("t", "x"),
    "xy1": ("y", "x"),
    "xy2": ("y", "x"),
    "volume": ("t", "y", "x"),
}

# ============================
# Timestep and Position Encodings
# ============================

class SinusoidalTimeEncoding(nn.Module):
    """Encodes diffusion timesteps using sinusoidal functions."""
    def __init__(self, time_encoding_dim: int, max_period: float = 10000.0):
        super().__init__()
        half = time_encoding_dim // 2
        freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
        self.register_buffer("frequencies", freqs, persistent=False)

    def forward(self, time_step: torch.Tensor) -> torch.Tensor:
        scaled_time = time_step.float().unsqueeze(-1) * self.frequencies  # (batch_size, dim//2)
        return torch.cat([torch.cos(scaled_time), torch.sin(scaled_time)], dim=-1)


class TimestepEmbedder(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.encoding = SinusoidalTimeEncoding(config.time_freq_dim)
        self.linear1 = nn.Linear(config.time_freq_dim, config.width)
        self.linear2 = nn.Linear(config.width, config.width)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.linear2(ops.silu(self.linear1(self.encoding(t))))


class PlanePositionalEncoding(nn.Module):
    """
    Learned plane-id embedding plus per-axis learned coordinate embeddings.

    A token of plane ``xt`` at (tau, y) gets plane[xt] + t[tau] + y[y];
    conditioning planes use their own plane ids.
    """
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.max_extent = config.max_extent
        self.plane = nn.Parameter(torch.randn(2 * COND_PLANE_OFFSET, config.width) * 0.02)
        self.axes = nn.ParameterDict({axis: nn.Parameter(torch.randn(config.max_extent, config.width) * 0.02) for axis in ("t", "y", "x")})

    def coordinates(self, layout: LatentLayout, plane: str) -> Dict[str, torch.Tensor]:
        extents = {"t": layout.t, "y": layout.h, "x": layout.w}
        axes = PLANE_AXES[plane]
        sizes = [extents[a] for a in axes]
        if max(sizes) > self.max_extent:
            raise ShapeError(f"plane {plane} extent {max(sizes)} exceeds max_extent {self.max_extent}")
        grids = torch.meshgrid(*[torch.arange(s) for s in sizes], indexing="ij")
        return {a: g.reshape(-1) for a, g in zip(axes, grids)}

    def forward(self, layout: LatentLayout, planes: Sequence[str], conditioning: bool = False) -> torch.Tensor:
        pieces = []
        for plane in planes:
            coords = self.coordinates(layout, plane)
            n = next(iter(coords.values())).numel()
            pid = torch.full((n,), PLANE_IDS[plane] + (COND_PLANE_OFFSET if conditioning else 0), dtype=torch.long)
            emb = ops.embedding(self.plane, pid)
            for axis, index in coords.items():
                emb = ops.add(emb, ops.embedding(self.axes[axis], index))
            pieces.append(emb)
        return ops.concat(pieces, 0)

# ============================
# Attention and Conditioning
# ============================

class QKNormAttention(nn.Module):
    """Multi-head self-attention on L2-normalized queries and keys times a learned per-head temperature."""
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)
        self.log_temperature = nn.Parameter(torch.full((heads,), 0.5 * math.log(width // heads) + math.log(2.0)))

    def attention_weights(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        q, k, v = rearrange(self.qkv(x), "b l (three h e) -> three b h l e", three=3, h=self.heads)
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        temperature = self.log_temperature.exp().view(1, -1, 1, 1)
        scores = ops.mul(ops.matmul(q, k.transpose(-1, -2)), temperature)
        return ops.softmax(scores), v

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        weights, v = self.attention_weights(x)
        out = rearrange(ops.matmul(weights, v), "b h l e -> b l (h e)")
        return self.proj(out)


class AdaLNLoRA(nn.Module):
    """Layer-specific rank-r correction added to the shared modulation."""
    def __init__(self, width: int, rank: int, chunks: int = 6):
        super().__init__()
        self.down = nn.Linear(width, rank, bias=False)
        self.up = nn.Linear(rank, chunks * width, bias=False)
        nn.init.zeros_(self.up.weight)

    def forward(self, base: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return ops.add(base, self.up(self.down(cond)))


@dataclass
class Modulation:
    shift_attn: torch.Tensor
    scale_attn: torch.Tensor
    gate_attn: torch.Tensor
    shift_mlp: torch.Tensor
    scale_mlp: torch.Tensor
    gate_mlp: torch.Tensor

    @classmethod
    def split(cls, params: torch.Tensor) -> "Modulation":
        return cls(*(p.unsqueeze(1) for p in params.chunk(6, dim=-1)))


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return ops.layer_norm(x, 1 + scale, shift)


class PlaneTransformerBlock(nn.Module):
    """Pre-norm transformer block with adaptive layer-norm modulation and zero-initialized residual gates."""
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.attn = QKNormAttention(config.width, config.heads)
        self.linear1 = nn.Linear(config.width, config.mlp_ratio * config.width)
        self.linear2 = nn.Linear(config.mlp_ratio * config.width, config.width)
        self.lora = AdaLNLoRA(config.width, config.lora_rank)

    def forward(self, x: torch.Tensor, mod: Modulation) -> torch.Tensor:
        h = modulate(x, mod.shift_attn, mod.scale_attn)
        x = ops.add(x, ops.mul(mod.gate_attn, self.attn(h)))
        h = modulate(x, mod.shift_mlp, mod.scale_mlp)
        h = self.linear2(ops.gelu(self.linear1(h)))
        return ops.add(x, ops.mul(mod.gate_mlp, h))


class FinalLayer(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.modulation = nn.Linear(config.width, 2 * config.width)
        self.linear = nn.Linear(config.width, config.token_dim)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        shift, scale = self.modulation(cond).unsqueeze(1).chunk(2, dim=-1)
        return self.linear(modulate(x, shift, scale))

# ============================
# Denoiser
# ============================

class PlaneDenoiser(nn.Module):
    """
    Transformer predicting v over a flattened plane sequence.

    Conditioning planes are projected separately, prefixed to the target
    tokens and dropped from the output. Timestep, class and task embeddings
    are summed into one conditioning vector that drives AdaLN-LoRA.
    Attention is unmasked.
    """
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        d, c = config.width, config.token_dim
        self.input_proj = nn.Linear(2 * c if config.self_conditioning else c, d)
        self.cond_proj = nn.Linear(c, d)
        self.position = PlanePositionalEncoding(config)
        self.time_embed = TimestepEmbedder(config)
        self.class_embed = nn.Parameter(torch.randn(config.vocab + 1, d) * 0.02)  # last row: no label
        self.task_embed = nn.Parameter(torch.randn(len(TASKS), d) * 0.02)
        self.adaln_base = nn.Linear(d, 6 * d)
        nn.init.zeros_(self.adaln_base.weight)
        nn.init.zeros_(self.adaln_base.bias)
        self.blocks = nn.ModuleList([PlaneTransformerBlock(config) for _ in range(config.depth)])
        self.final = FinalLayer(config)

    # -- conditioning ----------------------------------------------------

    def cond_embedding(self, t: torch.Tensor, labels: Optional[torch.Tensor], task: str) -> torch.Tensor:
        if task not in TASK_IDS:
            raise ValueError(f"unknown task {task!r}")
        batch = t.shape[0]
        if labels is None:
            labels = torch.full((batch,), self.config.vocab, dtype=torch.long)
        emb = ops.add(self.time_embed(t), ops.embedding(self.class_embed, labels.long()))
        return ops.add(emb, ops.embedding(self.task_embed, torch.full((batch,), TASK_IDS[task], dtype=torch.long)))

    def modulation(self, cond_embedding: torch.Tensor, layer_index: int) -> Modulation:
        """Shared base MLP output plus the layer's low-rank correction."""
        cond = ops.silu(cond_embedding)
        return Modulation.split(self.blocks[layer_index].lora(self.adaln_base(cond), cond))

    def adaln_lora_modulate(self, features: torch.Tensor, cond_embedding: torch.Tensor, layer_index: int) -> Tuple[torch.Tensor, torch.Tensor]:
        """Modulated attention-branch input and its residual gate for one layer."""
        mod = self.modulation(cond_embedding, layer_index)
        return modulate(features, mod.shift_attn, mod.scale_attn), mod.gate_attn

    def modulation_parameter_count(self) -> int:
        shared = sum(p.numel() for p in self.adaln_base.parameters())
        return shared + sum(p.numel() for block in self.blocks for p in block.lora.parameters())

    # -- forward ---------------------------------------------------------

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor,
        self_cond: Optional[torch.Tensor] = None,
        cond_tokens: Optional[torch.Tensor] = None,
        labels: Optional[torch.Tensor] = None,
        task: str = "class",
        layout: Optional[LatentLayout] = None,
        planes: Optional[Sequence[str]] = None,
    ) -> torch.Tensor:
        if layout is None:
            raise ShapeError("the denoiser needs the latent layout to place its tokens")
        if z_t.dim() != 3 or z_t.shape[-1] != self.config.token_dim:
            raise ShapeError(f"tokens must be (B, L, {self.config.token_dim}), got {tuple(z_t.shape)}")
        if planes is not None:
            target_planes, cond_planes = tuple(planes), ()
        else:
            cond_planes, target_planes = task_partition(task)
        lengths = {"volume": layout.volume_length}
        expected = sum(lengths.get(p) or layout.sequence_length((p,)) for p in target_planes)
        if z_t.shape[1] != expected:
            raise ShapeError(f"{z_t.shape[1]} target tokens do not match {target_planes} at {layout} ({expected})")
        cond_len = 0 if cond_tokens is None else cond_tokens.shape[1]
        if cond_planes and cond_len != layout.sequence_length(cond_planes):
            raise ShapeError(f"task {task} needs {layout.sequence_length(cond_planes)} conditioning tokens, got {cond_len}")
        if z_t.shape[1] + cond_len > self.config.max_seq:
            raise ShapeError(f"sequence length {z_t.shape[1] + cond_len} exceeds max_seq {self.config.max_seq}")

        if self.config.self_conditioning:
            if self_cond is None:
                self_cond = torch.zeros_like(z_t)
            x = self.input_proj(ops.concat([z_t, self_cond], -1))
        else:
            x = self.input_proj(z_t)
        x = ops.add(x, self.position(layout, target_planes))
        if cond_len:
            prefix = ops.add(self.cond_proj(cond_tokens), self.position(layout, cond_planes, conditioning=True))
            x = ops.concat([prefix, x], 1)

        emb = self.cond_embedding(t, labels, task)
        for i, block in enumerate(self.blocks):
            x = block(x, self.modulation(emb, i))
        x = ops.slice_axis(x, 1, cond_len, x.shape[1]) if cond_len else x
        return self.final(x, ops.silu(emb))


def modulation_parameter_count(config: DenoiserConfig) -> int:
    """Closed form: shared Linear(d, 6d) plus depth * (d*r + r*6d) low-rank factors."""
    d, r = config.width, config.lora_rank
    return 6 * d * d + 6 * d + config.depth * 7 * r * d


def build_denoiser(config: DenoiserConfig, seed: Optional[int] = None) -> PlaneDenoiser:
    if seed is None:
        return PlaneDenoiser(config)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return PlaneDenoiser(config)
