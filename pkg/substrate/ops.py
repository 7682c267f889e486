# File: substrate/ops.py

"""
Differentiable primitives used by the codec, factorization and denoiser.

Spatial tensors are channel-last: a video volume is ``(t, h, w, c)`` or
``(b, t, h, w, c)``; conv kernels are ``(kt, kh, kw, cin, cout)``.
"""

import logging
from typing import Callable, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from einops import rearrange

from errors import ShapeError
from substrate.autodiff import record

logger = logging.getLogger(__name__)

__all__ = [
    "conv3d_causal",
    "reduce_mean",
    "reduce_weighted",
    "matmul",
    "add",
    "mul",
    "softmax",
    "layer_norm",
    "group_norm",
    "concat",
    "slice_axis",
    "upsample_nearest",
    "silu",
    "gelu",
    "relu",
    "activation",
    "embedding",
]


def _axis(x: torch.Tensor, axis: int) -> int:
    if not -x.dim() <= axis < x.dim():
        raise ShapeError(f"axis {axis} out of range for tensor of rank {x.dim()}")
    return axis % x.dim()


def conv3d_causal(
    x: torch.Tensor,
    kernel: torch.Tensor,
    stride: Tuple[int, int, int] = (1, 1, 1),
    bias: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Causal 3D convolution.

    The past side of the time axis gets kt-1 zero frames, space is padded
    symmetrically. Output extents are ceil(t/st), ceil(h/sh), ceil(w/sw) and
    output frame tau reads only input frames <= tau*st.
    """
    if kernel.dim() != 5:
        raise ShapeError(f"kernel must be (kt, kh, kw, cin, cout), got shape {tuple(kernel.shape)}")
    unbatched = x.dim() == 4
    if unbatched:
        x = x.unsqueeze(0)
    if x.dim() != 5:
        raise ShapeError(f"input must be (t, h, w, c) or (b, t, h, w, c), got shape {tuple(x.shape)}")
    kt, kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"input has {x.shape[-1]} channels but kernel expects {cin}")
    st, sh, sw = stride
    if min(st, sh, sw) < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    pad_h = ((kh - 1) // 2, kh - 1 - (kh - 1) // 2)
    pad_w = ((kw - 1) // 2, kw - 1 - (kw - 1) // 2)
    xc = rearrange(x, "b t h w c -> b c t h w")
    xc = F.pad(xc, (pad_w[0], pad_w[1], pad_h[0], pad_h[1], kt - 1, 0))
    weight = rearrange(kernel, "kt kh kw ci co -> co ci kt kh kw")
    out = F.conv3d(xc, weight, bias, stride=(st, sh, sw))
    out = rearrange(out, "b c t h w -> b t h w c")
    if unbatched:
        out = out.squeeze(0)
    return record("conv3d_causal", (x, kernel), out)


def reduce_mean(x: torch.Tensor, axis: int, keepdim: bool = False) -> torch.Tensor:
    axis = _axis(x, axis)
    return record("reduce_mean", (x,), x.mean(dim=axis, keepdim=keepdim))


def reduce_weighted(x: torch.Tensor, weights: torch.Tensor, axis: int, keepdim: bool = False) -> torch.Tensor:
    """Weighted sum along ``axis`` with a 1D weight vector of that axis' extent."""
    axis = _axis(x, axis)
    if weights.dim() != 1 or weights.shape[0] != x.shape[axis]:
        raise ShapeError(f"weight vector of length {tuple(weights.shape)} does not match axis extent {x.shape[axis]}")
    view = [1] * x.dim()
    view[axis] = -1
    out = (x * weights.view(view)).sum(dim=axis, keepdim=keepdim)
    return record("reduce_weighted", (x, weights), out)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError(f"matmul inner dims differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    return record("matmul", (a, b), torch.matmul(a, b))


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return record("add", (a, b), a + b)


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return record("mul", (a, b), a * b)


def softmax(x: torch.Tensor) -> torch.Tensor:
    return record("softmax", (x,), torch.softmax(x, dim=-1))


def layer_norm(
    x: torch.Tensor,
    scale: Optional[torch.Tensor] = None,
    shift: Optional[torch.Tensor] = None,
    eps: float = 1e-6,
) -> torch.Tensor:
    """Normalize the last axis, then apply an externally supplied scale and shift."""
    out = F.layer_norm(x, x.shape[-1:], eps=eps)
    if scale is not None:
        out = out * scale
    if shift is not None:
        out = out + shift
    return record("layer_norm", (x,) + tuple(t for t in (scale, shift) if t is not None), out)


def group_norm(
    x: torch.Tensor,
    groups: int,
    scale: Optional[torch.Tensor] = None,
    shift: Optional[torch.Tensor] = None,
    eps: float = 1e-6,
) -> torch.Tensor:
    """Group normalization of a channel-last ``(n, ..., c)`` tensor, stats per leading index."""
    if x.shape[-1] % groups:
        raise ShapeError(f"{x.shape[-1]} channels not divisible into {groups} groups")
    out = F.group_norm(x.movedim(-1, 1), groups, scale, shift, eps).movedim(1, -1)
    return record("group_norm", (x,) + tuple(t for t in (scale, shift) if t is not None), out)


def concat(tensors: Sequence[torch.Tensor], axis: int) -> torch.Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    axis = _axis(tensors[0], axis)
    return record("concat", tuple(tensors), torch.cat(list(tensors), dim=axis))


def slice_axis(x: torch.Tensor, axis: int, start: int, stop: int) -> torch.Tensor:
    axis = _axis(x, axis)
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] invalid for extent {x.shape[axis]}")
    return record("slice_axis", (x,), x.narrow(axis, start, stop - start))


def upsample_nearest(x: torch.Tensor, factors: Tuple[int, int, int]) -> torch.Tensor:
    """Repeat each frame/row/column of a channel-last volume by integer factors."""
    if x.dim() < 4:
        raise ShapeError(f"upsample_nearest needs (..., t, h, w, c), got shape {tuple(x.shape)}")
    out = x
    for axis, factor in zip((-4, -3, -2), factors):
        if factor < 1:
            raise ShapeError(f"upsample factor must be >= 1, got {factor}")
        if factor > 1:
            out = out.repeat_interleave(factor, dim=axis)
    return record("upsample_nearest", (x,), out)


def silu(x: torch.Tensor) -> torch.Tensor:
    return record("silu", (x,), F.silu(x))


def gelu(x: torch.Tensor) -> torch.Tensor:
    return record("gelu", (x,), F.gelu(x))


def relu(x: torch.Tensor) -> torch.Tensor:
    return record("relu", (x,), F.relu(x))


_ACTIVATIONS = {"silu": silu, "gelu": gelu, "relu": relu}


def activation(name: str) -> Callable[[torch.Tensor], torch.Tensor]:
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}") from None


def embedding(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    if ids.dtype not in (torch.int32, torch.int64):
        raise ShapeError(f"embedding ids must be integer, got {ids.dtype}")
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ShapeError(f"embedding id out of range [0, {table.shape[0]})")
    return record("embedding", (table,), F.embedding(ids, table))
