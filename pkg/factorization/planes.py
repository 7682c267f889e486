# File: factorization/planes.py

"""
Four-plane factorization of a latent volume and its recomposition.

A latent volume Z is channel-last ``(..., t, h, w, c)``. The planes are

* ``xt``  (t, h, c): Z reduced over width
* ``yt``  (t, w, c): Z reduced over height
* ``xy1`` (h, w, c): Z[0:t//2] reduced over time (the single frame when t == 1)
* ``xy2`` (h, w, c): Z[t//2:t] reduced over time, so the middle frame of an
  odd t belongs to the second segment

Leading batch dimensions are carried through unchanged.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, Optional, Tuple, Union

import torch
import torch.nn as nn

from errors import ShapeError
from substrate import ops

logger = logging.getLogger(__name__)

__all__ = [
    "PLANE_ORDER",
    "SpatialPlaneMode",
    "ReduceKind",
    "CombineKind",
    "LatentLayout",
    "PlaneSet",
    "TriPlaneSet",
    "AxisReducer",
    "segment_bounds",
    "factorize",
    "factorize_boundary",
    "boundary_planes",
    "recompose",
    "factorize_triplane",
    "recompose_triplane",
]

PLANE_ORDER: Tuple[str, ...] = ("xt", "yt", "xy1", "xy2")
TRIPLANE_ORDER: Tuple[str, ...] = ("xt", "yt", "xy")

T_AXIS, H_AXIS, W_AXIS = -4, -3, -2


class SpatialPlaneMode(str, Enum):
    SEGMENT_POOL = "segment"
    BOUNDARY_ENCODE = "boundary"


class ReduceKind(str, Enum):
    MEAN_POOL = "mp"
    LINEAR_PROJ = "lp"


class CombineKind(str, Enum):
    CONCAT = "concat"
    SUM = "sum"


@dataclass(frozen=True)
class LatentLayout:
    t: int
    h: int
    w: int
    c: int

    def __post_init__(self):
        if min(self.t, self.h, self.w, self.c) < 1:
            raise ShapeError(f"latent layout extents must be positive, got {self}")

    @classmethod
    def of(cls, z: torch.Tensor) -> "LatentLayout":
        if z.dim() < 4:
            raise ShapeError(f"latent volume must be (..., t, h, w, c), got shape {tuple(z.shape)}")
        t, h, w, c = z.shape[-4:]
        return cls(t, h, w, c)

    def plane_shape(self, name: str) -> Tuple[int, int]:
        if name == "xt":
            return self.t, self.h
        if name == "yt":
            return self.t, self.w
        if name in ("xy1", "xy2", "xy"):
            return self.h, self.w
        raise ShapeError(f"unknown plane {name!r}")

    def sequence_length(self, planes: Iterable[str] = PLANE_ORDER) -> int:
        return sum(r * c for r, c in (self.plane_shape(p) for p in planes))

    @property
    def volume_length(self) -> int:
        return self.t * self.h * self.w

    def to_dict(self) -> Dict[str, int]:
        return {"t": self.t, "h": self.h, "w": self.w, "c": self.c}


def segment_bounds(t: int) -> Tuple[Tuple[int, int], Tuple[int, int]]:
    """Frame ranges [start, stop) pooled into the first and second spatial plane."""
    if t < 1:
        raise ShapeError(f"t must be >= 1, got {t}")
    if t == 1:
        return (0, 1), (0, 1)
    return (0, t // 2), (t // 2, t)


@dataclass
class PlaneSet:
    xy1: torch.Tensor
    xy2: torch.Tensor
    xt: torch.Tensor
    yt: torch.Tensor
    layout: LatentLayout
    mode: SpatialPlaneMode = SpatialPlaneMode.SEGMENT_POOL
    reduce: ReduceKind = ReduceKind.MEAN_POOL

    def __post_init__(self):
        batch = None
        for name in PLANE_ORDER:
            plane = getattr(self, name)
            rows, cols = self.layout.plane_shape(name)
            if plane.dim() < 3 or tuple(plane.shape[-3:]) != (rows, cols, self.layout.c):
                raise ShapeError(f"plane {name} has shape {tuple(plane.shape)}, layout needs (..., {rows}, {cols}, {self.layout.c})")
            if batch is None:
                batch = plane.shape[:-3]
            elif plane.shape[:-3] != batch:
                raise ShapeError(f"plane {name} batch dims {tuple(plane.shape[:-3])} differ from {tuple(batch)}")

    @property
    def batch_shape(self) -> torch.Size:
        return self.xy1.shape[:-3]

    def get(self, name: str) -> torch.Tensor:
        if name not in PLANE_ORDER:
            raise ShapeError(f"unknown plane {name!r}")
        return getattr(self, name)

    def as_dict(self) -> Dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in PLANE_ORDER}


@dataclass
class TriPlaneSet:
    xy: torch.Tensor
    xt: torch.Tensor
    yt: torch.Tensor
    layout: LatentLayout
    reduce: ReduceKind = ReduceKind.MEAN_POOL

    def as_dict(self) -> Dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in TRIPLANE_ORDER}


class AxisReducer(nn.Module):
    """
    Axis reduction for each plane role: mean pooling, or a learned softmax
    weighting over the reduced axis. Zero logits give uniform weights, so a
    fresh LinearProj reducer matches MeanPool.
    """

    def __init__(self, kind: Union[ReduceKind, str] = ReduceKind.MEAN_POOL, layout: Optional[LatentLayout] = None):
        super().__init__()
        self.kind = ReduceKind(kind)
        self.layout = layout
        self.logits = nn.ParameterDict()
        if self.kind is ReduceKind.LINEAR_PROJ:
            if layout is None:
                raise ShapeError("LinearProj reduction needs the latent layout to size its weights")
            (a0, a1), (b0, b1) = segment_bounds(layout.t)
            extents = {"w": layout.w, "h": layout.h, "xy1": a1 - a0, "xy2": b1 - b0, "xy": layout.t}
            for role, n in extents.items():
                self.logits[role] = nn.Parameter(torch.zeros(n))

    def weights(self, role: str) -> torch.Tensor:
        if self.kind is ReduceKind.MEAN_POOL:
            raise ValueError("MeanPool has no learned weights")
        return ops.softmax(self.logits[role])

    def forward(self, z: torch.Tensor, axis: int, role: str) -> torch.Tensor:
        if self.kind is ReduceKind.MEAN_POOL:
            return ops.reduce_mean(z, axis)
        if z.shape[axis] == 1 and self.logits[role].numel() != 1:
            # single-frame latents: any normalized weighting is the identity
            return ops.reduce_mean(z, axis)
        return ops.reduce_weighted(z, self.weights(role).to(z.dtype), axis)


_MEAN_POOL = AxisReducer()


def _reducer(reducer: Optional[AxisReducer]) -> AxisReducer:
    return _MEAN_POOL if reducer is None else reducer


def factorize(
    z: torch.Tensor,
    reducer: Optional[AxisReducer] = None,
    mode: Union[SpatialPlaneMode, str] = SpatialPlaneMode.SEGMENT_POOL,
) -> PlaneSet:
    """Project a latent volume onto its four planes."""
    mode = SpatialPlaneMode(mode)
    if mode is SpatialPlaneMode.BOUNDARY_ENCODE:
        raise ValueError("boundary spatial planes need the boundary frames; use factorize_boundary")
    layout = LatentLayout.of(z)
    reduce = _reducer(reducer)
    (a0, a1), (b0, b1) = segment_bounds(layout.t)
    return PlaneSet(
        xy1=reduce(ops.slice_axis(z, T_AXIS, a0, a1), T_AXIS, "xy1"),
        xy2=reduce(ops.slice_axis(z, T_AXIS, b0, b1), T_AXIS, "xy2"),
        xt=reduce(z, W_AXIS, "w"),
        yt=reduce(z, H_AXIS, "h"),
        layout=layout,
        mode=mode,
        reduce=reduce.kind,
    )


def factorize_boundary(
    z: torch.Tensor,
    first: torch.Tensor,
    last: torch.Tensor,
    reducer: Optional[AxisReducer] = None,
) -> PlaneSet:
    """Spatio-temporal planes from Z, spatial planes from separately encoded boundary frames."""
    layout = LatentLayout.of(z)
    reduce = _reducer(reducer)
    return PlaneSet(
        xy1=first,
        xy2=last,
        xt=reduce(z, W_AXIS, "w"),
        yt=reduce(z, H_AXIS, "h"),
        layout=layout,
        mode=SpatialPlaneMode.BOUNDARY_ENCODE,
        reduce=reduce.kind,
    )


def _single_frame(frame: torch.Tensor) -> torch.Tensor:
    # (H, W, 3) -> (1, H, W, 3); (..., 1, H, W, 3) passes through
    if frame.dim() == 3:
        return frame.unsqueeze(0)
    if frame.dim() >= 4 and frame.shape[-4] == 1:
        return frame
    raise ShapeError(f"expected a single frame (H, W, 3) or (..., 1, H, W, 3), got shape {tuple(frame.shape)}")


def boundary_planes(
    x0: torch.Tensor,
    xT: torch.Tensor,
    encoder: Callable[[torch.Tensor], torch.Tensor],
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Encode the first and last frame as one-frame clips and squeeze time away."""
    planes = []
    for frame in (x0, xT):
        latent = encoder(_single_frame(frame))
        if latent.dim() < 4 or latent.shape[T_AXIS] != 1:
            raise ShapeError(f"encoder returned shape {tuple(latent.shape)} for a single frame")
        planes.append(latent.squeeze(T_AXIS))
    return planes[0], planes[1]


def _expand(planes: Dict[str, torch.Tensor], layout: LatentLayout) -> Dict[str, torch.Tensor]:
    t, h, w = layout.t, layout.h, layout.w
    out = {}
    for name, plane in planes.items():
        batch = plane.shape[:-3]
        if name.startswith("xy"):
            out[name] = plane.unsqueeze(T_AXIS).expand(*batch, t, h, w, layout.c)
        elif name == "xt":
            out[name] = plane.unsqueeze(W_AXIS).expand(*batch, t, h, w, layout.c)
        else:
            out[name] = plane.unsqueeze(H_AXIS).expand(*batch, t, h, w, layout.c)
    return out


def _combine(parts, combine: CombineKind) -> torch.Tensor:
    if combine is CombineKind.CONCAT:
        return ops.concat(parts, -1)
    out = parts[0]
    for part in parts[1:]:
        out = ops.add(out, part)
    return out


def recompose(planes: PlaneSet, combine: Union[CombineKind, str] = CombineKind.CONCAT) -> torch.Tensor:
    """
    Query every plane at each (tau, y, x) and combine.

    Concat yields channels in the order (xy1, xy2, xt, yt), 4c in total;
    Sum yields c channels.
    """
    combine = CombineKind(combine)
    expanded = _expand(planes.as_dict(), planes.layout)
    return _combine([expanded[n] for n in ("xy1", "xy2", "xt", "yt")], combine)


def factorize_triplane(z: torch.Tensor, reducer: Optional[AxisReducer] = None) -> TriPlaneSet:
    layout = LatentLayout.of(z)
    reduce = _reducer(reducer)
    return TriPlaneSet(
        xy=reduce(z, T_AXIS, "xy"),
        xt=reduce(z, W_AXIS, "w"),
        yt=reduce(z, H_AXIS, "h"),
        layout=layout,
        reduce=reduce.kind,
    )


def recompose_triplane(planes: TriPlaneSet, combine: Union[CombineKind, str] = CombineKind.CONCAT) -> torch.Tensor:
    """Channel order (xy, xt, yt); 3c channels for Concat, c for Sum."""
    combine = CombineKind(combine)
    expanded = _expand(planes.as_dict(), planes.layout)
    return _combine([expanded[n] for n in ("xy", "xt", "yt")], combine)
