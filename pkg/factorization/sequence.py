# File: factorization/sequence.py

"""
Flattening planes into token sequences and back.

Canonical order is xt (row-major over (tau, y)), yt over (tau, x), xy1 and
xy2 over (y, x). Partial sequences keep that relative order, so a task's
conditioning and target sequences are both sub-sequences of the full one.
"""

from typing import Dict, Iterable, Mapping, Sequence, Tuple, Union

import torch

from errors import ShapeError
from factorization.planes import (
    PLANE_ORDER,
    TRIPLANE_ORDER,
    LatentLayout,
    PlaneSet,
    ReduceKind,
    SpatialPlaneMode,
    TriPlaneSet,
)
from substrate import ops

__all__ = [
    "IMAGE_PLANES",
    "canonical_planes",
    "flatten_planes",
    "flatten_sequence",
    "split_sequence",
    "unflatten_sequence",
    "merge_planes",
    "flatten_image",
    "unflatten_image",
    "flatten_triplane",
    "flatten_volume",
    "unflatten_volume",
    "TASK_PARTITIONS",
    "task_partition",
]

IMAGE_PLANES: Tuple[str, ...] = ("xt", "yt", "xy1")


def canonical_planes(include: Iterable[str]) -> Tuple[str, ...]:
    include = tuple(include)
    unknown = [p for p in include if p not in PLANE_ORDER]
    if unknown:
        raise ShapeError(f"unknown planes {unknown}")
    return tuple(p for p in PLANE_ORDER if p in include)


def flatten_planes(planes: Mapping[str, torch.Tensor], order: Sequence[str]) -> torch.Tensor:
    """Concatenate (..., rows, cols, c) planes into (..., sum(rows*cols), c) in the given order."""
    pieces = []
    for name in order:
        plane = planes[name]
        pieces.append(plane.reshape(*plane.shape[:-3], plane.shape[-3] * plane.shape[-2], plane.shape[-1]))
    return ops.concat(pieces, -2)


def flatten_sequence(planes: PlaneSet, include: Iterable[str] = PLANE_ORDER) -> torch.Tensor:
    return flatten_planes(planes.as_dict(), canonical_planes(include))


def split_sequence(
    tokens: torch.Tensor,
    layout: LatentLayout,
    include: Iterable[str] = PLANE_ORDER,
) -> Dict[str, torch.Tensor]:
    """Inverse of ``flatten_sequence`` for any canonical subset of planes."""
    order = canonical_planes(include)
    expected = layout.sequence_length(order)
    if tokens.dim() < 2 or tokens.shape[-2] != expected or tokens.shape[-1] != layout.c:
        raise ShapeError(f"token tensor {tuple(tokens.shape)} does not match layout {layout} for planes {order} (length {expected})")
    out: Dict[str, torch.Tensor] = {}
    offset = 0
    batch = tokens.shape[:-2]
    for name in order:
        rows, cols = layout.plane_shape(name)
        out[name] = tokens.narrow(-2, offset, rows * cols).reshape(*batch, rows, cols, layout.c)
        offset += rows * cols
    return out


def merge_planes(
    layout: LatentLayout,
    parts: Mapping[str, torch.Tensor],
    mode: Union[SpatialPlaneMode, str] = SpatialPlaneMode.SEGMENT_POOL,
    reduce: Union[ReduceKind, str] = ReduceKind.MEAN_POOL,
) -> PlaneSet:
    missing = [p for p in PLANE_ORDER if p not in parts]
    if missing:
        raise ShapeError(f"cannot assemble a PlaneSet without planes {missing}")
    return PlaneSet(layout=layout, mode=SpatialPlaneMode(mode), reduce=ReduceKind(reduce), **{p: parts[p] for p in PLANE_ORDER})


def unflatten_sequence(
    tokens: torch.Tensor,
    layout: LatentLayout,
    mode: Union[SpatialPlaneMode, str] = SpatialPlaneMode.SEGMENT_POOL,
    reduce: Union[ReduceKind, str] = ReduceKind.MEAN_POOL,
) -> PlaneSet:
    return merge_planes(layout, split_sequence(tokens, layout), mode, reduce)


def flatten_image(planes: PlaneSet) -> torch.Tensor:
    """Single-frame tokens: the two length-h/w vectors and one spatial plane."""
    if planes.layout.t != 1:
        raise ShapeError(f"image tokens need t == 1, got t={planes.layout.t}")
    return flatten_sequence(planes, IMAGE_PLANES)


def unflatten_image(tokens: torch.Tensor, layout: LatentLayout) -> PlaneSet:
    if layout.t != 1:
        raise ShapeError(f"image tokens need t == 1, got t={layout.t}")
    parts = split_sequence(tokens, layout, IMAGE_PLANES)
    parts["xy2"] = parts["xy1"]
    return merge_planes(layout, parts)


def flatten_triplane(planes: TriPlaneSet) -> torch.Tensor:
    return flatten_planes(planes.as_dict(), TRIPLANE_ORDER)


def flatten_volume(z: torch.Tensor) -> torch.Tensor:
    """Volumetric tokens: (..., t, h, w, c) -> (..., t*h*w, c), row-major."""
    layout = LatentLayout.of(z)
    return z.reshape(*z.shape[:-4], layout.volume_length, layout.c)


def unflatten_volume(tokens: torch.Tensor, layout: LatentLayout) -> torch.Tensor:
    if tokens.shape[-2:] != (layout.volume_length, layout.c):
        raise ShapeError(f"token tensor {tuple(tokens.shape)} does not match volume layout {layout}")
    return tokens.reshape(*tokens.shape[:-2], layout.t, layout.h, layout.w, layout.c)


TASK_PARTITIONS: Dict[str, Tuple[Tuple[str, ...], Tuple[str, ...]]] = {
    "class": ((), PLANE_ORDER),
    "predict": (("xy1",), ("xt", "yt", "xy2")),
    "interp": (("xy1", "xy2"), ("xt", "yt")),
    "image": ((), IMAGE_PLANES),
}


def task_partition(task: str) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """(conditioning planes, target planes) for a task, each in canonical order."""
    try:
        return TASK_PARTITIONS[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASK_PARTITIONS)}") from None
