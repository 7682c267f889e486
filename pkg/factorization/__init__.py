"""Four-plane factorization, recomposition and token sequences."""

from factorization.planes import (
    PLANE_ORDER,
    AxisReducer,
    CombineKind,
    LatentLayout,
    PlaneSet,
    ReduceKind,
    SpatialPlaneMode,
    TriPlaneSet,
    boundary_planes,
    factorize,
    factorize_boundary,
    factorize_triplane,
    recompose,
    recompose_triplane,
    segment_bounds,
)
from factorization.sequence import (
    IMAGE_PLANES,
    flatten_image,
    flatten_sequence,
    flatten_triplane,
    flatten_volume,
    merge_planes,
    split_sequence,
    unflatten_image,
    unflatten_sequence,
    unflatten_volume,
    task_partition,
    TASK_PARTITIONS,
)

__all__ = [
    "PLANE_ORDER",
    "IMAGE_PLANES",
    "AxisReducer",
    "CombineKind",
    "LatentLayout",
    "PlaneSet",
    "ReduceKind",
    "SpatialPlaneMode",
    "TriPlaneSet",
    "boundary_planes",
    "factorize",
    "factorize_boundary",
    "factorize_triplane",
    "recompose",
    "recompose_triplane",
    "segment_bounds",
    "flatten_image",
    "flatten_sequence",
    "flatten_triplane",
    "flatten_volume",
    "merge_planes",
    "split_sequence",
    "unflatten_image",
    "unflatten_sequence",
    "unflatten_volume",
    "task_partition",
    "TASK_PARTITIONS",
]
