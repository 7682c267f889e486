"""Task pipelines: class-conditional generation, prediction, interpolation, images."""

from pipelines.tasks import (
    FourPlanePipeline,
    TaskSpec,
    context_frame_count,
    image_planes,
    image_tokens,
    load_codec,
    load_denoiser,
    load_planes,
    planes_combine,
    save_planes,
    task_partition,
    video_planes,
    video_tokens,
)

__all__ = [
    "FourPlanePipeline",
    "TaskSpec",
    "context_frame_count",
    "image_planes",
    "image_tokens",
    "load_codec",
    "load_denoiser",
    "load_planes",
    "planes_combine",
    "save_planes",
    "task_partition",
    "video_planes",
    "video_tokens",
]
