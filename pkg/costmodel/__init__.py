"""Analytic sequence-length, FLOPs and memory model plus a wall-clock benchmark."""

from costmodel.analytic import (
    CostReport,
    LatentShape,
    RepresentationKind,
    activation_memory,
    cost_report,
    est_max_batch,
    flops_per_step,
    measure_flops,
    parameter_count,
    reference_surrogate,
    reports_to_frame,
    seq_len,
)
from costmodel.bench import bench, bench_codec, plot_bench, time_step

__all__ = [
    "CostReport",
    "LatentShape",
    "RepresentationKind",
    "activation_memory",
    "cost_report",
    "est_max_batch",
    "flops_per_step",
    "measure_flops",
    "parameter_count",
    "reference_surrogate",
    "reports_to_frame",
    "seq_len",
    "bench",
    "bench_codec",
    "plot_bench",
    "time_step",
]
