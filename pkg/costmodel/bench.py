# File: costmodel/bench.py

import logging
import statistics
import time
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import torch  # noqa: E402

from codec.autoencoder import build_codec  # noqa: E402
from config import CodecConfig, DenoiserConfig  # noqa: E402
from costmodel.analytic import LatentShape, RepresentationKind, seq_len  # noqa: E402
from errors import ShapeError  # noqa: E402
from factorization.planes import PLANE_ORDER, LatentLayout  # noqa: E402
from networks import build_denoiser  # noqa: E402

logger = logging.getLogger(__name__)

__all__ = ["time_step", "bench", "bench_codec", "plot_bench"]

BENCH_KINDS = (RepresentationKind.FOUR_PLANE, RepresentationKind.VOLUMETRIC)


def time_step(step: Callable[[], None], repeats: int, warmup: int = 1) -> float:
    """Median wall time of ``step`` in milliseconds, warmup calls excluded."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for _ in range(warmup):
        step()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        step()
        times.append((time.perf_counter() - start) * 1000.0)
    return statistics.median(times)


def _denoiser_step(model, layout: LatentLayout, kind: RepresentationKind, batch: int, seed: int) -> Callable[[], None]:
    planes = ("volume",) if kind is RepresentationKind.VOLUMETRIC else PLANE_ORDER
    length = seq_len(LatentShape(layout.t, layout.h, layout.w, layout.c), kind)
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(batch, length, layout.c, generator=gen)
    t = torch.randint(1, 1000, (batch,), generator=gen)

    def step() -> None:
        model.zero_grad(set_to_none=True)
        out = model(z, t, layout=layout, planes=planes)
        out.pow(2).mean().backward()

    return step


def bench(
    config: DenoiserConfig,
    shapes: Sequence[LatentShape],
    repeats: int = 5,
    warmup: int = 1,
    batch: int = 1,
    seed: int = 0,
) -> pd.DataFrame:
    """Median training-step time of one denoiser on four-plane and volumetric token counts per shape."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    threads = torch.get_num_threads()
    model = build_denoiser(config, seed=seed)
    model.train()
    rows: List[Dict[str, object]] = []
    for shape in shapes:
        if shape.c != config.token_dim:
            raise ShapeError(f"shape {shape} has {shape.c} channels, denoiser tokens have {config.token_dim}")
        layout = LatentLayout(shape.t, shape.h, shape.w, shape.c)
        for kind in BENCH_KINDS:
            ms = time_step(_denoiser_step(model, layout, kind, batch, seed), repeats, warmup)
            rows.append(
                {
                    "shape": str(shape),
                    "kind": kind.value,
                    "seq_len": seq_len(shape, kind),
                    "batch": batch,
                    "median_ms": ms,
                    "repeats": repeats,
                    "threads": threads,
                }
            )
            logger.info(f"bench {shape} {kind.value}: {ms:.2f} ms/step")
    return pd.DataFrame(rows)


def bench_codec(
    config: CodecConfig,
    kinds: Sequence[str] = ("fourplane", "volumetric"),
    repeats: int = 3,
    warmup: int = 1,
    batch: int = 1,
    seed: int = 0,
) -> pd.DataFrame:
    """Median reconstruction training-step time of the codec for each latent kind."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    gen = torch.Generator().manual_seed(seed)
    clips = torch.rand(batch, config.clip_frames, config.clip_height, config.clip_width, 3, generator=gen) * 2 - 1
    rows: List[Dict[str, object]] = []
    for kind in kinds:
        codec = build_codec(config.replace(latent_kind=kind), seed=seed)

        def step(codec=codec) -> None:
            codec.zero_grad(set_to_none=True)
            recon, _ = codec(clips)
            (recon - clips).pow(2).mean().backward()

        ms = time_step(step, repeats, warmup)
        rows.append({"kind": kind, "parameters": codec.parameter_count(), "median_ms": ms, "repeats": repeats, "threads": torch.get_num_threads()})
    return pd.DataFrame(rows)


def plot_bench(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Grouped bar chart of median ms per shape and representation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = frame.pivot(index="shape", columns="kind", values="median_ms")
    plt.rcParams["svg.hashsalt"] = "fourplane"
    fig, ax = plt.subplots(figsize=(6, 4))
    table.plot.bar(ax=ax, rot=0)
    ax.set_ylabel("ms / training step")
    ax.set_xlabel("latent shape")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path
