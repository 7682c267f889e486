# File: cli.py

"""
Command-line interface.

Configuration precedence, lowest first: dataclass defaults, the JSON file
given with ``--config``, ``FOURPLANE_SEED``/``FOURPLANE_THREADS`` from the
environment (a ``.env`` file is loaded, exported variables win), explicit
flags. Exit codes: 0 success, 2 usage or configuration error, 3 data or
shape error, 4 numeric failure.
"""

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import imageio  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import torch  # noqa: E402
from dotenv import load_dotenv  # noqa: E402

from codec.volumes import VideoClip  # noqa: E402
from config import (  # noqa: E402
    TASKS,
    CodecConfig,
    DenoiserConfig,
    DiffusionConfig,
    RunConfig,
    SyntheticSpec,
    env_overrides,
)
from costmodel import (  # noqa: E402
    LatentShape,
    RepresentationKind,
    bench,
    cost_report,
    plot_bench,
    reference_surrogate,
    reports_to_frame,
    seq_len,
)
from data_provider import ClipDataProvider  # noqa: E402
from diffusion.schedule import build_schedule, dump_schedule  # noqa: E402
from errors import ConfigError, DataError, FourPlaneError, NumericError, ShapeError  # noqa: E402
from evaldata.synthetic import DatasetManifest, generate_synthetic, verify_manifest  # noqa: E402
from pipelines.tasks import (  # noqa: E402
    FourPlanePipeline,
    image_tokens,
    load_codec,
    load_planes,
    planes_combine,
    save_planes,
    video_planes,
)
from runtime import configure_logging, require_dir, run_lock, seed_everything  # noqa: E402
from substrate.fpt import load_fpt, save_fpt  # noqa: E402
from trainer import CodecTrainer, DiffusionTrainer, evaluate_reconstruction  # noqa: E402

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

RUN_CONFIG = "run_config.json"
# diffusion runs may share the codec's run dir
DIFFUSION_RUN_CONFIG = "diffusion_run_config.json"
CODEC_CONFIG = "codec_config.json"
DENOISER_CONFIG = "denoiser_config.json"
DIFFUSION_CONFIG = "diffusion_config.json"
METRICS = "metrics.json"
REPORT = "report.md"
SAMPLES = "samples"

# small-latent codec used when no codec config file is given
DESK_CODEC = {"temporal_down_layers": 1, "spatial_down_layers": 2}
DEFAULT_BUDGET = 16 * 2 ** 30


# ============================
# Parser
# ============================

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="overrides FOURPLANE_SEED and the config file")
    p.add_argument("--threads", type=int, default=None, help="torch intra-op threads (FOURPLANE_THREADS)")
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (FOURPLANE_LOG_LEVEL)")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run-dir", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--config", default=None, help="RunConfig JSON")
    p.add_argument("--steps", type=int, default=None, help="total optimizer steps")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--warmup-steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--log-interval", type=int, default=None)
    p.add_argument("--checkpoint-interval", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in the run dir")
    p.add_argument("--tensorboard", action="store_true", default=None)


def _sampling(p: argparse.ArgumentParser) -> None:
    p.add_argument("--codec", required=True, help="codec checkpoint")
    p.add_argument("--diffusion", required=True, help="diffusion checkpoint")
    p.add_argument("--steps", "--sample-steps", dest="sample_steps", type=int, default=None, help="DDIM steps (default 50)")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--out", required=True, help="output clip (.fpt)")
    p.add_argument("--png-dir", default=None, help="also dump frames as PNG")
    p.add_argument("--gif", default=None, help="also write an animated preview")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fourplane", description="Four-plane factorized video latents")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="synthetic sprite datasets")
    dsub = p.add_subparsers(dest="action", required=True)
    q = dsub.add_parser("make")
    _common(q)
    q.add_argument("--out", required=True)
    q.add_argument("--config", default=None, help="SyntheticSpec JSON")
    q.add_argument("--clips", type=int, default=None)
    q.add_argument("--frames", type=int, default=None)
    q.add_argument("--height", type=int, default=None)
    q.add_argument("--width", type=int, default=None)
    q.add_argument("--jobs", type=int, default=1)
    q = dsub.add_parser("verify")
    _common(q)
    q.add_argument("--manifest", required=True)

    p = sub.add_parser("train-codec", help="train the video autoencoder")
    _common(p)
    _training(p)
    p.add_argument("--codec-config", default=None)
    p.add_argument("--latent-kind", choices=("fourplane", "volumetric", "triplane"), default=None)
    p.add_argument("--combine", choices=("concat", "sum"), default=None)
    p.add_argument("--reduce", choices=("mp", "lp"), default=None)
    p.add_argument("--spatial-mode", choices=("segment", "boundary"), default=None)

    p = sub.add_parser("train-diffusion", help="train the plane denoiser on a frozen codec")
    _common(p)
    _training(p)
    p.add_argument("--codec", default=None, help="codec checkpoint (default: the run dir's latest)")
    p.add_argument("--denoiser-config", default=None)
    p.add_argument("--diffusion-config", default=None)
    p.add_argument("--task", choices=TASKS, default=None)
    p.add_argument("--self-cond", type=float, default=None, help="self-conditioning rate (default 0.9)")
    p.add_argument("--beta-end", type=float, default=None)
    p.add_argument("--joint-image-rate", type=float, default=None)

    p = sub.add_parser("encode", help="clip -> planes (or latent volume)")
    _common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("segment", "boundary"), default=None, help="spatial planes (default: the codec's)")
    p.add_argument("--reduce", choices=("mp", "lp"), default=None, help="axis reduction (default: the codec's)")
    p.add_argument("--combine", choices=("concat", "sum"), default=None, help="recorded for decode (default: the codec's)")

    p = sub.add_parser("decode", help="planes (or latent volume) -> clip")
    _common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--planes", default=None)
    p.add_argument("--latent", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--png-dir", default=None)

    p = sub.add_parser("generate", help="class-conditional video")
    _common(p)
    _sampling(p)
    p.add_argument("--label", type=int, default=None)

    p = sub.add_parser("predict", help="future frames from a context clip")
    _common(p)
    _sampling(p)
    p.add_argument("--context", required=True, help="clip whose leading frames are the context")

    p = sub.add_parser("interpolate", help="in-between frames from two boundary frames")
    _common(p)
    _sampling(p)
    p.add_argument("--first", default=None)
    p.add_argument("--last", default=None)
    p.add_argument("--clip", default=None, help="take the boundary frames from this clip")

    p = sub.add_parser("image-tokens", help="single-frame token sequence")
    _common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("sample", help="a batch of samples into a run's samples directory")
    _common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--diffusion", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--task", choices=("class", "predict", "interp", "image"), default="class")
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--label", type=int, default=None)
    p.add_argument("--context", default=None, help="predict: clip whose leading frames are the context")
    p.add_argument("--first", default=None, help="interp: first boundary frame")
    p.add_argument("--last", default=None, help="interp: last boundary frame")
    p.add_argument("--clip", default=None, help="interp: take the boundary frames from this clip")
    p.add_argument("--steps", "--sample-steps", dest="sample_steps", type=int, default=None, help="DDIM steps (default 50)")
    p.add_argument("--eta", type=float, default=None)

    p = sub.add_parser("eval", help="reconstruction metrics of a codec")
    _common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--metric", default="psnr,ssim")
    p.add_argument("--run-dir", default=None, help="write metrics.json here")
    p.add_argument("--out", default=None)

    p = sub.add_parser("cost", help="analytic cost report")
    _common(p)
    p.add_argument("--shape", required=True, help="t,h,w[,c]")
    p.add_argument("--config", default=None, help="DenoiserConfig JSON (default: the reference surrogate)")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="memory budget in bytes")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("bench", help="wall-clock training-step benchmark")
    _common(p)
    p.add_argument("--config", default=None, help="DenoiserConfig JSON")
    p.add_argument("--shape", action="append", default=None, help="t,h,w[,c]; repeatable")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--svg", default=None)

    p = sub.add_parser("report", help="summarize a run directory")
    _common(p)
    p.add_argument("--run-dir", required=True)

    p = sub.add_parser("schedule", help="dump a noise schedule as CSV")
    _common(p)
    p.add_argument("--diffusion-config", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--beta-start", type=float, default=None)
    p.add_argument("--beta-end", type=float, default=None)
    p.add_argument("--no-zero-terminal", action="store_true")
    p.add_argument("--out", required=True)
    return parser


# ============================
# Configuration helpers
# ============================

def _seed_and_threads(args: argparse.Namespace, base: Optional[Dict[str, Any]] = None) -> Dict[str, int]:
    values = {"seed": 0, "threads": 1}
    values.update({k: v for k, v in (base or {}).items() if k in values})
    values.update(env_overrides())
    for key in values:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def resolve_run_config(args: argparse.Namespace, **fields: Any) -> RunConfig:
    data = RunConfig.load(args.config).to_dict() if getattr(args, "config", None) else RunConfig().to_dict()
    data.update(_seed_and_threads(args, data))
    for key in ("manifest", "task", "log_interval", "checkpoint_interval", "joint_image_rate", "tensorboard"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    optimizer = dict(data["optimizer"])
    for flag, key in (("lr", "lr"), ("warmup_steps", "warmup_steps"), ("batch_size", "batch_size"), ("steps", "total_steps")):
        value = getattr(args, flag, None)
        if value is not None:
            optimizer[key] = value
    data["optimizer"] = optimizer
    data["output_dir"] = str(args.run_dir)
    data.update(fields)
    return RunConfig.from_dict(data)


def _apply_runtime(seed: int, threads: int) -> None:
    seed_everything(seed, threads)
    logger.info(f"seed={seed} threads={threads}")


def _to_uint8(frames: torch.Tensor) -> np.ndarray:
    return ((frames.detach().clamp(-1, 1).numpy() + 1.0) * 127.5).round().astype(np.uint8)


def write_frames(clip: torch.Tensor, png_dir: Optional[str] = None, gif: Optional[str] = None, fps: float = 8.0) -> None:
    """PNG per frame and/or an animated GIF for a (T, H, W, 3) clip."""
    frames = _to_uint8(clip)
    if png_dir is not None:
        out = Path(png_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(frames):
            imageio.imwrite(out / f"frame_{i:03d}.png", frame)
    if gif is not None:
        Path(gif).parent.mkdir(parents=True, exist_ok=True)
        imageio.mimsave(gif, list(frames), duration=1000.0 / fps, loop=0)


def _single(values: torch.Tensor) -> torch.Tensor:
    return values.squeeze(0) if values.dim() == 5 and values.shape[0] == 1 else values


def _write_clip(clip: VideoClip, args: argparse.Namespace) -> None:
    values = _single(clip.values)
    save_fpt(args.out, values)
    if getattr(args, "png_dir", None) or getattr(args, "gif", None):
        write_frames(values if values.dim() == 4 else values[0], getattr(args, "png_dir", None), getattr(args, "gif", None))
    logger.info(f"Wrote clip {tuple(values.shape)} to {args.out}")


def _write_configs(run_dir: Path, run: RunConfig, run_name: str = RUN_CONFIG, **configs: Any) -> None:
    for name, config in configs.items():
        config.save(run_dir / name)
    run.save(run_dir / run_name)


# ============================
# Commands
# ============================

def cmd_dataset(args: argparse.Namespace) -> int:
    if args.action == "verify":
        manifest = verify_manifest(args.manifest)
        print(f"ok: {len(manifest.clips)} clips, dims {manifest.dims}")
        return EXIT_OK
    spec = SyntheticSpec.load(args.config) if args.config else SyntheticSpec()
    changes = {k: v for k, v in (("clip_count", args.clips), ("frames", args.frames), ("height", args.height), ("width", args.width)) if v is not None}
    seed = _seed_and_threads(args, {"seed": spec.seed})["seed"]
    spec = spec.replace(seed=seed, **changes)
    manifest = generate_synthetic(spec, args.out, n_jobs=args.jobs)
    print(f"wrote {len(manifest.clips)} clips to {args.out}")
    return EXIT_OK


def _codec_config(args: argparse.Namespace, manifest: DatasetManifest) -> CodecConfig:
    if args.codec_config:
        config = CodecConfig.load(args.codec_config)
    else:
        frames, height, width, _ = manifest.dims
        config = CodecConfig(clip_frames=frames, clip_height=height, clip_width=width, **DESK_CODEC)
    changes = {
        k: v
        for k, v in (("latent_kind", args.latent_kind), ("combine", args.combine), ("reduce", args.reduce), ("spatial_mode", args.spatial_mode))
        if v is not None
    }
    return config.replace(**changes) if changes else config


def cmd_train_codec(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    run = resolve_run_config(args, codec_config=CODEC_CONFIG)
    if run.manifest is None:
        raise ConfigError("train-codec needs --manifest")
    manifest = DatasetManifest.read(run.manifest)
    config = _codec_config(args, manifest)
    _apply_runtime(run.seed, run.threads)
    with run_lock(run_dir):
        _write_configs(run_dir, run, **{CODEC_CONFIG: config})
        provider = ClipDataProvider(manifest, run.optimizer.batch_size, split="train", seed=run.seed)
        trainer = CodecTrainer(config, run, run_dir, provider)
        latest = trainer.checkpoint_path()
        if args.resume and latest.exists():
            trainer.load_checkpoint(latest)
        try:
            trainer.train()
        finally:
            trainer.close()
    return EXIT_OK


def cmd_train_diffusion(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    run = resolve_run_config(args, denoiser_config=DENOISER_CONFIG, diffusion_config=DIFFUSION_CONFIG)
    if run.manifest is None:
        raise ConfigError("train-diffusion needs --manifest")
    codec_path = Path(args.codec) if args.codec else run_dir / "checkpoints" / "codec_latest.ckpt"
    if not codec_path.exists():
        raise DataError(f"codec checkpoint not found: {codec_path}")
    denoiser = DenoiserConfig.load(args.denoiser_config) if args.denoiser_config else DenoiserConfig()
    diffusion = DiffusionConfig.load(args.diffusion_config) if args.diffusion_config else DiffusionConfig()
    changes = {k: v for k, v in (("self_cond_rate", args.self_cond), ("beta_end", args.beta_end)) if v is not None}
    diffusion = diffusion.replace(**changes) if changes else diffusion
    _apply_runtime(run.seed, run.threads)
    with run_lock(run_dir):
        _write_configs(run_dir, run, DIFFUSION_RUN_CONFIG, **{DENOISER_CONFIG: denoiser, DIFFUSION_CONFIG: diffusion})
        trainer = DiffusionTrainer(codec_path, denoiser, diffusion, run, run_dir)
        latest = trainer.checkpoint_path()
        if args.resume and latest.exists():
            trainer.load_checkpoint(latest)
        try:
            trainer.train()
        finally:
            trainer.close()
    return EXIT_OK


@torch.no_grad()
def cmd_encode(args: argparse.Namespace) -> int:
    _apply_runtime(**_seed_and_threads(args))
    codec = load_codec(args.codec)
    clip = load_fpt(args.clip)
    if codec.config.latent_kind == "fourplane":
        planes = video_planes(codec, clip, mode=args.mode, reduce=args.reduce)
        save_planes(args.out, planes, combine=args.combine or codec.config.combine)
        print(f"planes {planes.layout.to_dict()} ({planes.mode.value}, {planes.reduce.value}) -> {args.out}")
    elif args.mode or args.reduce or args.combine:
        raise ConfigError(f"--mode/--reduce/--combine need a fourplane codec, got {codec.config.latent_kind}")
    else:
        z = codec.encode(clip).values
        save_fpt(args.out, z)
        print(f"latent {tuple(z.shape)} -> {args.out}")
    return EXIT_OK


@torch.no_grad()
def cmd_decode(args: argparse.Namespace) -> int:
    _apply_runtime(**_seed_and_threads(args))
    codec = load_codec(args.codec)
    if (args.planes is None) == (args.latent is None):
        raise ConfigError("decode needs exactly one of --planes or --latent")
    if args.planes is not None:
        clip = codec.decode_planes(load_planes(args.planes), planes_combine(args.planes))
    else:
        clip = codec.decode(codec.feature_volume(load_fpt(args.latent)))
    _write_clip(clip, args)
    return EXIT_OK


def _pipeline(args: argparse.Namespace) -> FourPlanePipeline:
    return FourPlanePipeline.from_checkpoints(args.codec, args.diffusion, sample_steps=args.sample_steps, eta=args.eta)


def cmd_generate(args: argparse.Namespace) -> int:
    seed = _seed_and_threads(args)
    _apply_runtime(**seed)
    clip = _pipeline(args).generate_class_conditional(args.label, seed["seed"])
    _write_clip(clip, args)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    seed = _seed_and_threads(args)
    _apply_runtime(**seed)
    pipeline = _pipeline(args)
    plane = pipeline.context_plane(load_fpt(args.context))
    _write_clip(pipeline.predict_future(plane, seed["seed"]), args)
    return EXIT_OK


def _boundary_frames(args: argparse.Namespace) -> Tuple[torch.Tensor, torch.Tensor]:
    if args.clip is not None:
        clip = load_fpt(args.clip)
        return clip[0], clip[-1]
    if args.first is not None and args.last is not None:
        return load_fpt(args.first), load_fpt(args.last)
    raise ConfigError("interpolation needs --clip or both --first and --last")


def cmd_interpolate(args: argparse.Namespace) -> int:
    seed = _seed_and_threads(args)
    _apply_runtime(**seed)
    first, last = _boundary_frames(args)
    _write_clip(_pipeline(args).interpolate(first, last, seed["seed"]), args)
    return EXIT_OK


def cmd_image_tokens(args: argparse.Namespace) -> int:
    _apply_runtime(**_seed_and_threads(args))
    codec = load_codec(args.codec)
    tokens = image_tokens(codec, load_fpt(args.image))
    if args.out:
        save_fpt(args.out, tokens[0] if tokens.shape[0] == 1 else tokens)
    print(f"tokens: {tokens.shape[-2]}")
    return EXIT_OK


def _sampler(pipeline: FourPlanePipeline, args: argparse.Namespace) -> Callable[[int], VideoClip]:
    """seed -> clip for the requested task; conditioning inputs are encoded once."""
    if args.task == "predict":
        if args.context is None:
            raise ConfigError("sample --task predict needs --context")
        plane = pipeline.context_plane(load_fpt(args.context))

        def draw(seed: int) -> VideoClip:
            return pipeline.predict_future(plane, seed)
    elif args.task == "interp":
        first, last = _boundary_frames(args)

        def draw(seed: int) -> VideoClip:
            return pipeline.interpolate(first, last, seed)
    elif args.task == "image":
        def draw(seed: int) -> VideoClip:
            return pipeline.generate_image(seed, label=args.label)
    else:
        def draw(seed: int) -> VideoClip:
            return pipeline.generate_class_conditional(args.label, seed)
    return draw


def cmd_sample(args: argparse.Namespace) -> int:
    seed = _seed_and_threads(args)
    _apply_runtime(**seed)
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    pipeline = _pipeline(args)
    out = require_dir(args.run_dir) / SAMPLES
    draw = _sampler(pipeline, args)
    out.mkdir(exist_ok=True)
    for i in range(args.count):
        clip = draw(seed["seed"] + i)
        values = clip.values[0]
        save_fpt(out / f"{args.task}_{i:03d}.fpt", values)
        imageio.imwrite(out / f"{args.task}_{i:03d}.png", np.concatenate(list(_to_uint8(values)), axis=1))
        if values.shape[0] > 1:
            write_frames(values, gif=str(out / f"{args.task}_{i:03d}.gif"))
    print(f"wrote {args.count} samples to {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    _apply_runtime(**_seed_and_threads(args))
    metrics = tuple(m.strip() for m in args.metric.split(",") if m.strip())
    unknown = [m for m in metrics if m not in ("psnr", "ssim")]
    if unknown or not metrics:
        raise ConfigError(f"unknown metrics {unknown}; choose from psnr, ssim")
    codec = load_codec(args.codec)
    provider = ClipDataProvider(args.manifest, batch_size=1, split=args.split)
    result = evaluate_reconstruction(codec, provider, metrics)
    result["split"] = args.split
    text = json.dumps(result, sort_keys=True, indent=2) + "\n"
    targets = [Path(args.out)] if args.out else []
    if args.run_dir:
        targets.append(require_dir(args.run_dir) / METRICS)
    for target in targets:
        target.write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_cost(args: argparse.Namespace) -> int:
    shape = LatentShape.parse(args.shape)
    config = DenoiserConfig.load(args.config) if args.config else reference_surrogate()
    frame = reports_to_frame(cost_report(shape, config, args.budget, args.batch))
    if args.out:
        frame.to_csv(args.out, index=False)
    print(frame.to_csv(index=False), end="")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    _apply_runtime(**_seed_and_threads(args))
    config = DenoiserConfig.load(args.config) if args.config else DenoiserConfig()
    shapes = [LatentShape.parse(s) for s in (args.shape or ["5,16,16,8"])]
    frame = bench(config, shapes, repeats=args.repeats, warmup=args.warmup, batch=args.batch)
    if args.out:
        frame.to_csv(args.out, index=False)
    if args.svg:
        plot_bench(frame, args.svg)
    print(frame.to_csv(index=False), end="")
    return EXIT_OK


def cmd_schedule(args: argparse.Namespace) -> int:
    config = DiffusionConfig.load(args.diffusion_config) if args.diffusion_config else DiffusionConfig()
    changes = {k: v for k, v in (("steps", args.steps), ("beta_start", args.beta_start), ("beta_end", args.beta_end)) if v is not None}
    if args.no_zero_terminal:
        changes["zero_terminal"] = False
    if "steps" in changes:
        changes["sample_steps"] = max(1, min(config.sample_steps, changes["steps"]))
    config = config.replace(**changes) if changes else config
    schedule = build_schedule(config.steps, config.beta_start, config.beta_end, config.zero_terminal)
    dump_schedule(schedule, args.out)
    print(f"wrote {schedule.steps} rows to {args.out}")
    return EXIT_OK


# ============================
# Report
# ============================

def plot_losses(run_dir: Path, path: Path) -> Optional[Path]:
    curves = {kind: run_dir / f"loss_{kind}.csv" for kind in ("codec", "diffusion")}
    curves = {k: pd.read_csv(v) for k, v in curves.items() if v.exists()}
    curves = {k: v for k, v in curves.items() if len(v)}
    if not curves:
        return None
    fig, axes = plt.subplots(1, len(curves), figsize=(5 * len(curves), 3.5), squeeze=False)
    for ax, (kind, frame) in zip(axes[0], curves.items()):
        ax.plot(frame["step"], frame["loss"])
        ax.set_title(f"{kind} loss")
        ax.set_xlabel("step")
        ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def seq_len_table(config: CodecConfig) -> pd.DataFrame:
    t, h, w = config.latent_extents()
    shape = LatentShape(t, h, w, config.c)
    image = LatentShape(1, h, w, config.c)
    rows = [{"representation": kind.value, "latent": str(image if kind is RepresentationKind.IMAGE_FOUR_PLANE else shape),
             "seq_len": seq_len(image if kind is RepresentationKind.IMAGE_FOUR_PLANE else shape, kind)}
            for kind in RepresentationKind]
    return pd.DataFrame(rows)


def _markdown_table(frame: pd.DataFrame) -> str:
    # DataFrame.to_markdown needs the optional tabulate package
    header = "| " + " | ".join(frame.columns) + " |"
    rule = "|" + "---|" * len(frame.columns)
    rows = ["| " + " | ".join(str(v) for v in row) + " |" for row in frame.itertuples(index=False)]
    return "\n".join([header, rule, *rows])


def build_report(run_dir: Path) -> str:
    lines = [f"# Run report: {run_dir.name}", ""]
    for name, title in ((RUN_CONFIG, "Run"), (DIFFUSION_RUN_CONFIG, "Diffusion run")):
        if not (run_dir / name).exists():
            continue
        run = RunConfig.load(run_dir / name)
        lines += [f"## {title}", "", f"- task: {run.task}", f"- seed: {run.seed}", f"- threads: {run.threads}",
                  f"- steps: {run.optimizer.total_steps}", f"- batch size: {run.optimizer.batch_size}", f"- lr: {run.optimizer.lr}", ""]
    if (run_dir / METRICS).exists():
        metrics = json.loads((run_dir / METRICS).read_text(encoding="utf-8"))
        lines += ["## Reconstruction", ""]
        for key in ("psnr", "ssim"):
            if key in metrics:
                lines.append(f"- {key.upper()}: {metrics[key]!r}")
        lines += [f"- clips: {metrics.get('clips')}", ""]
    if (run_dir / CODEC_CONFIG).exists():
        config = CodecConfig.load(run_dir / CODEC_CONFIG)
        lines += ["## Sequence lengths", "", _markdown_table(seq_len_table(config)), ""]
    for kind in ("codec", "diffusion"):
        path = run_dir / f"loss_{kind}.csv"
        if path.exists():
            frame = pd.read_csv(path)
            if len(frame):
                lines.append(f"- final {kind} loss (step {int(frame['step'].iloc[-1])}): {frame['loss'].iloc[-1]:.6g}")
    if plot_losses(run_dir, run_dir / "loss_curves.png") is not None:
        lines += ["", "![loss curves](loss_curves.png)", ""]
    samples = sorted((run_dir / SAMPLES).glob("*.png")) if (run_dir / SAMPLES).is_dir() else []
    if samples:
        lines += ["## Samples", ""]
        lines += [f"![{p.stem}]({SAMPLES}/{p.name})" for p in samples]
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = require_dir(args.run_dir)
    text = build_report(run_dir)
    (run_dir / REPORT).write_text(text, encoding="utf-8")
    print(f"wrote {run_dir / REPORT}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "dataset": cmd_dataset,
    "train-codec": cmd_train_codec,
    "train-diffusion": cmd_train_diffusion,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "generate": cmd_generate,
    "predict": cmd_predict,
    "interpolate": cmd_interpolate,
    "image-tokens": cmd_image_tokens,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "cost": cmd_cost,
    "bench": cmd_bench,
    "report": cmd_report,
    "schedule": cmd_schedule,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv(override=False)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_USAGE
    except (DataError, ShapeError) as e:
        logger.error(f"data error: {e}")
        return EXIT_DATA
    except NumericError as e:
        logger.error(f"numeric failure: {e}")
        return EXIT_NUMERIC
    except FourPlaneError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    except ValueError as e:
        logger.error(f"invalid argument: {e}")
        return EXIT_USAGE
