"""Desk-scale codec ablations on one synthetic dataset.

Usage examples:
  # 2,000 clips of 9x32x32, every variant for 2,000 steps
  python scripts/desk_ablation.py --out runs/ablation --steps 2000

  # quick smoke run on an existing dataset, plus a frame-count sweep
  python scripts/desk_ablation.py --out runs/abl --manifest data/manifest.json --steps 50 --frames-sweep 5,9

Every variant trains with the same RunConfig (steps, optimizer, seed); only the
codec's latent representation changes. FOURPLANE_SEED/FOURPLANE_THREADS apply,
flags override them.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from config import CodecConfig, OptimizerConfig, RunConfig, SyntheticSpec, env_overrides  # noqa: E402
from data_provider import ClipDataProvider  # noqa: E402
from errors import FourPlaneError  # noqa: E402
from evaldata.synthetic import DatasetManifest, generate_synthetic  # noqa: E402
from runtime import configure_logging, run_lock, seed_everything  # noqa: E402
from trainer import CodecTrainer, evaluate_reconstruction  # noqa: E402

logger = logging.getLogger("desk_ablation")

VARIANTS: Dict[str, Dict[str, str]] = {
    "fourplane": {"latent_kind": "fourplane", "combine": "concat", "reduce": "mp"},
    "volumetric": {"latent_kind": "volumetric"},
    "sum": {"latent_kind": "fourplane", "combine": "sum", "reduce": "mp"},
    "linearproj": {"latent_kind": "fourplane", "combine": "concat", "reduce": "lp"},
    "triplane": {"latent_kind": "triplane", "combine": "concat", "reduce": "mp"},
}
SWEEP_VARIANTS = ("fourplane", "volumetric")
MAX_PSNR_GAP_DB = 1.5


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Train codec variants with an identical budget and compare them")
    p.add_argument("--out", required=True, help="ablation directory (one run dir per variant)")
    p.add_argument("--manifest", default=None, help="reuse a dataset instead of generating one")
    p.add_argument("--clips", type=int, default=2000)
    p.add_argument("--frames", type=int, default=9)
    p.add_argument("--size", type=int, default=32, help="frame height and width")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated subset of " + ",".join(VARIANTS))
    p.add_argument("--frames-sweep", default=None, help="comma-separated frame counts for a fourplane/volumetric sweep")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--log-level", default=None)
    return p.parse_args(argv)


def make_dataset(out: Path, clips: int, frames: int, size: int, seed: int, jobs: int) -> DatasetManifest:
    root = out / f"data_{frames}x{size}x{size}"
    if (root / "manifest.json").exists():
        return DatasetManifest.read(root)
    spec = SyntheticSpec(clip_count=clips, frames=frames, height=size, width=size, seed=seed)
    return generate_synthetic(spec, root, n_jobs=jobs)


def desk_codec(manifest: DatasetManifest, base_channels: int, **changes: str) -> CodecConfig:
    frames, height, width, _ = manifest.dims
    return CodecConfig(
        clip_frames=frames,
        clip_height=height,
        clip_width=width,
        base_channels=base_channels,
        temporal_down_layers=1,
        spatial_down_layers=2,
        **changes,
    )


def run_variant(name: str, config: CodecConfig, run: RunConfig, manifest: DatasetManifest, run_dir: Path) -> Dict[str, object]:
    """Train one codec and score it on the validation split (train split if there is none)."""
    logger.info(f"variant {name}: {config.latent_kind} combine={config.combine} reduce={config.reduce}")
    with run_lock(run_dir):
        config.save(run_dir / "codec_config.json")
        run.replace(output_dir=str(run_dir), codec_config="codec_config.json").save(run_dir / "run_config.json")
        trainer = CodecTrainer(config, run, run_dir)
        try:
            losses = trainer.train()
        finally:
            trainer.close()
    split = "val" if manifest.clips_for("val") else "train"
    scores = evaluate_reconstruction(trainer.model, ClipDataProvider(manifest, 1, split=split))
    tail = losses["loss"].tail(max(1, len(losses) // 10))
    return {
        "variant": name,
        "frames": manifest.dims[0],
        "latent_kind": config.latent_kind,
        "combine": config.combine,
        "reduce": config.reduce,
        "steps": trainer.step,
        "final_loss": float(tail.mean()),
        "psnr": scores["psnr"],
        "ssim": scores["ssim"],
        "eval_split": split,
        "parameters": trainer.model.parameter_count(),
    }


def ablation_checks(frame: pd.DataFrame) -> List[Dict[str, object]]:
    """Orderings the desk runs are judged on; missing variants are skipped."""
    main = frame[frame["frames"] == frame["frames"].iloc[0]].set_index("variant") if len(frame) else frame
    checks = []

    def have(*names: str) -> bool:
        return all(n in main.index for n in names)

    if have("fourplane", "volumetric"):
        gap = float(main.loc["volumetric", "psnr"] - main.loc["fourplane", "psnr"])
        checks.append({"check": "fourplane psnr within 1.5 dB of volumetric", "value": gap, "passed": gap <= MAX_PSNR_GAP_DB})
    if have("fourplane", "sum"):
        a, b = float(main.loc["fourplane", "final_loss"]), float(main.loc["sum", "final_loss"])
        checks.append({"check": "concat loss <= sum loss", "value": a - b, "passed": a <= b})
    if have("fourplane", "linearproj"):
        a, b = float(main.loc["fourplane", "final_loss"]), float(main.loc["linearproj", "final_loss"])
        checks.append({"check": "meanpool loss <= linearproj loss", "value": a - b, "passed": a <= b})
    return checks


def write_report(frame: pd.DataFrame, checks: List[Dict[str, object]], out: Path) -> Path:
    frame.to_csv(out / "ablation.csv", index=False)
    lines = ["# Desk ablation", "", "| variant | frames | steps | final loss | PSNR | SSIM |", "|---|---|---|---|---|---|"]
    for row in frame.itertuples(index=False):
        lines.append(f"| {row.variant} | {row.frames} | {row.steps} | {row.final_loss:.6g} | {row.psnr:.3f} | {row.ssim:.4f} |")
    lines += ["", "## Checks", ""]
    for check in checks:
        mark = "PASS" if check["passed"] else "FAIL"
        lines.append(f"- {mark}: {check['check']} ({check['value']:+.4g})")
    path = out / "ablation.md"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.log_level)
    runtime = {"seed": 0, "threads": 1, **env_overrides()}
    runtime.update({k: v for k, v in (("seed", args.seed), ("threads", args.threads)) if v is not None})
    seed_everything(runtime["seed"], runtime["threads"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [n.strip() for n in args.variants.split(",") if n.strip()]
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        logger.error(f"unknown variants {unknown}")
        return 2

    optimizer = OptimizerConfig(lr=args.lr, batch_size=args.batch_size, total_steps=args.steps, warmup_steps=min(100, args.steps // 10))
    try:
        manifest = DatasetManifest.read(args.manifest) if args.manifest else make_dataset(out, args.clips, args.frames, args.size, runtime["seed"], args.jobs)
        run = RunConfig(
            manifest=str(manifest.root / "manifest.json"),
            seed=runtime["seed"],
            threads=runtime["threads"],
            optimizer=optimizer,
            log_interval=max(1, args.steps // 20),
            checkpoint_interval=args.steps,
        )
        rows = [run_variant(n, desk_codec(manifest, args.base_channels, **VARIANTS[n]), run, manifest, out / n) for n in names]
        if args.frames_sweep:
            for frames in (int(f) for f in args.frames_sweep.split(",")):
                if frames == manifest.dims[0]:
                    continue
                sweep = make_dataset(out, args.clips, frames, args.size, runtime["seed"], args.jobs)
                sweep_run = run.replace(manifest=str(sweep.root / "manifest.json"))
                for n in SWEEP_VARIANTS:
                    config = desk_codec(sweep, args.base_channels, **VARIANTS[n])
                    rows.append(run_variant(n, config, sweep_run, sweep, out / f"{n}_{frames}f"))
    except FourPlaneError as e:
        logger.error(f"ablation failed: {e}")
        return 3

    frame = pd.DataFrame(rows)
    checks = ablation_checks(frame)
    report = write_report(frame, checks, out)
    logger.info(f"wrote {report}")
    print(report.read_text(encoding="utf-8"), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
