import json

import pandas as pd
import pytest
import torch

from cli import build_parser, main, resolve_run_config
from config import RunConfig
from evaldata.synthetic import DatasetManifest
from pipelines import load_planes
from substrate.fpt import load_fpt, save_fpt


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    monkeypatch.delenv("FOURPLANE_SEED", raising=False)
    monkeypatch.delenv("FOURPLANE_THREADS", raising=False)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def config_files(tmp_path, tiny_codec_config, tiny_denoiser_config, tiny_diffusion_config):
    paths = {
        "codec": tmp_path / "codec.json",
        "denoiser": tmp_path / "denoiser.json",
        "diffusion": tmp_path / "diffusion.json",
    }
    tiny_codec_config.save(paths["codec"])
    tiny_denoiser_config.save(paths["denoiser"])
    tiny_diffusion_config.save(paths["diffusion"])
    return {k: str(v) for k, v in paths.items()}


def _train_codec(run_dir, manifest, codec_config, *extra):
    return main(
        [
            "train-codec", "--run-dir", str(run_dir), "--manifest", str(manifest), "--codec-config", codec_config,
            "--steps", "2", "--batch-size", "2", "--log-interval", "1", "--checkpoint-interval", "2", "--seed", "0", *extra,
        ]
    )


def test_usage_errors_exit_2():
    assert main([]) == 2
    assert main(["cost"]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["eval", "--codec", "x.ckpt", "--manifest", "m.json", "--metric", "lpips"]) == 2


def test_data_errors_exit_3(tmp_path):
    assert main(["cost", "--shape", "5,16"]) == 3
    assert main(["report", "--run-dir", str(tmp_path / "missing")]) == 3
    assert main(["dataset", "verify", "--manifest", str(tmp_path / "nowhere")]) == 3


def test_dataset_make_and_verify(tmp_path):
    out = tmp_path / "data"
    args = ["dataset", "make", "--out", str(out), "--clips", "4", "--frames", "5", "--height", "16", "--width", "16", "--seed", "3"]
    assert main(args) == 0
    manifest = DatasetManifest.read(out)
    assert manifest.dims == [5, 16, 16, 3]
    assert manifest.spec["seed"] == 3
    assert main(["dataset", "verify", "--manifest", str(out / "manifest.json")]) == 0
    (out / manifest.clips[0].path).write_bytes(b"FPT1")
    assert main(["dataset", "verify", "--manifest", str(out)]) == 3


def test_config_precedence(tmp_path, monkeypatch):
    config = tmp_path / "run.json"
    RunConfig(seed=3, threads=2, log_interval=7).save(config)
    parser = build_parser()
    argv = ["train-codec", "--run-dir", str(tmp_path / "r"), "--config", str(config)]

    run = resolve_run_config(parser.parse_args(argv))
    assert (run.seed, run.threads, run.log_interval) == (3, 2, 7)
    assert run.output_dir == str(tmp_path / "r")

    monkeypatch.setenv("FOURPLANE_SEED", "11")
    run = resolve_run_config(parser.parse_args(argv + ["--steps", "9", "--lr", "0.01"]))
    assert run.seed == 11
    assert run.optimizer.total_steps == 9 and run.optimizer.lr == 0.01

    run = resolve_run_config(parser.parse_args(argv + ["--seed", "5"]))
    assert run.seed == 5


def test_cost_and_schedule_outputs(tmp_path):
    cost = tmp_path / "cost.csv"
    assert main(["cost", "--shape", "5,16,16", "--out", str(cost)]) == 0
    frame = pd.read_csv(cost)
    assert dict(zip(frame["kind"], frame["seq_len"])) == {"volumetric": 1280, "fourplane": 672, "triplane": 416, "image_fourplane": 288}

    schedule = tmp_path / "schedule.csv"
    assert main(["schedule", "--steps", "20", "--beta-end", "0.02", "--out", str(schedule)]) == 0
    frame = pd.read_csv(schedule)
    assert len(frame) == 20 and frame["alpha_bar"].iloc[-1] == 0.0
    assert main(["schedule", "--steps", "1", "--out", str(schedule)]) == 2


def test_bench_command(tmp_path, config_files):
    out, svg = tmp_path / "bench.csv", tmp_path / "bench.svg"
    args = ["bench", "--config", config_files["denoiser"], "--shape", "3,4,4,4", "--repeats", "1", "--out", str(out), "--svg", str(svg)]
    assert main(args) == 0
    assert list(pd.read_csv(out)["kind"]) == ["fourplane", "volumetric"]
    assert svg.exists()


def test_codec_training_eval_and_report(tmp_path, synthetic_dataset, config_files):
    run_dir = tmp_path / "run"
    manifest = synthetic_dataset.root / "manifest.json"
    assert _train_codec(run_dir, manifest, config_files["codec"]) == 0

    run = json.loads((run_dir / "run_config.json").read_text())
    assert run["optimizer"]["total_steps"] == 2
    assert run["codec_config"] == "codec_config.json"
    assert (run_dir / "codec_config.json").exists()
    assert not (run_dir / ".lock").exists()
    checkpoint = run_dir / "checkpoints" / "codec_latest.ckpt"
    assert checkpoint.exists()
    assert len(pd.read_csv(run_dir / "loss_codec.csv")) == 2

    # resuming a finished run is a no-op
    assert _train_codec(run_dir, manifest, config_files["codec"], "--resume") == 0
    assert len(pd.read_csv(run_dir / "loss_codec.csv")) == 2

    assert main(["eval", "--codec", str(checkpoint), "--manifest", str(manifest), "--run-dir", str(run_dir)]) == 0
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert metrics["split"] == "val" and metrics["clips"] == 3

    assert main(["report", "--run-dir", str(run_dir)]) == 0
    report = (run_dir / "report.md").read_text()
    assert f"PSNR: {metrics['psnr']!r}" in report
    assert "| fourplane | 3x4x4x4 | 56 |" in report
    assert "| volumetric | 3x4x4x4 | 48 |" in report
    assert (run_dir / "loss_curves.png").exists()


def test_locked_run_dir_exits_3(tmp_path, synthetic_dataset, config_files):
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    (run_dir / ".lock").write_text("123")
    assert _train_codec(run_dir, synthetic_dataset.root / "manifest.json", config_files["codec"]) == 3


def test_encode_decode_and_image_tokens(tmp_path, synthetic_dataset, codec_checkpoint):
    clip_path = synthetic_dataset.clip_path(synthetic_dataset.clips[0])
    planes, recon = tmp_path / "planes.ckpt", tmp_path / "recon.fpt"
    assert main(["encode", "--codec", str(codec_checkpoint), "--clip", str(clip_path), "--out", str(planes)]) == 0
    assert main(["decode", "--codec", str(codec_checkpoint), "--planes", str(planes), "--out", str(recon), "--png-dir", str(tmp_path / "png")]) == 0
    assert tuple(load_fpt(recon).shape) == (5, 16, 16, 3)
    assert len(list((tmp_path / "png").glob("frame_*.png"))) == 5
    assert main(["decode", "--codec", str(codec_checkpoint), "--out", str(recon)]) == 2

    frame, tokens = tmp_path / "frame.fpt", tmp_path / "tokens.fpt"
    save_fpt(frame, load_fpt(clip_path)[0])
    assert main(["image-tokens", "--codec", str(codec_checkpoint), "--image", str(frame), "--out", str(tokens)]) == 0
    assert tuple(load_fpt(tokens).shape) == (24, 4)


def test_encode_plane_overrides(tmp_path, synthetic_dataset, codec_checkpoint):
    clip_path = synthetic_dataset.clip_path(synthetic_dataset.clips[0])
    encode = ["encode", "--codec", str(codec_checkpoint), "--clip", str(clip_path)]
    paths = {name: tmp_path / f"{name}.ckpt" for name in ("segment", "boundary", "lp", "sum")}
    assert main([*encode, "--mode", "segment", "--out", str(paths["segment"])]) == 0
    assert main([*encode, "--mode", "boundary", "--out", str(paths["boundary"])]) == 0
    assert main([*encode, "--reduce", "lp", "--out", str(paths["lp"])]) == 0
    assert main([*encode, "--combine", "sum", "--out", str(paths["sum"])]) == 0
    assert main([*encode, "--mode", "diagonal", "--out", str(tmp_path / "x.ckpt")]) == 2

    segment, boundary, lp = (load_planes(paths[k]) for k in ("segment", "boundary", "lp"))
    assert (segment.mode.value, boundary.mode.value) == ("segment", "boundary")
    assert torch.equal(segment.xt, boundary.xt) and torch.equal(segment.yt, boundary.yt)
    assert segment.xy2.shape == boundary.xy2.shape
    # the segment plane pools the later latent frames, the boundary plane encodes the last frame alone
    assert not torch.allclose(segment.xy2, boundary.xy2)
    # an untrained linear projection weighs every position equally
    assert lp.reduce.value == "lp"
    assert torch.allclose(lp.xt, segment.xt, atol=1e-6)

    for name in ("segment", "boundary"):
        out = tmp_path / f"{name}.fpt"
        assert main(["decode", "--codec", str(codec_checkpoint), "--planes", str(paths[name]), "--out", str(out)]) == 0
        assert tuple(load_fpt(out).shape) == (5, 16, 16, 3)
    # summed planes carry a quarter of the channels a concat decoder expects
    assert main(["decode", "--codec", str(codec_checkpoint), "--planes", str(paths["sum"]), "--out", str(tmp_path / "s.fpt")]) == 3


def test_diffusion_training_and_seeded_sampling(tmp_path, synthetic_dataset, codec_checkpoint, config_files):
    run_dir = tmp_path / "diff"
    manifest = synthetic_dataset.root / "manifest.json"
    args = [
        "train-diffusion", "--run-dir", str(run_dir), "--manifest", str(manifest), "--codec", str(codec_checkpoint),
        "--denoiser-config", config_files["denoiser"], "--diffusion-config", config_files["diffusion"],
        "--steps", "2", "--batch-size", "2", "--log-interval", "1", "--checkpoint-interval", "2", "--self-cond", "0.5",
    ]
    assert main(args) == 0
    assert json.loads((run_dir / "diffusion_config.json").read_text())["self_cond_rate"] == 0.5
    diffusion = run_dir / "checkpoints" / "diffusion_latest.ckpt"
    sampling = ["--codec", str(codec_checkpoint), "--diffusion", str(diffusion), "--sample-steps", "3"]

    a, b = tmp_path / "a.fpt", tmp_path / "b.fpt"
    assert main(["generate", *sampling, "--label", "1", "--seed", "4", "--out", str(a), "--gif", str(tmp_path / "a.gif")]) == 0
    assert main(["generate", *sampling, "--label", "1", "--seed", "4", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.gif").exists()

    clip_path = synthetic_dataset.clip_path(synthetic_dataset.clips[0])
    predicted = tmp_path / "predicted.fpt"
    assert main(["predict", *sampling, "--context", str(clip_path), "--out", str(predicted)]) == 0
    assert tuple(load_fpt(predicted).shape) == (5, 16, 16, 3)
    # a segment-mode codec cannot interpolate
    assert main(["interpolate", *sampling, "--clip", str(clip_path), "--out", str(tmp_path / "i.fpt")]) == 2

    assert main(["sample", *sampling, "--run-dir", str(run_dir), "--count", "2", "--label", "0"]) == 0
    assert sorted(p.name for p in (run_dir / "samples").glob("*.png")) == ["class_000.png", "class_001.png"]
    assert main(["report", "--run-dir", str(run_dir)]) == 0
    report = (run_dir / "report.md").read_text()
    assert "samples/class_000.png" in report
    assert "final diffusion loss (step 2)" in report


def test_sample_tasks(tmp_path, synthetic_dataset, codec_checkpoint, config_files):
    run_dir = tmp_path / "diff"
    args = [
        "train-diffusion", "--run-dir", str(run_dir), "--manifest", str(synthetic_dataset.root / "manifest.json"),
        "--codec", str(codec_checkpoint), "--denoiser-config", config_files["denoiser"],
        "--diffusion-config", config_files["diffusion"], "--steps", "1", "--batch-size", "2",
    ]
    assert main(args) == 0
    clip_path = synthetic_dataset.clip_path(synthetic_dataset.clips[0])
    sample = [
        "sample", "--codec", str(codec_checkpoint), "--diffusion", str(run_dir / "checkpoints" / "diffusion_latest.ckpt"),
        "--run-dir", str(run_dir), "--steps", "3", "--count", "2",
    ]
    assert main([*sample, "--task", "predict", "--context", str(clip_path), "--seed", "9"]) == 0
    samples = run_dir / "samples"
    first = (samples / "predict_000.fpt").read_bytes()
    assert sorted(p.name for p in samples.glob("predict_*")) == [
        "predict_000.fpt", "predict_000.gif", "predict_000.png", "predict_001.fpt", "predict_001.gif", "predict_001.png",
    ]
    assert tuple(load_fpt(samples / "predict_001.fpt").shape) == (5, 16, 16, 3)
    assert first != (samples / "predict_001.fpt").read_bytes()
    assert main([*sample, "--task", "predict", "--context", str(clip_path), "--seed", "9", "--count", "1"]) == 0
    assert (samples / "predict_000.fpt").read_bytes() == first

    assert main([*sample, "--task", "image", "--count", "1", "--label", "1"]) == 0
    assert tuple(load_fpt(samples / "image_000.fpt").shape)[0] == 1
    assert not (samples / "image_000.gif").exists()

    assert main([*sample, "--task", "predict"]) == 2
    # a segment-mode codec has no boundary planes to condition on
    assert main([*sample, "--task", "interp", "--clip", str(clip_path)]) == 2
    assert main([*sample, "--task", "interp"]) == 2
    assert main([*sample, "--task", "extend"]) == 2


def test_diffusion_run_shares_codec_run_dir(tmp_path, synthetic_dataset, config_files):
    run_dir = tmp_path / "run"
    manifest = synthetic_dataset.root / "manifest.json"
    assert _train_codec(run_dir, manifest, config_files["codec"]) == 0
    codec_run = (run_dir / "run_config.json").read_text()
    args = [
        "train-diffusion", "--run-dir", str(run_dir), "--manifest", str(manifest),
        "--denoiser-config", config_files["denoiser"], "--diffusion-config", config_files["diffusion"],
        "--steps", "1", "--batch-size", "2", "--task", "predict",
    ]
    assert main(args) == 0
    assert (run_dir / "run_config.json").read_text() == codec_run
    assert json.loads((run_dir / "run_config.json").read_text())["codec_config"] == "codec_config.json"
    diffusion_run = json.loads((run_dir / "diffusion_run_config.json").read_text())
    assert diffusion_run["task"] == "predict"
    assert diffusion_run["optimizer"]["total_steps"] == 1
    assert (run_dir / "checkpoints" / "diffusion_latest.ckpt").exists()

    assert main(["report", "--run-dir", str(run_dir)]) == 0
    report = (run_dir / "report.md").read_text()
    assert "## Run\n\n- task: class" in report
    assert "## Diffusion run\n\n- task: predict" in report
