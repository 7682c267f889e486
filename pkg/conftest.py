# File: conftest.py

import sys
from pathlib import Path

import pytest
import torch

# Add project root to sys.path
sys.path.insert(0, str(Path(__file__).resolve().parent))

from config import CodecConfig, DenoiserConfig, DiffusionConfig, OptimizerConfig, RunConfig, SyntheticSpec  # noqa: E402


@pytest.fixture
def tiny_codec_config():
    """
    5x16x16 clips, f_t=2, f_s=4, four latent channels: latents are 3x4x4x4.
    """
    return CodecConfig(
        c=4,
        base_channels=8,
        norm_groups=4,
        residual_blocks=1,
        temporal_down_layers=1,
        spatial_down_layers=2,
        clip_frames=5,
        clip_height=16,
        clip_width=16,
    )


@pytest.fixture
def tiny_denoiser_config():
    return DenoiserConfig(
        depth=2,
        width=32,
        heads=4,
        lora_rank=2,
        vocab=3,
        max_seq=256,
        token_dim=4,
        max_extent=16,
        time_freq_dim=16,
    )


@pytest.fixture
def tiny_diffusion_config():
    return DiffusionConfig(steps=50, sample_steps=5)


@pytest.fixture
def generator():
    """Seeded generator for test inputs."""
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def tiny_spec():
    return SyntheticSpec(clip_count=12, frames=5, height=16, width=16, sprite_size=6, val_fraction=0.25, seed=7)


@pytest.fixture
def synthetic_dataset(tmp_path, tiny_spec):
    """
    Fixture to provide a small synthetic dataset written to tmp_path; returns its manifest.
    """
    from evaldata.synthetic import generate_synthetic

    return generate_synthetic(tiny_spec, tmp_path / "data")


@pytest.fixture
def tiny_run(synthetic_dataset, tmp_path):
    return RunConfig(
        manifest=str(synthetic_dataset.root / "manifest.json"),
        seed=0,
        optimizer=OptimizerConfig(lr=1e-3, warmup_steps=1, total_steps=4, batch_size=2),
        output_dir=str(tmp_path / "run"),
        log_interval=1,
        checkpoint_interval=2,
    )


@pytest.fixture
def codec_checkpoint(tiny_codec_config, tiny_run, tmp_path):
    """A codec trained for two steps; returns the latest checkpoint path."""
    from trainer import CodecTrainer

    trainer = CodecTrainer(tiny_codec_config, tiny_run, tmp_path / "codec_run")
    trainer.train(steps=2)
    trainer.close()
    return trainer.checkpoint_path()
