import pytest
import torch

from codec import build_codec
from diffusion import build_schedule
from errors import ConfigError, DataError, ShapeError
from networks import build_denoiser
from pipelines import FourPlanePipeline, TaskSpec, context_frame_count, image_tokens, load_planes, save_planes, video_planes, video_tokens
from trainer import DiffusionTrainer


@pytest.fixture
def schedule():
    return build_schedule(50, 1e-4, 0.02)


def _pipeline(codec_config, denoiser_config, schedule, **kwargs):
    codec = build_codec(codec_config, seed=0)
    denoiser = build_denoiser(denoiser_config, seed=0)
    return FourPlanePipeline(codec, denoiser, schedule, latent_scale=2.0, sample_steps=5, **kwargs)


def _clips(generator, batch=1, frames=5):
    return torch.rand(batch, frames, 16, 16, 3, generator=generator) * 2 - 1


@pytest.mark.parametrize("t, f_t, expected", [(2, 2, 1), (3, 2, 1), (5, 2, 3), (9, 2, 7), (5, 4, 5)])
def test_context_frame_count(t, f_t, expected):
    assert context_frame_count(t, f_t) == expected


def test_context_frame_count_needs_two_latent_frames():
    with pytest.raises(ValueError):
        context_frame_count(1, 2)


def test_task_specs():
    assert TaskSpec.class_conditional(2).target_planes == ("xt", "yt", "xy1", "xy2")
    predict = TaskSpec.frame_prediction(torch.zeros(4, 4, 4))
    assert predict.conditioning_planes == ("xy1",)
    assert predict.target_planes == ("xt", "yt", "xy2")
    interp = TaskSpec.interpolation(torch.zeros(16, 16, 3), torch.zeros(16, 16, 3))
    assert interp.conditioning_planes == ("xy1", "xy2")
    assert interp.target_planes == ("xt", "yt")
    assert TaskSpec.image_generation().target_planes == ("xt", "yt", "xy1")
    with pytest.raises(ValueError):
        TaskSpec("upscale")


def test_tokenization_lengths(tiny_codec_config, generator):
    codec = build_codec(tiny_codec_config, seed=0)
    clips = _clips(generator, batch=2)
    assert video_tokens(codec, clips).shape == (2, 56, 4)
    assert image_tokens(codec, clips[:, 0]).shape == (2, 24, 4)
    volumetric = build_codec(tiny_codec_config.replace(latent_kind="volumetric"), seed=0)
    assert video_tokens(volumetric, clips).shape == (2, 48, 4)
    with pytest.raises(ConfigError):
        video_tokens(build_codec(tiny_codec_config.replace(latent_kind="triplane"), seed=0), clips)


def test_planes_file_roundtrip(tmp_path, tiny_codec_config, generator):
    codec = build_codec(tiny_codec_config.replace(reduce="lp"), seed=0)
    planes = video_planes(codec, _clips(generator))
    loaded = load_planes(save_planes(tmp_path / "planes.ckpt", planes))
    assert loaded.layout == planes.layout
    assert loaded.mode == planes.mode and loaded.reduce == planes.reduce
    for name in ("xt", "yt", "xy1", "xy2"):
        assert torch.equal(loaded.get(name), planes.get(name))
    with pytest.raises(DataError):
        load_planes(tmp_path / "missing.ckpt")


def test_class_conditional_generation_is_seeded(tiny_codec_config, tiny_denoiser_config, schedule):
    pipeline = _pipeline(tiny_codec_config, tiny_denoiser_config, schedule)
    a = pipeline.generate_class_conditional(1, seed=3, batch=2)
    b = pipeline.generate_class_conditional(1, seed=3, batch=2)
    c = pipeline.generate_class_conditional(1, seed=4, batch=2)
    assert a.values.shape == (2, 5, 16, 16, 3)
    assert torch.equal(a.values, b.values)
    assert not torch.equal(a.values, c.values)
    with pytest.raises(ValueError):
        pipeline.generate_class_conditional(3, seed=0)


def test_unconditional_and_volumetric_generation(tiny_codec_config, tiny_denoiser_config, schedule):
    pipeline = _pipeline(tiny_codec_config, tiny_denoiser_config, schedule)
    assert pipeline.generate_class_conditional(None, seed=0).values.shape == (1, 5, 16, 16, 3)
    volumetric = _pipeline(tiny_codec_config.replace(latent_kind="volumetric"), tiny_denoiser_config, schedule)
    assert volumetric.generate_class_conditional(0, seed=0).values.shape == (1, 5, 16, 16, 3)
    with pytest.raises(ConfigError):
        volumetric.predict_future(torch.zeros(4, 4, 4), seed=0)


def test_prediction_keeps_the_context_plane(tiny_codec_config, tiny_denoiser_config, schedule, generator):
    pipeline = _pipeline(tiny_codec_config, tiny_denoiser_config, schedule)
    context = pipeline.context_plane(_clips(generator, batch=2)[:, :3])
    assert context.shape == (2, 4, 4, 4)
    planes = pipeline.predict_future_planes(context, seed=0)
    assert torch.equal(planes.xy1, context)
    assert planes.xt.shape == (2, 3, 4, 4)
    assert pipeline.predict_future(context[0], seed=0).values.shape == (1, 5, 16, 16, 3)
    with pytest.raises(ShapeError):
        pipeline.predict_future(torch.zeros(1, 3, 3, 4), seed=0)


def test_context_plane_is_the_first_segment_of_the_full_clip(tiny_codec_config, tiny_denoiser_config, schedule, generator):
    pipeline = _pipeline(tiny_codec_config, tiny_denoiser_config, schedule)
    clips = _clips(generator)
    full = video_planes(pipeline.codec, clips)
    assert torch.allclose(pipeline.context_plane(clips), full.xy1, atol=1e-5)


def test_interpolation_keeps_the_boundary_planes(tiny_codec_config, tiny_denoiser_config, schedule, generator):
    pipeline = _pipeline(tiny_codec_config.replace(spatial_mode="boundary"), tiny_denoiser_config, schedule)
    clips = _clips(generator, batch=2)
    first, last = clips[:, :1], clips[:, -1:]
    xy1, xy2 = pipeline.boundary_planes(first, last)
    planes = pipeline.interpolate_planes(first, last, seed=0)
    assert torch.equal(planes.xy1, xy1) and torch.equal(planes.xy2, xy2)
    assert planes.yt.shape == (2, 3, 4, 4)
    single = pipeline.interpolate(clips[0, 0], clips[0, -1], seed=0)
    assert single.values.shape == (1, 5, 16, 16, 3)


def test_tasks_need_the_matching_spatial_mode(tiny_codec_config, tiny_denoiser_config, schedule, generator):
    segment = _pipeline(tiny_codec_config, tiny_denoiser_config, schedule)
    boundary = _pipeline(tiny_codec_config.replace(spatial_mode="boundary"), tiny_denoiser_config, schedule)
    frame = torch.zeros(16, 16, 3)
    with pytest.raises(ConfigError):
        segment.interpolate(frame, frame, seed=0)
    with pytest.raises(ConfigError):
        boundary.context_plane(_clips(generator))


def test_image_generation(tiny_codec_config, tiny_denoiser_config, schedule, generator):
    pipeline = _pipeline(tiny_codec_config, tiny_denoiser_config, schedule)
    image = pipeline.generate_image(seed=1, label=0, batch=2)
    assert image.values.shape == (2, 1, 16, 16, 3)
    assert pipeline.image_tokens(torch.zeros(16, 16, 3)).shape == (1, 24, 4)


def test_pipeline_checks_channels(tiny_codec_config, tiny_denoiser_config, schedule):
    with pytest.raises(ConfigError):
        _pipeline(tiny_codec_config, tiny_denoiser_config.replace(token_dim=8), schedule)
    with pytest.raises(ValueError):
        FourPlanePipeline(build_codec(tiny_codec_config), build_denoiser(tiny_denoiser_config), schedule, latent_scale=0.0)


def test_from_checkpoints(codec_checkpoint, tiny_denoiser_config, tiny_diffusion_config, tiny_run, tmp_path):
    trainer = DiffusionTrainer(codec_checkpoint, tiny_denoiser_config, tiny_diffusion_config, tiny_run.replace(optimizer=tiny_run.optimizer.replace(total_steps=2)), tmp_path / "diff")
    trainer.train()
    pipeline = FourPlanePipeline.from_checkpoints(codec_checkpoint, trainer.checkpoint_path(), sample_steps=3)
    assert pipeline.latent_scale == trainer.latent_scale
    assert pipeline.sample_steps == 3
    assert pipeline.eta == tiny_diffusion_config.eta
    video = pipeline.generate_class_conditional(2, seed=0)
    assert video.values.shape == (1, 5, 16, 16, 3)
    assert video.values.abs().max() <= 1.0


def _open_gates(denoiser, seed=0):
    # zero-initialized gates make every block an identity map; give them weight so tokens interact
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in [denoiser.adaln_base.weight, denoiser.adaln_base.bias] + [b.lora.up.weight for b in denoiser.blocks]:
            p.copy_(torch.randn(p.shape, generator=gen) * 0.1)


def test_interpolating_a_static_clip_stays_near_its_boundary(tiny_codec_config, tiny_denoiser_config, schedule, generator):
    pipeline = _pipeline(tiny_codec_config.replace(spatial_mode="boundary"), tiny_denoiser_config, schedule)
    frame = _clips(generator, frames=1)[0, 0]
    static = frame.expand(5, 16, 16, 3).unsqueeze(0)
    reference = pipeline.codec.decode_planes(video_planes(pipeline.codec, static)).values[0]
    ends = [0, -1]

    def boundary_error(clip):
        return (clip.values[0, ends] - reference[ends]).pow(2).mean().item()

    interp = [boundary_error(pipeline.interpolate(frame, frame, seed)) for seed in range(20)]
    free = [boundary_error(pipeline.generate_class_conditional(None, seed)) for seed in range(20)]
    assert sum(interp) < sum(free)


def test_prediction_depends_on_the_context(tiny_codec_config, tiny_denoiser_config, schedule, generator):
    pipeline = _pipeline(tiny_codec_config, tiny_denoiser_config, schedule)
    _open_gates(pipeline.denoiser)
    a, b = (pipeline.context_plane(_clips(generator)[:, :3]) for _ in range(2))
    planes_a, planes_b = pipeline.predict_future_planes(a, seed=5), pipeline.predict_future_planes(b, seed=5)
    assert not torch.allclose(planes_a.xt, planes_b.xt)
    assert not torch.allclose(planes_a.xy2, planes_b.xy2)
    again = pipeline.predict_future_planes(a, seed=5)
    assert torch.equal(again.xt, planes_a.xt)
