import pytest

from config import DenoiserConfig
from costmodel import (
    LatentShape,
    RepresentationKind,
    activation_memory,
    bench,
    bench_codec,
    cost_report,
    est_max_batch,
    flops_per_step,
    parameter_count,
    plot_bench,
    reference_surrogate,
    reports_to_frame,
    seq_len,
    time_step,
)
from errors import ShapeError

GIB = 1 << 30


@pytest.mark.parametrize(
    "kind, expected",
    [("volumetric", 1280), ("fourplane", 672), ("triplane", 416), ("image_fourplane", 288)],
)
def test_seq_len_reference_table(kind, expected):
    assert seq_len(LatentShape(5, 16, 16, 8), kind) == expected


def test_latent_shape_parse():
    assert LatentShape.parse("5,16,16") == LatentShape(5, 16, 16, 8)
    assert str(LatentShape.parse("5,16,16,4")) == "5x16x16x4"
    with pytest.raises(ShapeError):
        LatentShape.parse("5,16")
    with pytest.raises(ShapeError):
        LatentShape.parse("a,b,c")
    with pytest.raises(ShapeError):
        LatentShape(0, 16, 16)


def test_fourplane_grows_linearly_in_frames():
    lengths = [seq_len(LatentShape(t, 16, 16), RepresentationKind.FOUR_PLANE) for t in (3, 5, 7)]
    assert lengths[1] - lengths[0] == lengths[2] - lengths[1] == 2 * 32


def test_surrogate_size():
    assert 215_000_000 < parameter_count(reference_surrogate()) < 225_000_000


def test_surrogate_flops_ratio():
    config = reference_surrogate()
    shape = LatentShape(5, 16, 16, 8)
    volumetric = flops_per_step(config, seq_len(shape, "volumetric"))
    fourplane = flops_per_step(config, seq_len(shape, "fourplane"))
    assert 1.6 <= volumetric / fourplane <= 2.1


def test_flops_scale_with_batch_and_training():
    config = DenoiserConfig(depth=2, width=64, heads=4)
    one = flops_per_step(config, 100)
    assert flops_per_step(config, 100, batch=3) == 3 * one
    assert flops_per_step(config, 100, training=True) == 3 * one
    assert flops_per_step(config, 100, cond_len=20) > one
    with pytest.raises(ValueError):
        flops_per_step(config, 0)


def test_memory_and_max_batch():
    config = reference_surrogate()
    shape = LatentShape(5, 16, 16, 8)
    four, vol = seq_len(shape, "fourplane"), seq_len(shape, "volumetric")
    assert activation_memory(config, vol) > activation_memory(config, four)
    assert activation_memory(config, four, batch=4) == 4 * activation_memory(config, four)
    assert est_max_batch(config, four, 16 * GIB) >= est_max_batch(config, vol, 16 * GIB) >= 1
    assert est_max_batch(config, four, GIB) == 0


def test_cost_report_frame():
    frame = reports_to_frame(cost_report(LatentShape(5, 16, 16, 8), reference_surrogate(), 16 * GIB))
    assert list(frame["kind"]) == [k.value for k in RepresentationKind]
    assert list(frame["seq_len"]) == [1280, 672, 416, 288]
    assert {"flops_per_denoiser_step", "activation_bytes", "est_max_batch", "measured_ms"} <= set(frame.columns)
    assert (frame["shape"] == "5x16x16x8").all()


def test_time_step_counts_calls():
    calls = []
    ms = time_step(lambda: calls.append(1), repeats=3, warmup=2)
    assert len(calls) == 5 and ms >= 0.0
    with pytest.raises(ValueError):
        time_step(lambda: None, repeats=0)


def test_bench_and_plot(tmp_path, tiny_denoiser_config):
    frame = bench(tiny_denoiser_config, [LatentShape(3, 4, 4, 4), LatentShape(5, 4, 4, 4)], repeats=1)
    assert list(frame.columns) == ["shape", "kind", "seq_len", "batch", "median_ms", "repeats", "threads"]
    assert list(frame["seq_len"]) == [56, 48, 72, 80]
    assert (frame["median_ms"] > 0).all()
    path = plot_bench(frame, tmp_path / "bench.png")
    assert path.exists() and path.stat().st_size > 0
    with pytest.raises(ShapeError):
        bench(tiny_denoiser_config, [LatentShape(3, 4, 4, 8)], repeats=1)


def test_bench_codec(tiny_codec_config):
    frame = bench_codec(tiny_codec_config, repeats=1)
    assert list(frame["kind"]) == ["fourplane", "volumetric"]
    assert (frame["parameters"] > 0).all()


@pytest.mark.slow
def test_fourplane_steps_are_faster_than_volumetric():
    config = DenoiserConfig(depth=4, width=256, heads=8, max_seq=2048, token_dim=8, max_extent=16)
    frame = bench(config, [LatentShape(5, 16, 16, 8)], repeats=3).set_index("kind")
    assert frame.loc["volumetric", "median_ms"] > 1.2 * frame.loc["fourplane", "median_ms"]
