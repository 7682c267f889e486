import json

import numpy as np
import pytest
import torch

from config import SyntheticSpec
from errors import DataError, ShapeError
from evaldata import (
    PSNR_CAP,
    DatasetManifest,
    generate_synthetic,
    gaussian_window,
    palette_energy_band,
    psnr,
    psnr_from_mse,
    render_clip,
    ssim,
    verify_manifest,
)
from substrate.fpt import load_fpt


def test_psnr_for_a_known_error():
    a = torch.zeros(2, 16, 16, 3)
    # 0.2 in [-1, 1] is 0.1 in [0, 1]: mse 0.01
    assert psnr(a, a + 0.2) == pytest.approx(20.0)
    assert psnr(a, a) == PSNR_CAP
    assert psnr_from_mse(1e-12) == PSNR_CAP
    with pytest.raises(ShapeError):
        psnr(a, a[:1])


def test_ssim(generator):
    a = torch.rand(3, 16, 16, 3, generator=generator) * 2 - 1
    assert ssim(a, a) == pytest.approx(1.0)
    noisy = (a + 0.5 * torch.randn(a.shape, generator=generator)).clamp(-1, 1)
    assert ssim(a, noisy) < 0.9
    with pytest.raises(ShapeError):
        ssim(a[:, :8, :8], a[:, :8, :8])


def test_gaussian_window_is_normalized():
    window = gaussian_window(11, 1.5)
    assert window.sum().item() == pytest.approx(1.0)
    assert window.argmax().item() == 5


def test_render_clip_is_deterministic(tiny_spec):
    a, label_a = render_clip(tiny_spec, 3)
    b, label_b = render_clip(tiny_spec, 3)
    assert np.array_equal(a, b) and label_a == label_b
    assert a.shape == (5, 16, 16, 3) and a.dtype == np.float32
    assert 0 <= label_a < len(tiny_spec.motion_kinds)
    other, _ = render_clip(tiny_spec, 4)
    assert not np.array_equal(a, other)


def test_pixels_take_palette_values_and_stay_in_the_energy_band(tiny_spec):
    palette = np.asarray(tiny_spec.palette, dtype=np.float32)
    low, high = palette_energy_band(tiny_spec)
    for index in range(6):
        clip, _ = render_clip(tiny_spec, index)
        colors = np.unique(clip.reshape(-1, 3), axis=0)
        assert all((palette == c).all(axis=1).any() for c in colors)
        energy = float((clip.astype(np.float64) ** 2).mean())
        assert low - 1e-6 <= energy <= high + 1e-6


def test_sprites_move(tiny_spec):
    clip, _ = render_clip(tiny_spec, 0)
    assert any(not np.array_equal(clip[0], clip[i]) for i in range(1, clip.shape[0]))


def test_generated_dataset(synthetic_dataset, tiny_spec):
    manifest = synthetic_dataset
    assert manifest.dims == [5, 16, 16, 3]
    assert manifest.num_classes == 3
    assert len(manifest.clips) == 12
    assert len(manifest.clips_for("val")) == 3
    assert len(manifest.clips_for("train")) == 9
    clip, label = render_clip(tiny_spec, 2)
    entry = manifest.clips[2]
    assert entry.label == label
    assert np.array_equal(load_fpt(manifest.clip_path(entry)).numpy(), clip)
    assert verify_manifest(manifest.root).clips == manifest.clips


def test_generation_is_reproducible(tmp_path, tiny_spec):
    a = generate_synthetic(tiny_spec, tmp_path / "a")
    b = generate_synthetic(tiny_spec, tmp_path / "b")
    assert a.to_json() == b.to_json()
    c = generate_synthetic(tiny_spec.replace(seed=8), tmp_path / "c")
    assert c.spec_hash != a.spec_hash
    assert [e.sha256 for e in c.clips] != [e.sha256 for e in a.clips]


def test_no_validation_split(tmp_path, tiny_spec):
    manifest = generate_synthetic(tiny_spec.replace(clip_count=3, val_fraction=0.0), tmp_path / "d")
    assert manifest.clips_for("val") == []


def test_corrupted_clip_fails_verification(synthetic_dataset):
    path = synthetic_dataset.clip_path(synthetic_dataset.clips[0])
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError):
        verify_manifest(synthetic_dataset.root)


def test_missing_clip_fails_verification(synthetic_dataset):
    synthetic_dataset.clip_path(synthetic_dataset.clips[5]).unlink()
    with pytest.raises(DataError):
        synthetic_dataset.verify()


def test_manifest_errors(tmp_path, synthetic_dataset):
    with pytest.raises(DataError):
        DatasetManifest.read(tmp_path / "missing")
    path = synthetic_dataset.root / "manifest.json"
    data = json.loads(path.read_text())
    data["version"] = 99
    path.write_text(json.dumps(data))
    with pytest.raises(DataError):
        DatasetManifest.read(path)
    path.write_text("{not json")
    with pytest.raises(DataError):
        DatasetManifest.read(path)


def test_spec_validation():
    with pytest.raises(Exception):
        SyntheticSpec(motion_kinds=["wobble"])


def test_ssim_of_an_inverted_clip_is_negative(generator):
    a = torch.rand(2, 16, 16, 3, generator=generator) * 2 - 1
    assert ssim(a, -a) < 0.0


def test_psnr_is_symmetric_and_flip_invariant(generator):
    a = torch.rand(2, 16, 16, 3, generator=generator) * 2 - 1
    b = (a + 0.1 * torch.randn(a.shape, generator=generator)).clamp(-1, 1)
    assert psnr(a, b) == psnr(b, a)
    assert psnr(a.flip(-2), b.flip(-2)) == pytest.approx(psnr(a, b), abs=1e-9)
    assert psnr(a.flip(-3), b.flip(-3)) == pytest.approx(psnr(a, b), abs=1e-9)


def _window_ssim(x, y, size=11, sigma=1.5, c1=0.01 ** 2, c2=0.03 ** 2):
    coords = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    weights = np.outer(g, g) / np.outer(g, g).sum()
    scores = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            px, py = x[i:i + size, j:j + size], y[i:i + size, j:j + size]
            mx, my = (weights * px).sum(), (weights * py).sum()
            vx = (weights * (px - mx) ** 2).sum()
            vy = (weights * (py - my) ** 2).sum()
            cov = (weights * (px - mx) * (py - my)).sum()
            scores.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(scores))


def test_ssim_matches_a_per_window_reference():
    rng = np.random.default_rng(5)
    a = rng.uniform(-1, 1, (13, 14))
    b = np.clip(a + rng.normal(0, 0.3, a.shape), -1, 1)
    expected = _window_ssim((a + 1) / 2, (b + 1) / 2)
    got = ssim(torch.from_numpy(a).view(1, 13, 14, 1), torch.from_numpy(b).view(1, 13, 14, 1))
    assert got == pytest.approx(expected, abs=1e-6)


def test_manifest_rewrite_is_byte_identical(synthetic_dataset, tmp_path):
    original = (synthetic_dataset.root / "manifest.json").read_bytes()
    copy = DatasetManifest.read(synthetic_dataset.root).write(tmp_path / "manifest.json")
    assert copy.read_bytes() == original
    assert DatasetManifest.read(synthetic_dataset.root).to_json().encode("utf-8") == original
