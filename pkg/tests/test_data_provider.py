import pytest
import torch

from data_provider import ClipDataProvider
from errors import DataError


def test_batches_have_clip_shape(synthetic_dataset):
    provider = ClipDataProvider(synthetic_dataset, batch_size=4, seed=0)
    clips, labels = provider.get_next_batch()
    assert clips.shape == (4, 5, 16, 16, 3)
    assert labels.shape == (4,) and labels.dtype == torch.long
    assert len(provider) == 9


def test_epoch_covers_the_split_then_wraps(synthetic_dataset):
    provider = ClipDataProvider(synthetic_dataset, batch_size=3, seed=0, split="train")
    first_epoch = torch.cat([provider.get_next_batch()[0] for _ in range(3)])
    assert provider.epoch == 0
    all_clips, _ = provider.load_all()
    # every training clip exactly once
    matches = (first_epoch.unsqueeze(1) == all_clips.unsqueeze(0)).flatten(2).all(-1)
    assert matches.sum(1).tolist() == [1] * 9
    assert matches.sum(0).tolist() == [1] * 9
    provider.get_next_batch()
    assert provider.epoch == 1


def test_same_seed_same_batches(synthetic_dataset):
    a = ClipDataProvider(synthetic_dataset, batch_size=2, seed=3)
    b = ClipDataProvider(synthetic_dataset, batch_size=2, seed=3)
    for _ in range(6):
        assert torch.equal(a.get_next_batch()[0], b.get_next_batch()[0])


def test_state_dict_resume(synthetic_dataset):
    reference = ClipDataProvider(synthetic_dataset, batch_size=4, seed=1)
    for _ in range(3):
        reference.get_next_batch()
    state = reference.state_dict()
    expected = [reference.get_next_batch()[1] for _ in range(5)]

    resumed = ClipDataProvider(synthetic_dataset, batch_size=4, seed=99)
    resumed.load_state_dict(state)
    assert resumed.current_batch == 3
    assert all(torch.equal(resumed.get_next_batch()[1], labels) for labels in expected)


def test_state_errors(synthetic_dataset):
    provider = ClipDataProvider(synthetic_dataset, batch_size=1)
    with pytest.raises(DataError):
        provider.load_state_dict({"cursor": 0})
    val = ClipDataProvider(synthetic_dataset, batch_size=1, split="val")
    with pytest.raises(DataError):
        val.load_state_dict(provider.state_dict())


def test_empty_split(synthetic_dataset):
    with pytest.raises(DataError):
        ClipDataProvider(synthetic_dataset, batch_size=1, split="test")
    with pytest.raises(ValueError):
        ClipDataProvider(synthetic_dataset, batch_size=0)


def test_reads_manifest_paths(synthetic_dataset):
    provider = ClipDataProvider(synthetic_dataset.root / "manifest.json", batch_size=2, split=None)
    assert len(provider) == 12
