import pytest
import torch

from shared.checkpoint import load_checkpoint, save_checkpoint
from shared.exceptions import CheckpointFormatError
from shared.model import DTYPE


def test_round_trip_keeps_scores(tiny_model, tiny_dataset, tmp_path):
    path = save_checkpoint(tiny_model, tmp_path / 'model.elm')
    restored = load_checkpoint(path)
    assert restored.config == tiny_model.config
    batch = tiny_dataset.collate(tiny_dataset.queries('dev'))
    with torch.no_grad():
        assert torch.equal(restored.score(batch), tiny_model.score(batch))


def test_round_trip_keeps_pruning_state(tiny_model, tmp_path):
    d_model = tiny_model.config.d_model
    tiny_model.blocks[0].prune(None)
    tiny_model.blocks[1].prune(torch.full((d_model, d_model), 0.25, dtype=DTYPE), trainable=False)
    restored = load_checkpoint(save_checkpoint(tiny_model, tmp_path / 'pruned.elm'))
    assert restored.pruned_layers() == [0, 1]
    assert restored.blocks[0].compensation is None
    assert torch.equal(restored.blocks[1].compensation.detach(), tiny_model.blocks[1].compensation.detach())
    assert not restored.blocks[1].compensation.requires_grad


def test_checkpoint_is_byte_stable(tiny_model, tmp_path):
    first = save_checkpoint(tiny_model, tmp_path / 'a.elm').read_bytes()
    second = save_checkpoint(load_checkpoint(tmp_path / 'a.elm'), tmp_path / 'b.elm').read_bytes()
    assert first == second


def test_bad_magic(tmp_path):
    path = tmp_path / 'bad.elm'
    path.write_bytes(b'NOPE' + b'\0' * 16)
    with pytest.raises(CheckpointFormatError, match='magic'):
        load_checkpoint(path)


@pytest.mark.parametrize('truncate', [
    lambda raw: raw[:6],
    lambda raw: raw[:8],
    lambda raw: raw[:-40],
], ids=['inside-length', 'inside-header', 'inside-tensors'])
def test_truncated_checkpoint(tiny_model, tmp_path, truncate):
    path = save_checkpoint(tiny_model, tmp_path / 'model.elm')
    path.write_bytes(truncate(path.read_bytes()))
    with pytest.raises(CheckpointFormatError, match='truncated'):
        load_checkpoint(path)


def test_trailing_bytes(tiny_model, tmp_path):
    path = save_checkpoint(tiny_model, tmp_path / 'model.elm')
    path.write_bytes(path.read_bytes() + b'\0' * 8)
    with pytest.raises(CheckpointFormatError, match='trailing'):
        load_checkpoint(path)
