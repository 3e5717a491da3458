import numpy as np
import pytest

from zira_lab.checkpoint import from_bytes, load_checkpoint, save_checkpoint, to_bytes
from zira_lab.errors import CheckpointError


def test_roundtrip_bitwise(pretrained, tmp_path):
    rng = np.random.default_rng(0)
    for t in pretrained.rdb_parameters().values():
        t.data = rng.normal(size=t.shape)
    save_checkpoint(tmp_path / "m.ckpt", pretrained, task_index=2)
    model, header = load_checkpoint(tmp_path / "m.ckpt")
    assert header["task_index"] == 2 and header["seed"] == 0
    for name, t in pretrained.named_parameters().items():
        assert t.data.tobytes() == model.named_parameters()[name].data.tobytes()
    assert to_bytes(model, 2) == (tmp_path / "m.ckpt").read_bytes()
    assert model.dims == pretrained.dims
    assert model.fused is not None


def test_corruption_detected(pretrained):
    buf = bytearray(to_bytes(pretrained))
    with pytest.raises(CheckpointError):
        from_bytes(b"NOTACKPT" + bytes(buf[8:]))
    buf[100] ^= 0xFF
    with pytest.raises(CheckpointError):
        from_bytes(bytes(buf))
    with pytest.raises(CheckpointError):
        from_bytes(to_bytes(pretrained)[:50])


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")
