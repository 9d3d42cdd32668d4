import io
import struct

import numpy as np
import numpy.testing as npt
import pytest

from missformer.model import MissFormer, ModelConfig, load_checkpoint, restore_model, save_checkpoint
from missformer.serialization import (
    MAGIC,
    DumpFormatError,
    dump_bytes,
    load_tensor,
    read_tensor,
    save_tensor,
    write_tensor,
)


def test_dump_header_layout():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    raw = dump_bytes(arr)
    assert raw[:4] == b"MSTF"
    version, rank = struct.unpack("<II", raw[4:12])
    assert (version, rank) == (1, 2)
    assert struct.unpack("<2Q", raw[12:28]) == (2, 3)
    assert raw[28] == 0  # float32 code
    npt.assert_array_equal(np.frombuffer(raw[29:], dtype="<f4").reshape(2, 3), arr)


def test_dump_round_trip_f32_f64_and_scalar():
    rng = np.random.default_rng(0)
    for arr in (
        rng.standard_normal((3, 4, 5)).astype(np.float32),
        rng.standard_normal((2, 2)).astype(np.float64),
        np.float64(3.25).reshape(()),
    ):
        buf = io.BytesIO(dump_bytes(np.asarray(arr)))
        back = read_tensor(buf)
        assert back.dtype == np.asarray(arr).dtype
        npt.assert_array_equal(back, arr)


def test_dump_file_round_trip(tmp_path):
    arr = np.random.default_rng(1).standard_normal((4, 4)).astype(np.float32)
    path = tmp_path / "t.mstf"
    save_tensor(path, arr)
    npt.assert_array_equal(load_tensor(path), arr)


def test_read_rejects_bad_magic():
    with pytest.raises(DumpFormatError):
        read_tensor(io.BytesIO(b"XXXX" + b"\x00" * 16))


def test_read_rejects_truncated_payload():
    arr = np.ones((4, 4), dtype=np.float32)
    raw = dump_bytes(arr)[:-8]
    with pytest.raises(DumpFormatError):
        read_tensor(io.BytesIO(raw))


def test_write_rejects_integer_arrays():
    with pytest.raises(DumpFormatError):
        dump_bytes(np.arange(4))


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig.micro()
    model = MissFormer(cfg, seed=11)
    path = str(tmp_path / "ckpt")
    save_checkpoint(path, model, extra={"epoch": 7})
    config, extra, arrays = load_checkpoint(path)
    assert config == cfg
    assert extra == {"epoch": 7}
    for name, p in model.named_parameters():
        npt.assert_array_equal(arrays[name], p.data)

    restored, extra2 = restore_model(path)
    assert extra2 == {"epoch": 7}
    from missformer import Tensor

    img = Tensor(np.random.default_rng(2).standard_normal((1, 3, 32, 32)).astype(np.float32))
    npt.assert_array_equal(restored(img).data, model(img).data)
