import json

import numpy as np
import pytest

from isalt.datagen import TrajectoryDataset
from isalt.exceptions import DatasetFormatError
from isalt.io import MAGIC, read_dataset, sha256, write_dataset


@pytest.fixture
def toy(rng):
    return TrajectoryDataset(rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 5, 2)),
                             5e-4, 20, "lorenz-3d", seed=77)


def test_roundtrip_is_bit_exact(toy, tmp_path):
    path = write_dataset(toy, tmp_path / "toy.bin")
    back = read_dataset(path)
    assert back.identical(toy)
    meta = json.loads((tmp_path / "toy.bin.json").read_text())
    assert (meta["M"], meta["N"], meta["d"], meta["m"], meta["gap"]) == (2, 5, 3, 2, 20)
    assert meta["delta"] == pytest.approx(0.01)


def test_rewrite_is_byte_identical(toy, tmp_path):
    a = write_dataset(toy, tmp_path / "a.bin", sidecar=False)
    b = write_dataset(read_dataset(a), tmp_path / "b.bin", sidecar=False)
    assert sha256(a) == sha256(b)
    assert not (tmp_path / "a.bin.json").exists()


def test_corrupted_magic(toy, tmp_path):
    path = write_dataset(toy, tmp_path / "toy.bin")
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="magic"):
        read_dataset(path)


@pytest.mark.parametrize("cut", [1, 8, 100])
def test_truncated_payload(toy, tmp_path, cut):
    path = write_dataset(toy, tmp_path / "toy.bin")
    raw = path.read_bytes()
    path.write_bytes(raw[:-cut])
    with pytest.raises(DatasetFormatError, match="truncated"):
        read_dataset(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "short.bin"
    path.write_bytes(MAGIC + b"\x01\x00")
    with pytest.raises(DatasetFormatError):
        read_dataset(path)


def test_trailing_bytes(toy, tmp_path):
    path = write_dataset(toy, tmp_path / "toy.bin")
    path.write_bytes(path.read_bytes() + b"\0" * 8)
    with pytest.raises(DatasetFormatError, match="trailing"):
        read_dataset(path)


def test_unsupported_version(toy, tmp_path):
    path = write_dataset(toy, tmp_path / "toy.bin")
    raw = bytearray(path.read_bytes())
    raw[len(MAGIC)] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="version"):
        read_dataset(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "absent.bin")


def test_payload_is_little_endian_trajectory_major(toy, tmp_path):
    raw = write_dataset(toy, tmp_path / "toy.bin").read_bytes()
    nx = toy.X.size * 8
    tail = np.frombuffer(raw[len(raw) - nx - toy.dB.size * 8:], dtype="<f8")
    np.testing.assert_array_equal(tail[:toy.X.size], toy.X.ravel())
    np.testing.assert_array_equal(tail[toy.X.size:], toy.dB.ravel())
