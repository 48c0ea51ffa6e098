import numpy as np
import pytest

from lmtag.persist import (
    ContainerError,
    file_checksum,
    load_container,
    save_container,
    sentence_hash,
)


@pytest.fixture
def sample(tmp_path, np_rng):
    path = tmp_path / "model.bin"
    config = {"kind": "test", "hidden": 7, "nested": {"a": [1, 2]}}
    tensors = {
        "w.matrix": np_rng.normal(size=(4, 3)),
        "w.bias": np_rng.normal(size=(3,)),
        "w.scalar": np.array(2.5),
    }
    save_container(path, config, tensors)
    return path, config, tensors


class TestRoundTrip:
    def test_config_preserved(self, sample):
        path, config, _ = sample
        loaded_cfg, _ = load_container(path)
        assert loaded_cfg == config

    def test_tensors_bit_exact_at_float32(self, sample):
        path, _, tensors = sample
        _, loaded = load_container(path)
        assert set(loaded) == set(tensors)
        for name, arr in tensors.items():
            stored = arr.astype(np.float32)
            assert loaded[name].dtype == np.float64
            assert loaded[name].shape == arr.shape
            # float64 -> float32 -> float64 must reproduce the float32 values
            assert np.array_equal(loaded[name].astype(np.float32), stored)
            assert np.array_equal(loaded[name], stored.astype(np.float64))

    def test_save_is_deterministic(self, sample, tmp_path):
        path, config, tensors = sample
        other = tmp_path / "again.bin"
        save_container(other, config, tensors)
        assert file_checksum(path) == file_checksum(other)

    def test_second_round_trip_is_fixed_point(self, sample, tmp_path):
        path, config, _ = sample
        cfg1, t1 = load_container(path)
        other = tmp_path / "resaved.bin"
        save_container(other, cfg1, t1)
        cfg2, t2 = load_container(other)
        assert cfg1 == cfg2
        assert all(np.array_equal(t1[k], t2[k]) for k in t1)


class TestRejection:
    def test_tampered_payload(self, sample):
        path, _, _ = sample
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ContainerError, match="checksum"):
            load_container(path)

    def test_tampered_digest(self, sample):
        path, _, _ = sample
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(ContainerError, match="checksum"):
            load_container(path)

    def test_truncated(self, sample):
        path, _, _ = sample
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(ContainerError, match="truncated"):
            load_container(path)

    def test_bad_magic(self, tmp_path):
        import hashlib

        path = tmp_path / "bad.bin"
        body = b"NOTMAGIC" + b"\x00" * 16
        path.write_bytes(body + hashlib.sha256(body).digest())
        with pytest.raises(ContainerError, match="magic"):
            load_container(path)

    def test_bad_version(self, sample):
        import hashlib
        import struct

        path, _, _ = sample
        blob = bytearray(path.read_bytes())[:-32]
        struct.pack_into("<I", blob, 8, 99)
        path.write_bytes(bytes(blob) + hashlib.sha256(bytes(blob)).digest())
        with pytest.raises(ContainerError, match="version"):
            load_container(path)


class TestHashes:
    def test_file_checksum_changes_with_content(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.write_bytes(b"one")
        b.write_bytes(b"two")
        assert file_checksum(a) != file_checksum(b)

    def test_sentence_hash_separator_safe(self):
        # joining must not confuse ["ab", "c"] with ["a", "bc"]
        assert sentence_hash(["ab", "c"]) != sentence_hash(["a", "bc"])
        assert sentence_hash(["x"]) == sentence_hash(["x"])
