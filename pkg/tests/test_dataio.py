import json

import numpy as np
import pytest

from newscap.binio import FormatError
from newscap.dataio import (
    DatasetRecord,
    load_checkpoint,
    load_dataset,
    read_features,
    save_checkpoint,
    save_dataset,
    write_features,
)


def write_lines(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


GOOD = {"id": "r1", "split": "train", "article": "text here", "caption": "a cap",
        "image_feature": 0}


class TestLoadDataset:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(path, [GOOD])
        records = load_dataset(path)
        assert records[0] == DatasetRecord(id="r1", article="text here",
                                           caption="a cap", split="train",
                                           image_feature=0)

    def test_missing_caption_cites_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        bad = {k: v for k, v in GOOD.items() if k != "caption"}
        write_lines(path, [GOOD, {**bad, "id": "r2"}])
        with pytest.raises(ValueError, match=r":2.*caption"):
            load_dataset(path)

    def test_duplicate_id_in_split(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(path, [GOOD, GOOD])
        with pytest.raises(ValueError, match="duplicate id"):
            load_dataset(path)

    def test_same_id_different_splits_allowed(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_lines(path, [GOOD, {**GOOD, "split": "test"}])
        assert len(load_dataset(path)) == 2

    def test_malformed_json_cites_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(GOOD) + "\n{oops\n", encoding="utf-8")
        with pytest.raises(ValueError, match=":2"):
            load_dataset(path)

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "d.jsonl"
        records = [DatasetRecord(id="a", article="x", caption="y", image_feature=3)]
        save_dataset(records, path)
        assert load_dataset(path) == records


class TestFeatures:
    def test_roundtrip_bitwise(self, tmp_path):
        path = tmp_path / "f.jgft"
        matrix = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
        write_features(path, matrix)
        back = read_features(path)
        assert back.tobytes() == matrix.tobytes()
        assert back.shape == (5, 7)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "f.jgft"
        path.write_bytes(b"XXXX" + b"\x00" * 24)
        with pytest.raises(FormatError, match="magic"):
            read_features(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "f.jgft"
        write_features(path, np.ones((2, 3), dtype=np.float32))
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(FormatError, match="truncated"):
            read_features(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "f.jgft"
        write_features(path, np.ones((2, 3), dtype=np.float32))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            read_features(path)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "c.jgck"
        rng = np.random.default_rng(1)
        params = {"w": rng.normal(size=(3, 4)).astype(np.float32),
                  "b": rng.normal(size=(4,)).astype(np.float32)}
        m = {k: np.zeros_like(v) for k, v in params.items()}
        v = {k: np.ones_like(p) for k, p in params.items()}
        meta = {"step": 7, "seed": 0, "vocab_hash": "abc", "adam_t": 7}
        save_checkpoint(path, {"d_model": 4}, params, m, v, meta)
        config, params2, m2, v2, meta2 = load_checkpoint(path)
        assert config == {"d_model": 4}
        assert meta2 == meta
        assert params2["w"].tobytes() == params["w"].tobytes()
        assert v2["b"].tobytes() == v["b"].tobytes()

    def test_save_is_byte_stable(self, tmp_path):
        params = {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}
        m = {"w": np.zeros((2, 3), dtype=np.float32)}
        v = {"w": np.zeros((2, 3), dtype=np.float32)}
        a, b = tmp_path / "a.jgck", tmp_path / "b.jgck"
        save_checkpoint(a, {"x": 1}, params, m, v, {"step": 0})
        save_checkpoint(b, {"x": 1}, params, m, v, {"step": 0})
        assert a.read_bytes() == b.read_bytes()
