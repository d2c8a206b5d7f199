"""Dataset records, feature matrices, and checkpoint persistence.

Datasets are JSONL, one record per line, fields: id, split, article,
caption, image_feature (row index into the split's feature matrix) and
an optional annotations object with gold entities/POS for caption and
article.  Feature files ("JGFT") hold a float32 row-major matrix;
checkpoints ("JGCK") hold a canonical-JSON config blob plus named
tensors, written in sorted order so the files are byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import (
    FormatError,
    expect_magic,
    read_f32_array,
    read_lp_str,
    read_u32,
    write_f32_array,
    write_lp_str,
    write_u32,
)

FEATURE_MAGIC = b"JGFT"
CHECKPOINT_MAGIC = b"JGCK"
CHECKPOINT_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class DatasetRecord:
    id: str
    article: str
    caption: str
    split: str = "train"
    image_feature: int | None = None
    annotations: dict | None = None


def load_dataset(path) -> list[DatasetRecord]:
    """Parse and validate a JSONL dataset; errors cite the line number."""
    records = []
    seen: dict[tuple[str, str], int] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: malformed JSON: {exc}") from None
        for required in ("id", "article", "caption"):
            if required not in obj:
                raise ValueError(f"{path}:{lineno}: missing required field {required!r}")
        split = obj.get("split", "train")
        if split not in SPLITS:
            raise ValueError(f"{path}:{lineno}: unknown split {split!r}")
        key = (split, str(obj["id"]))
        if key in seen:
            raise ValueError(
                f"{path}:{lineno}: duplicate id {obj['id']!r} in split {split!r} "
                f"(first seen at line {seen[key]})")
        seen[key] = lineno
        records.append(DatasetRecord(
            id=str(obj["id"]),
            article=obj["article"],
            caption=obj["caption"],
            split=split,
            image_feature=obj.get("image_feature"),
            annotations=obj.get("annotations"),
        ))
    return records


def save_dataset(records, path):
    lines = []
    for rec in records:
        if isinstance(rec, DatasetRecord):
            obj = {"id": rec.id, "split": rec.split, "article": rec.article,
                   "caption": rec.caption}
            if rec.image_feature is not None:
                obj["image_feature"] = rec.image_feature
            if rec.annotations is not None:
                obj["annotations"] = rec.annotations
        else:
            obj = rec
        lines.append(json.dumps(obj))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_features(path, matrix: np.ndarray):
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        write_u32(fh, matrix.shape[0])
        write_u32(fh, matrix.shape[1])
        write_f32_array(fh, matrix)


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        expect_magic(fh, FEATURE_MAGIC)
        count = read_u32(fh)
        dim = read_u32(fh)
        data = read_f32_array(fh, count * dim)
        trailing = fh.read(1)
    if trailing:
        raise FormatError("feature file has trailing bytes beyond count*dim payload")
    return data.reshape(count, dim)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_named_tensors(fh, tensors: dict[str, np.ndarray]):
    write_u32(fh, len(tensors))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float32)
        write_lp_str(fh, name)
        write_u32(fh, arr.ndim)
        for extent in arr.shape:
            write_u32(fh, extent)
        write_f32_array(fh, arr)


def _read_named_tensors(fh) -> dict[str, np.ndarray]:
    count = read_u32(fh)
    tensors = {}
    for _ in range(count):
        name = read_lp_str(fh)
        rank = read_u32(fh)
        shape = tuple(read_u32(fh) for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        tensors[name] = read_f32_array(fh, size).reshape(shape)
    return tensors


def save_checkpoint(path, config: dict, params: dict, opt_m: dict, opt_v: dict,
                    meta: dict):
    """meta carries step/seed/vocab hash/adam counter; config the model dims."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        write_u32(fh, CHECKPOINT_VERSION)
        write_lp_str(fh, canonical_json({"config": config, "meta": meta}))
        tensors = dict(params)
        tensors.update({f"opt.m/{k}": v for k, v in opt_m.items()})
        tensors.update({f"opt.v/{k}": v for k, v in opt_v.items()})
        _write_named_tensors(fh, tensors)


def load_checkpoint(path):
    """Returns (config, params, opt_m, opt_v, meta)."""
    with open(path, "rb") as fh:
        expect_magic(fh, CHECKPOINT_MAGIC)
        version = read_u32(fh)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        blob = json.loads(read_lp_str(fh))
        tensors = _read_named_tensors(fh)
    params, opt_m, opt_v = {}, {}, {}
    for name, arr in tensors.items():
        if name.startswith("opt.m/"):
            opt_m[name[len("opt.m/"):]] = arr
        elif name.startswith("opt.v/"):
            opt_v[name[len("opt.v/"):]] = arr
        else:
            params[name] = arr
    return blob["config"], params, opt_m, opt_v, blob["meta"]
