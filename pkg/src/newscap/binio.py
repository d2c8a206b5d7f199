"""Little-endian binary primitives shared by the on-disk formats."""

from __future__ import annotations

import struct

import numpy as np


class FormatError(ValueError):
    """Raised for bad magic numbers, truncation, or size mismatches."""


def write_u32(fh, value: int):
    fh.write(struct.pack("<I", value))


def read_u32(fh) -> int:
    data = fh.read(4)
    if len(data) != 4:
        raise FormatError("truncated file: expected 4 more bytes")
    return struct.unpack("<I", data)[0]


def write_lp_str(fh, text: str):
    data = text.encode("utf-8")
    write_u32(fh, len(data))
    fh.write(data)


def read_lp_str(fh) -> str:
    n = read_u32(fh)
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated string: expected {n} bytes")
    return data.decode("utf-8")


def write_f32_array(fh, arr: np.ndarray):
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32_array(fh, count: int) -> np.ndarray:
    data = fh.read(4 * count)
    if len(data) != 4 * count:
        raise FormatError(f"truncated payload: expected {4 * count} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4").astype(np.float32)


def expect_magic(fh, magic: bytes):
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")
