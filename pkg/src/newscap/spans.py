"""Multi-span reading: overlapping encoder windows over long articles.

Articles up to the window size get one span; longer ones (after the
length cap) get exactly two windows, one anchored at each end, whose
overlap is averaged elementwise when representations are merged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_WINDOW = 512
DEFAULT_LENGTH_CAP = 1000


@dataclass(frozen=True)
class SpanLayout:
    window: int
    length_cap: int
    covered: int
    spans: tuple[tuple[int, int], ...]

    def overlap(self) -> int:
        if len(self.spans) < 2:
            return 0
        (_, end0), (start1, _) = self.spans
        return max(0, end0 - start1)


def split_spans(length: int, window: int = DEFAULT_WINDOW,
                length_cap: int = DEFAULT_LENGTH_CAP) -> SpanLayout:
    if length < 1:
        raise ValueError("cannot split an empty article")
    if window < 1 or length_cap < window:
        raise ValueError(f"need window >= 1 and length_cap >= window, got {window}, {length_cap}")
    covered = min(length, length_cap)
    if covered <= window:
        spans = ((0, covered),)
    else:
        spans = ((0, window), (covered - window, covered))
    return SpanLayout(window, length_cap, covered, spans)


def merge_spans(layout: SpanLayout, reps: list[np.ndarray]) -> np.ndarray:
    """Per-token matrix over the covered range from per-span matrices.

    Tokens inside the overlap get the mean of the two span rows; all
    others come from their single covering span.
    """
    if len(reps) != len(layout.spans):
        raise ValueError(f"expected {len(layout.spans)} span matrices, got {len(reps)}")
    dims = {r.shape[1] for r in reps}
    if len(dims) != 1:
        raise ValueError(f"span feature dimensions differ: {sorted(dims)}")
    for (start, end), rep in zip(layout.spans, reps):
        if rep.shape[0] != end - start:
            raise ValueError(
                f"span [{start},{end}) expects {end - start} rows, got {rep.shape[0]}")
    if len(reps) == 1:
        return reps[0]
    (start0, end0), (start1, end1) = layout.spans
    first, second = reps
    out = np.empty((layout.covered, first.shape[1]), dtype=first.dtype)
    out[:start1] = first[:start1]
    out[end0:] = second[end0 - start1:]
    out[start1:end0] = (first[start1:] + second[:end0 - start1]) / 2
    return out
