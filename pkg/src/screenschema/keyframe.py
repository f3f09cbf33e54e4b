"""Key-frame scoring by second-order pixel change."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, SizeError
from .frameio import Clip


@dataclass(frozen=True)
class DiffSeries:
    first_order: np.ndarray   # d_t for t = 1..T-1
    second_order: np.ndarray  # g_t for t = 2..T-1


@dataclass(frozen=True)
class KeyframeSelection:
    indices: tuple[int, ...]
    k: int


def _abs_diff_sums(clip: Clip) -> list[int]:
    # integer sums keep scores and tie-breaking exact
    sums = []
    prev = clip.frames[0].luma.astype(np.int32)
    for frame in clip.frames[1:]:
        cur = frame.luma.astype(np.int32)
        sums.append(int(np.abs(cur - prev).sum()))
        prev = cur
    return sums


def first_order_diff(clip: Clip) -> np.ndarray:
    """Mean absolute luma difference between each frame and its predecessor."""
    if len(clip) < 2:
        raise SizeError("need at least 2 frames for a first-order difference")
    npix = clip.width * clip.height
    return np.array(_abs_diff_sums(clip), dtype=np.float64) / npix


def second_order_diff(first_order) -> np.ndarray:
    d = np.asarray(first_order, dtype=np.float64)
    if d.ndim != 1 or len(d) < 2:
        raise SizeError("need a first-order series of length >= 2")
    return np.abs(np.diff(d))


def diff_series(clip: Clip) -> DiffSeries:
    d = first_order_diff(clip)
    return DiffSeries(d, second_order_diff(d))


def select_keyframes(clip: Clip, k: int) -> KeyframeSelection:
    """Pick the ``min(k, T-2)`` frames with the largest second-order change.

    The score of the pair ``(t-1, t)`` is attached to frame ``t``; ties go to
    the earlier frame. Frame 0 is never selected here.
    """
    if k < 1:
        raise ArgumentError("k must be at least 1")
    if len(clip) < 3:
        raise SizeError("need at least 3 frames to select key frames")
    sums = _abs_diff_sums(clip)
    # ranking on integer numerators is equivalent to ranking g_t (common divisor)
    scored = [(abs(sums[j] - sums[j - 1]), j + 1) for j in range(1, len(sums))]
    scored.sort(key=lambda item: (-item[0], item[1]))
    chosen = sorted(t for _, t in scored[:k])
    return KeyframeSelection(tuple(chosen), k)
