"""Frame loading, PGM codec, and simple resampling.

Frames are stored as read-only ``uint8`` arrays of shape ``(height, width)``.
Screen recordings are consumed as directories of binary PGM files named
``frame_0000.pgm``, ``frame_0001.pgm``, ...
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, DecodeError, DimensionError, SequenceError

FRAME_NAME = re.compile(r"^frame_(\d{4,})\.pgm$")


def round_half_up(value) -> int:
    """Round a real (ideally a Fraction) to the nearest integer, ties upward."""
    return math.floor(Fraction(value) + Fraction(1, 2))


@dataclass(frozen=True, eq=False)
class Frame:
    luma: np.ndarray
    timestamp_ms: int = 0
    index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.luma)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"frame must be a non-empty 2-D raster, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ArgumentError("luma values must lie in 0..255")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "luma", arr)
        if self.timestamp_ms < 0:
            raise ArgumentError("timestamp_ms must be non-negative")

    @property
    def width(self) -> int:
        return self.luma.shape[1]

    @property
    def height(self) -> int:
        return self.luma.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.timestamp_ms == other.timestamp_ms
            and self.index == other.index
            and np.array_equal(self.luma, other.luma)
        )

    def __hash__(self):
        return hash((self.timestamp_ms, self.index, self.luma.tobytes()))

    @classmethod
    def from_rgb(cls, rgb, timestamp_ms: int = 0, index: int = 0) -> "Frame":
        rgb = np.asarray(rgb, dtype=np.int64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise DimensionError(f"expected an (h, w, 3) array, got {rgb.shape}")
        # integer form of round-half-up(0.299r + 0.587g + 0.114b)
        weighted = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
        return cls((weighted + 500) // 1000, timestamp_ms, index)


@dataclass(frozen=True)
class Clip:
    clip_id: str
    frames: tuple[Frame, ...]
    start_ms: int = field(default=None)  # type: ignore[assignment]
    end_ms: int = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not frames:
            raise SequenceError(f"clip {self.clip_id!r} has no frames")
        shape = frames[0].luma.shape
        for prev, cur in zip(frames, frames[1:]):
            if cur.luma.shape != shape:
                raise DimensionError(
                    f"frame {cur.index} is {cur.width}x{cur.height}, "
                    f"expected {shape[1]}x{shape[0]}"
                )
            if cur.index <= prev.index:
                raise SequenceError("frame indices must be strictly increasing")
            if cur.timestamp_ms < prev.timestamp_ms:
                raise SequenceError("frame timestamps must be non-decreasing")
        if self.start_ms is None:
            object.__setattr__(self, "start_ms", frames[0].timestamp_ms)
        if self.end_ms is None:
            object.__setattr__(self, "end_ms", frames[-1].timestamp_ms)
        if not self.start_ms <= frames[0].timestamp_ms <= frames[-1].timestamp_ms <= self.end_ms:
            raise ArgumentError("clip span must enclose all frame timestamps")

    def __len__(self):
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


def to_luma(r: int, g: int, b: int) -> int:
    """BT.601 luma of one 8-bit RGB triple, rounded half up."""
    for v in (r, g, b):
        if not 0 <= v <= 255:
            raise ArgumentError(f"channel value {v} outside 0..255")
    return (299 * r + 587 * g + 114 * b + 500) // 1000


# -- PGM codec -------------------------------------------------------------

def encode_pgm(frame: Frame) -> bytes:
    header = f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + frame.luma.tobytes()


def decode_pgm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    """Decode a binary (P5) PGM with maxval 255 into an ``(h, w)`` array."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"{name}: truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise DecodeError(f"{name}: missing separator after PGM header")
    pos += 1

    if tokens[0] != b"P5":
        raise DecodeError(f"{name}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DecodeError(f"{name}: non-numeric PGM header field") from None
    if width < 1 or height < 1:
        raise DecodeError(f"{name}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise DecodeError(f"{name}: maxval {maxval} unsupported (need 255)")
    raster = data[pos:]
    if len(raster) != width * height:
        raise DecodeError(
            f"{name}: raster has {len(raster)} bytes, expected {width * height}"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def read_pgm(path, timestamp_ms: int = 0, index: int = 0) -> Frame:
    path = Path(path)
    return Frame(decode_pgm(path.read_bytes(), path.name), timestamp_ms, index)


def write_pgm(path, frame: Frame) -> None:
    Path(path).write_bytes(encode_pgm(frame))


def frame_filename(index: int) -> str:
    return f"frame_{index:04d}.pgm"


def write_frame_directory(path, frames: Sequence[Frame]) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        write_pgm(path / frame_filename(i), frame)


def load_frame_directory(path, fps=10) -> Clip:
    """Load ``frame_NNNN.pgm`` files from ``path`` as a :class:`Clip`.

    Timestamps are ``round(index * 1000 / fps)`` milliseconds. Files that do
    not match the naming pattern are ignored.
    """
    path = Path(path)
    # decimal text of a float fps, not its binary expansion
    fps = Fraction(str(fps)) if isinstance(fps, float) else Fraction(fps)
    if fps <= 0:
        raise ArgumentError("fps must be positive")
    if not path.is_dir():
        raise SequenceError(f"{path}: not a directory")

    found = {}
    for entry in os.listdir(path):
        m = FRAME_NAME.match(entry)
        if m:
            found[int(m.group(1))] = entry
    if not found:
        raise SequenceError(f"{path}: no frame_NNNN.pgm files")
    for i in range(max(found) + 1):
        if i not in found:
            raise SequenceError(f"{path}: missing {frame_filename(i)}")

    frames = []
    for i in range(len(found)):
        ts = round_half_up(i * 1000 / fps)
        frames.append(read_pgm(path / found[i], timestamp_ms=ts, index=i))
    shape = frames[0].luma.shape
    for i, f in enumerate(frames):
        if f.luma.shape != shape:
            raise DimensionError(
                f"{found[i]} is {f.width}x{f.height}, expected {shape[1]}x{shape[0]}"
            )
    return Clip(path.resolve().name, tuple(frames))


# -- sampling --------------------------------------------------------------

def frame_sampler(clip_or_length, n: int = 10) -> list[int]:
    """Uniformly spaced frame indices, always including the first and last."""
    if n < 1:
        raise ArgumentError("n must be at least 1")
    total = clip_or_length if isinstance(clip_or_length, int) else len(clip_or_length)
    if total <= n:
        return list(range(total))
    if n == 1:
        return [0]
    return [round_half_up(Fraction(i * (total - 1), n - 1)) for i in range(n)]


def downsample(frame: Frame, factor: int) -> Frame:
    """Box-filter by an integer factor; trailing rows/columns are dropped."""
    if factor < 1:
        raise ArgumentError("factor must be at least 1")
    if factor > frame.width or factor > frame.height:
        raise ArgumentError(
            f"factor {factor} exceeds frame size {frame.width}x{frame.height}"
        )
    if factor == 1:
        return frame
    h, w = frame.height // factor, frame.width // factor
    block = frame.luma[: h * factor, : w * factor].astype(np.int64)
    sums = block.reshape(h, factor, w, factor).sum(axis=(1, 3))
    area = factor * factor
    return Frame((2 * sums + area) // (2 * area), frame.timestamp_ms, frame.index)


def resize_box(luma: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Area-average resample to ``(out_h, out_w)``; output is float64 luma.

    Each output cell averages the source rows ``[floor(i*H/out_h), floor((i+1)*H/out_h))``
    and likewise for columns. Requires the source to be at least as large.
    """
    src = np.asarray(luma, dtype=np.float64)
    H, W = src.shape
    if H < out_h or W < out_w:
        raise DimensionError(f"cannot box-resize {W}x{H} up to {out_w}x{out_h}")
    rows = (np.arange(out_h + 1) * H) // out_h
    cols = (np.arange(out_w + 1) * W) // out_w
    # integral image gives exact box sums
    integral = np.zeros((H + 1, W + 1))
    integral[1:, 1:] = src.cumsum(0).cumsum(1)
    r0, r1 = rows[:-1, None], rows[1:, None]
    c0, c1 = cols[None, :-1], cols[None, 1:]
    sums = integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]
    return sums / ((r1 - r0) * (c1 - c0))
