"""Cursor localization with a small three-layer CNN, written against numpy.

The network maps a 64x64 luma patch to a 16x16 probability grid::

    conv3x3(1->8) -> ReLU -> maxpool2 -> conv3x3(8->16) -> ReLU -> maxpool2
    -> conv1x1(16->1) -> softmax over all 256 cells

Everything runs in float64 so finite-difference gradient checks are tight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import paramfile
from .errors import ArgumentError, DimensionError
from .frameio import Frame, resize_box

PATCH = 64
GRID = 16
CELL = PATCH // GRID
MAGIC = b"SSCURSOR"

SHAPES = {
    "w1": (8, 1, 3, 3),
    "b1": (8,),
    "w2": (16, 8, 3, 3),
    "b2": (16,),
    "w3": (1, 16, 1, 1),
    "b3": (1,),
}
N_PARAMS = sum(math.prod(s) for s in SHAPES.values())


@dataclass(eq=False)
class CnnParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        for name, shape in SHAPES.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ArgumentError(f"{name} contains non-finite values")
            setattr(self, name, arr)

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in SHAPES])

    @classmethod
    def from_flat(cls, values) -> "CnnParams":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (N_PARAMS,):
            raise DimensionError(f"expected {N_PARAMS} values, got {values.shape}")
        parts, pos = {}, 0
        for name, shape in SHAPES.items():
            size = math.prod(shape)
            parts[name] = values[pos:pos + size].reshape(shape).copy()
            pos += size
        return cls(**parts)

    @classmethod
    def zeros(cls) -> "CnnParams":
        return cls.from_flat(np.zeros(N_PARAMS))

    @classmethod
    def init(cls, seed: int) -> "CnnParams":
        """He-normal convolution weights, zero biases."""
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(0.0, math.sqrt(2 / 9), SHAPES["w1"]),
            b1=np.zeros(8),
            w2=rng.normal(0.0, math.sqrt(2 / 72), SHAPES["w2"]),
            b2=np.zeros(16),
            w3=rng.normal(0.0, math.sqrt(1 / 16), SHAPES["w3"]),
            b3=np.zeros(1),
        )

    def copy(self) -> "CnnParams":
        return CnnParams.from_flat(self.flat())

    def __eq__(self, other):
        if not isinstance(other, CnnParams):
            return NotImplemented
        return np.array_equal(self.flat(), other.flat())

    def save(self, path) -> None:
        paramfile.save_file(path, MAGIC, self.flat())

    @classmethod
    def load(cls, path) -> "CnnParams":
        return cls.from_flat(paramfile.load_file(path, MAGIC, N_PARAMS))


@dataclass(frozen=True, eq=False)
class CursorSample:
    patch: np.ndarray
    label_cell: tuple[int, int]

    def __post_init__(self):
        patch = np.asarray(self.patch, dtype=np.float64)
        if patch.shape != (PATCH, PATCH):
            raise DimensionError(f"patch must be {PATCH}x{PATCH}, got {patch.shape}")
        r, c = self.label_cell
        if not (0 <= r < GRID and 0 <= c < GRID):
            raise ArgumentError(f"label cell {self.label_cell} outside the {GRID}x{GRID} grid")
        object.__setattr__(self, "patch", patch)
        object.__setattr__(self, "label_cell", (int(r), int(c)))

    def __eq__(self, other):
        if not isinstance(other, CursorSample):
            return NotImplemented
        return self.label_cell == other.label_cell and np.array_equal(self.patch, other.patch)


@dataclass(frozen=True)
class CursorPrediction:
    x: int
    y: int
    confidence: float


# -- layers ----------------------------------------------------------------

def _conv3x3(x, w, b):
    """'same' 3x3 convolution; returns output and the im2col matrix for backprop."""
    c, h, wd = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(padded, (3, 3), axis=(1, 2))  # c, h, w, 3, 3
    cols = cols.transpose(1, 2, 0, 3, 4).reshape(h * wd, c * 9)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.T.reshape(w.shape[0], h, wd), cols


def _conv3x3_backward(dout, cols, w):
    o, h, wd = dout.shape
    d2 = dout.reshape(o, h * wd)
    dw = (d2 @ cols).reshape(w.shape)
    db = d2.sum(axis=1)
    # gradient w.r.t. input: correlate padded dout with the flipped kernel
    padded = np.pad(dout, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))  # o, h, w, 3, 3
    win = win.transpose(1, 2, 0, 3, 4).reshape(h * wd, o * 9)
    flipped = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(w.shape[1], -1)
    dx = (win @ flipped.T).T.reshape(w.shape[1], h, wd)
    return dx, dw, db


def _maxpool2(x):
    c, h, w = x.shape
    blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0], arg


def _maxpool2_backward(dout, arg):
    c, h2, w2 = dout.shape
    blocks = np.zeros((c, h2, w2, 4))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    return blocks.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2 * 2, w2 * 2)


def softmax_grid(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _forward(params: CnnParams, patch: np.ndarray):
    x = np.asarray(patch, dtype=np.float64)
    if x.shape != (PATCH, PATCH):
        raise DimensionError(f"patch must be {PATCH}x{PATCH}, got {x.shape}")
    z1, cols1 = _conv3x3(x[None], params.w1, params.b1)
    a1 = np.maximum(z1, 0.0)
    p1, arg1 = _maxpool2(a1)
    z2, cols2 = _conv3x3(p1, params.w2, params.b2)
    a2 = np.maximum(z2, 0.0)
    p2, arg2 = _maxpool2(a2)
    logits = np.tensordot(params.w3[0, :, 0, 0], p2, axes=(0, 0)) + params.b3[0]
    cache = (cols1, z1, arg1, cols2, z2, arg2, p2)
    return logits, cache


def forward_logits(params: CnnParams, patch) -> np.ndarray:
    return _forward(params, patch)[0]


def forward(params: CnnParams, patch) -> np.ndarray:
    """16x16 grid of cursor-location probabilities summing to 1."""
    return softmax_grid(_forward(params, patch)[0])


def loss_and_grad(params: CnnParams, sample: CursorSample) -> tuple[float, CnnParams]:
    logits, (cols1, z1, arg1, cols2, z2, arg2, p2) = _forward(params, sample.patch)
    r, c = sample.label_cell
    shifted = logits - logits.max()
    log_z = math.log(np.exp(shifted).sum())
    loss = log_z - shifted[r, c]

    dlogits = np.exp(shifted - log_z)
    dlogits[r, c] -= 1.0
    dw3 = np.tensordot(p2, dlogits, axes=((1, 2), (0, 1))).reshape(SHAPES["w3"])
    db3 = np.array([dlogits.sum()])
    dp2 = params.w3[0, :, 0, 0][:, None, None] * dlogits[None]
    da2 = _maxpool2_backward(dp2, arg2)
    dz2 = da2 * (z2 > 0)
    dp1, dw2, db2 = _conv3x3_backward(dz2, cols2, params.w2)
    da1 = _maxpool2_backward(dp1, arg1)
    dz1 = da1 * (z1 > 0)
    _, dw1, db1 = _conv3x3_backward(dz1, cols1, params.w1)
    return float(loss), CnnParams(dw1, db1, dw2, db2, dw3, db3)


def train_sgd(dataset: Sequence[CursorSample], epochs: int, lr: float, seed: int,
              init: CnnParams | None = None, losses: list | None = None) -> CnnParams:
    """Plain per-sample SGD with a seeded shuffle each epoch.

    Starts from ``init`` if given, else from ``CnnParams.init(seed)``. When a
    ``losses`` list is passed, the mean training loss of every epoch is appended.
    """
    if not dataset:
        raise ArgumentError("dataset must be non-empty")
    if epochs < 0:
        raise ArgumentError("epochs must be non-negative")
    params = (init if init is not None else CnnParams.init(seed)).copy()
    flat = params.flat()
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        total = 0.0
        for i in rng.permutation(len(dataset)):
            loss, grad = loss_and_grad(CnnParams.from_flat(flat), dataset[i])
            flat = flat - lr * grad.flat()
            total += loss
        if losses is not None:
            losses.append(total / len(dataset))
    return CnnParams.from_flat(flat)


def mean_loss(params: CnnParams, dataset: Sequence[CursorSample]) -> float:
    return float(np.mean([loss_and_grad(params, s)[0] for s in dataset]))


# -- data ------------------------------------------------------------------

# 11x7 arrow cursor: 'X' outline (black), 'o' fill (white), '.' transparent.
ARROW = (
    "X......",
    "XX.....",
    "XoX....",
    "XooX...",
    "XoooX..",
    "XooooX.",
    "XoooooX",
    "XooXXXX",
    "XoX.Xo.",
    "XX..XoX",
    "X....XX",
)
HOTSPOT = (0, 0)


def _arrow_layers():
    outline = np.array([[ch == "X" for ch in row] for row in ARROW])
    fill = np.array([[ch == "o" for ch in row] for row in ARROW])
    return outline, fill


def stamp_cursor(canvas: np.ndarray, top: int, left: int) -> None:
    """Draw the arrow glyph in place with its hotspot at ``(top, left)``."""
    outline, fill = _arrow_layers()
    gh, gw = outline.shape
    region = canvas[top:top + gh, left:left + gw]
    h, w = region.shape
    region[outline[:h, :w]] = 0.0
    region[fill[:h, :w]] = 1.0


def _background(rng: np.random.Generator) -> np.ndarray:
    kind = rng.integers(3)
    if kind == 0:
        bg = rng.random((PATCH, PATCH))
    elif kind == 1:
        bg = np.full((PATCH, PATCH), rng.random())
    else:
        bg = np.full((PATCH, PATCH), rng.random())
        for _ in range(rng.integers(2, 8)):
            y, x = rng.integers(0, PATCH, 2)
            h, w = rng.integers(4, 32, 2)
            bg[y:y + h, x:x + w] = rng.random()
    # screen content is 8-bit
    return np.round(bg * 255) / 255


def synth_dataset(rng: np.random.Generator, n: int) -> list[CursorSample]:
    """Random backgrounds with one arrow cursor; labels are the hotspot cell."""
    if n < 1:
        raise ArgumentError("n must be at least 1")
    gh, gw = len(ARROW), len(ARROW[0])
    samples = []
    for _ in range(n):
        patch = _background(rng)
        top = int(rng.integers(0, PATCH - gh + 1))
        left = int(rng.integers(0, PATCH - gw + 1))
        stamp_cursor(patch, top, left)
        samples.append(CursorSample(patch, ((top + HOTSPOT[0]) // CELL, (left + HOTSPOT[1]) // CELL)))
    return samples


def transform_sample(sample: CursorSample, angle_deg: float, scale: float,
                     shift: tuple[float, float]) -> CursorSample:
    """Rotate/scale about the patch center, then translate by ``shift = (dx, dy)``.

    Nearest-neighbour resampling; out-of-patch lookups take the nearest edge
    pixel. The label cell center is pushed through the same map and clamped.
    """
    theta = math.radians(angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    dx, dy = shift
    center = PATCH / 2

    def fwd(x, y):
        u, v = x - center, y - center
        return (scale * (cos * u - sin * v) + center + dx,
                scale * (sin * u + cos * v) + center + dy)

    # inverse map evaluated at output pixel centers
    ys, xs = np.mgrid[0:PATCH, 0:PATCH] + 0.5
    u, v = (xs - center - dx) / scale, (ys - center - dy) / scale
    src_x = cos * u + sin * v + center
    src_y = -sin * u + cos * v + center
    cols = np.clip(np.floor(src_x).astype(int), 0, PATCH - 1)
    rows = np.clip(np.floor(src_y).astype(int), 0, PATCH - 1)
    patch = sample.patch[rows, cols]

    r, c = sample.label_cell
    lx, ly = fwd((c + 0.5) * CELL, (r + 0.5) * CELL)
    row = min(max(math.floor(ly / CELL), 0), GRID - 1)
    col = min(max(math.floor(lx / CELL), 0), GRID - 1)
    return CursorSample(patch, (row, col))


def augment(sample: CursorSample, rng: np.random.Generator) -> CursorSample:
    angle = rng.uniform(-15.0, 15.0)
    scale = rng.uniform(0.8, 1.2)
    dx, dy = rng.uniform(-8.0, 8.0, 2)
    return transform_sample(sample, angle, scale, (dx, dy))


# -- inference -------------------------------------------------------------

def frame_patch(frame: Frame) -> np.ndarray:
    if frame.width < PATCH or frame.height < PATCH:
        raise DimensionError(
            f"frame {frame.width}x{frame.height} is smaller than {PATCH}x{PATCH}"
        )
    return resize_box(frame.luma, PATCH, PATCH) / 255.0


def detect_cursor(params: CnnParams, frame: Frame) -> CursorPrediction:
    grid = forward(params, frame_patch(frame))
    flat_idx = int(np.argmax(grid))  # first maximum wins ties
    r, c = divmod(flat_idx, GRID)
    x = min(int((c + 0.5) * frame.width / GRID), frame.width - 1)
    y = min(int((r + 0.5) * frame.height / GRID), frame.height - 1)
    return CursorPrediction(x, y, float(grid[r, c]))


def cell_distance(a: tuple[int, int], b: tuple[int, int]) -> int:
    """Chebyshev distance between two grid cells."""
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))
