"""Long-term memory across clips: LSTM state read by learned-query cross-attention.

Per clip ``t`` the generator produces an embedding ``E_t`` (Q x D). The
memory folds ``Project(flatten(E_t))`` into an LSTM state and, from the
second clip on, blends the previous embedding with an attention read of the
hidden state::

    O = softmax((z W_Q)(H W_K)^T / sqrt(D)) (H W_V),   H = reshape(h, Q, D)
    E' = alpha * E + (1 - alpha) * O

Forward-only; parameters are seeded-random or loaded from a params file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import paramfile
from .errors import ArgumentError, DimensionError

MAGIC = b"SSMEMORY"
INIT_RANGE = 0.1


@dataclass(frozen=True)
class MemoryConfig:
    q_tokens: int = 4
    dim: int = 8
    alpha: float = 0.5
    seed: int = 42

    def __post_init__(self):
        if self.q_tokens < 1 or self.dim < 1:
            raise ArgumentError("q_tokens and dim must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ArgumentError(f"alpha {self.alpha} outside [0, 1]")

    @property
    def width(self) -> int:
        return self.q_tokens * self.dim


@dataclass(eq=False)
class MemoryParams:
    # field order is the draw order used by init() and the params-file layout
    w_ix: np.ndarray
    w_fx: np.ndarray
    w_gx: np.ndarray
    w_ox: np.ndarray
    w_ih: np.ndarray
    w_fh: np.ndarray
    w_gh: np.ndarray
    w_oh: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    z: np.ndarray
    proj: np.ndarray

    @staticmethod
    def shapes(q: int, d: int) -> dict[str, tuple[int, ...]]:
        n = q * d
        out = {}
        for name in ("w_ix", "w_fx", "w_gx", "w_ox", "w_ih", "w_fh", "w_gh", "w_oh"):
            out[name] = (n, n)
        for name in ("b_i", "b_f", "b_g", "b_o"):
            out[name] = (n,)
        for name in ("w_q", "w_k", "w_v"):
            out[name] = (d, d)
        out["z"] = (q, d)
        out["proj"] = (n, n)
        return out

    @property
    def q_tokens(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, f.name).ravel() for f in fields(self)])

    @classmethod
    def from_flat(cls, values, q: int, d: int) -> "MemoryParams":
        values = np.asarray(values, dtype=np.float64)
        shapes = cls.shapes(q, d)
        total = sum(math.prod(s) for s in shapes.values())
        if values.shape != (total,):
            raise DimensionError(f"expected {total} values for Q={q}, D={d}, got {values.shape}")
        parts, pos = {}, 0
        for name, shape in shapes.items():
            size = math.prod(shape)
            parts[name] = values[pos:pos + size].reshape(shape).copy()
            pos += size
        return cls(**parts)

    def save(self, path) -> None:
        paramfile.save_file(path, MAGIC, self.flat())

    @classmethod
    def load(cls, path, q: int, d: int) -> "MemoryParams":
        shapes = cls.shapes(q, d)
        total = sum(math.prod(s) for s in shapes.values())
        return cls.from_flat(paramfile.load_file(path, MAGIC, total), q, d)


@dataclass
class MemoryState:
    h: np.ndarray
    c: np.ndarray
    e_prev: np.ndarray | None = None
    t: int = 0

    @classmethod
    def zeros(cls, q: int, d: int) -> "MemoryState":
        return cls(np.zeros(q * d), np.zeros(q * d))


def init(config: MemoryConfig) -> tuple[MemoryParams, MemoryState]:
    rng = np.random.default_rng(config.seed)
    shapes = MemoryParams.shapes(config.q_tokens, config.dim)
    params = MemoryParams(**{
        name: rng.uniform(-INIT_RANGE, INIT_RANGE, shape) for name, shape in shapes.items()
    })
    return params, MemoryState.zeros(config.q_tokens, config.dim)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _check_vec(name, v, n):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise DimensionError(f"{name} must have shape ({n},), got {v.shape}")
    return v


def lstm_cell(params: MemoryParams, x, h, c) -> tuple[np.ndarray, np.ndarray]:
    n = params.q_tokens * params.dim
    x, h, c = (_check_vec(name, v, n) for name, v in (("x", x), ("h", h), ("c", c)))
    i = _sigmoid(params.w_ix @ x + params.w_ih @ h + params.b_i)
    f = _sigmoid(params.w_fx @ x + params.w_fh @ h + params.b_f)
    g = np.tanh(params.w_gx @ x + params.w_gh @ h + params.b_g)
    o = _sigmoid(params.w_ox @ x + params.w_oh @ h + params.b_o)
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def attention_weights(params: MemoryParams, h) -> np.ndarray:
    q, d = params.q_tokens, params.dim
    hidden = _check_vec("h", h, q * d).reshape(q, d)
    scores = (params.z @ params.w_q) @ (hidden @ params.w_k).T / math.sqrt(d)
    scores = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    return weights / weights.sum(axis=1, keepdims=True)


def attend(params: MemoryParams, h) -> np.ndarray:
    """Cross-attention read of the hidden state with the learned query ``z``."""
    q, d = params.q_tokens, params.dim
    hidden = _check_vec("h", h, q * d).reshape(q, d)
    return attention_weights(params, h) @ (hidden @ params.w_v)


def interpolate(e, o, alpha: float, t: int) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha {alpha} outside [0, 1]")
    e = np.asarray(e, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    if e.shape != o.shape:
        raise DimensionError(f"shape mismatch {e.shape} vs {o.shape}")
    if t == 0 or alpha == 1.0:
        # exact copy; alpha*e + 0*o would turn -0.0 into 0.0
        return e.copy()
    if alpha == 0.0:
        return o.copy()
    return alpha * e + (1.0 - alpha) * o


def step(params: MemoryParams, state: MemoryState, e_t, alpha: float
         ) -> tuple[np.ndarray, MemoryState]:
    """Advance one clip.

    Returns the embedding to feed the next generation and the new state.
    """
    q, d = params.q_tokens, params.dim
    e_t = np.asarray(e_t, dtype=np.float64)
    if e_t.shape != (q, d):
        raise DimensionError(f"embedding must be {q}x{d}, got {e_t.shape}")
    if state.t == 0:
        e_prime = e_t.copy()
    else:
        e_prime = interpolate(state.e_prev, attend(params, state.h), alpha, state.t)
    x = params.proj @ e_t.ravel()
    h, c = lstm_cell(params, x, state.h, state.c)
    return e_prime, MemoryState(h, c, e_t.copy(), state.t + 1)


@dataclass
class LongTermMemory:
    """One session's memory: config, parameters and the running state."""

    config: MemoryConfig
    params: MemoryParams = field(default=None)  # type: ignore[assignment]
    state: MemoryState = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        seeded_params, zero_state = init(self.config)
        if self.params is None:
            self.params = seeded_params
        if self.state is None:
            self.state = zero_state

    def step(self, e_t) -> np.ndarray:
        e_prime, self.state = step(self.params, self.state, e_t, self.config.alpha)
        return e_prime

    def reset(self) -> None:
        self.state = MemoryState.zeros(self.config.q_tokens, self.config.dim)
