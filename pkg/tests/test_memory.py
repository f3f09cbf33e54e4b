import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from screenschema.errors import ArgumentError, DimensionError, ParamsFileError
from screenschema.memory import (LongTermMemory, MemoryConfig, MemoryParams, MemoryState,
                                 attend, attention_weights, init, interpolate, lstm_cell, step)

from oracles import lstm_scalar


def _embeddings(seed, n, q=4, d=8):
    rng = np.random.default_rng(seed)
    return [rng.uniform(-1, 1, (q, d)) for _ in range(n)]


def test_init_deterministic_and_zero_state():
    a, state = init(MemoryConfig(seed=5))
    b, _ = init(MemoryConfig(seed=5))
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), init(MemoryConfig(seed=6))[0].flat())
    assert np.all(state.h == 0) and np.all(state.c == 0)
    assert state.e_prev is None and state.t == 0
    assert np.all(np.abs(a.flat()) <= 0.1)


def test_init_minimal_shapes():
    params, state = init(MemoryConfig(q_tokens=1, dim=1))
    for name, shape in MemoryParams.shapes(1, 1).items():
        assert getattr(params, name).shape == shape
        assert all(s == 1 for s in shape)
    assert state.h.shape == (1,)


def test_init_draw_order_is_field_order():
    # the first draws fill w_ix row-major, then w_fx, ...
    params, _ = init(MemoryConfig(q_tokens=1, dim=2, seed=3))
    rng = np.random.default_rng(3)
    assert np.array_equal(params.w_ix, rng.uniform(-0.1, 0.1, (2, 2)))
    assert np.array_equal(params.w_fx, rng.uniform(-0.1, 0.1, (2, 2)))


def test_config_validation():
    with pytest.raises(ArgumentError):
        MemoryConfig(alpha=1.5)
    with pytest.raises(ArgumentError):
        MemoryConfig(q_tokens=0)


def test_lstm_zero_fixpoint():
    params = MemoryParams.from_flat(np.zeros(init(MemoryConfig())[0].flat().size), 4, 8)
    h, c = lstm_cell(params, np.zeros(32), np.zeros(32), np.zeros(32))
    assert np.all(h == 0) and np.all(c == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_lstm_matches_scalar_oracle(q, d, seed):
    rng = np.random.default_rng(seed)
    params, _ = init(MemoryConfig(q_tokens=q, dim=d, seed=seed))
    n = q * d
    x, h, c = rng.normal(size=n), rng.uniform(-1, 1, n), rng.normal(size=n)
    got_h, got_c = lstm_cell(params, x, h, c)
    wx = {g: getattr(params, f"w_{g}x").tolist() for g in "ifgo"}
    wh = {g: getattr(params, f"w_{g}h").tolist() for g in "ifgo"}
    b = {g: getattr(params, f"b_{g}").tolist() for g in "ifgo"}
    want_h, want_c = lstm_scalar(wx, wh, b, x.tolist(), h.tolist(), c.tolist())
    assert np.max(np.abs(got_h - want_h)) < 1e-12
    assert np.max(np.abs(got_c - want_c)) < 1e-12
    assert np.all(np.abs(got_h) < 1)


def test_lstm_shape_mismatch():
    params, _ = init(MemoryConfig(q_tokens=2, dim=2))
    with pytest.raises(DimensionError):
        lstm_cell(params, np.zeros(3), np.zeros(4), np.zeros(4))


def test_attend_zero_hidden():
    params, _ = init(MemoryConfig())
    assert np.all(attend(params, np.zeros(32)) == 0)


def test_attend_hand_example():
    params, _ = init(MemoryConfig(q_tokens=2, dim=2))
    params.w_q = np.eye(2)
    params.w_k = np.eye(2)
    params.w_v = np.eye(2)
    params.z = np.array([[1.0, 0.0], [0.0, 1.0]])
    h = np.array([1.0, 2.0, 3.0, 4.0])  # rows [1,2] and [3,4]
    s = math.sqrt(2)
    # row 0 scores: z0.[1,2] = 1, z0.[3,4] = 3; row 1: 2, 4
    rows = []
    for a, b in ((1 / s, 3 / s), (2 / s, 4 / s)):
        wa, wb = math.exp(a) / (math.exp(a) + math.exp(b)), math.exp(b) / (math.exp(a) + math.exp(b))
        rows.append([wa * 1 + wb * 3, wa * 2 + wb * 4])
    assert np.max(np.abs(attend(params, h) - np.array(rows))) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_attention_rows_sum_to_one(q, d, seed):
    params, _ = init(MemoryConfig(q_tokens=q, dim=d, seed=seed))
    h = np.random.default_rng(seed).normal(0, 30, q * d)
    w = attention_weights(params, h)
    assert np.max(np.abs(w.sum(axis=1) - 1)) < 1e-9


def test_attend_shape_mismatch():
    params, _ = init(MemoryConfig())
    with pytest.raises(DimensionError):
        attend(params, np.zeros(31))


def test_interpolate_cases():
    e = np.array([[2.0, -0.0]])
    o = np.array([[0.0, 5.0]])
    assert interpolate(e, o, 0.5, 1).tolist() == [[1.0, 2.5]]
    assert interpolate([[2.0]], [[0.0]], 0.5, 1).tolist() == [[1.0]]
    one = interpolate(e, o, 1.0, 3)
    assert one.tobytes() == e.tobytes()
    assert interpolate(e, o, 0.3, 0).tobytes() == e.tobytes()
    assert interpolate(e, o, 0.0, 2).tobytes() == o.tobytes()
    with pytest.raises(ArgumentError):
        interpolate(e, o, -0.1, 1)
    with pytest.raises(DimensionError):
        interpolate(e, np.zeros((2, 2)), 0.5, 1)


def test_first_step_passthrough():
    mem = LongTermMemory(MemoryConfig())
    e = _embeddings(0, 1)[0]
    out = mem.step(e)
    assert out.tobytes() == e.tobytes()
    assert mem.state.t == 1
    assert mem.state.e_prev.tobytes() == e.tobytes()


def test_step_uses_previous_embedding_and_hidden_state():
    params, state = init(MemoryConfig(alpha=0.25))
    e0, e1 = _embeddings(1, 2)
    _, state1 = step(params, state, e0, 0.25)
    e_prime, state2 = step(params, state1, e1, 0.25)
    want = 0.25 * e0 + 0.75 * attend(params, state1.h)
    assert np.array_equal(e_prime, want)
    x = params.proj @ e1.ravel()
    h, c = lstm_cell(params, x, state1.h, state1.c)
    assert np.array_equal(state2.h, h) and np.array_equal(state2.c, c)


def test_step_shape_mismatch():
    params, state = init(MemoryConfig())
    with pytest.raises(DimensionError):
        step(params, state, np.zeros((8, 4)), 0.5)


def test_alpha_one_is_output_inert():
    seqs = _embeddings(2, 6)
    outs = []
    for seed in (1, 2, 99):
        mem = LongTermMemory(MemoryConfig(alpha=1.0, seed=seed))
        outs.append([mem.step(e).tobytes() for e in seqs])
    assert outs[0] == outs[1] == outs[2]
    assert outs[0][1:] == [e.tobytes() for e in seqs[:-1]]


def test_five_step_determinism():
    seqs = _embeddings(3, 5)
    runs = []
    for _ in range(2):
        mem = LongTermMemory(MemoryConfig(seed=11))
        runs.append([mem.step(e).tobytes() for e in seqs])
    assert runs[0] == runs[1]


def test_zero_input_keeps_h_bounded():
    mem = LongTermMemory(MemoryConfig(seed=4))
    mem.state = MemoryState(np.full(32, 0.9), np.full(32, 50.0))
    for _ in range(100):
        mem.step(np.zeros((4, 8)))
        assert np.all(np.abs(mem.state.h) < 1)


def test_reset():
    mem = LongTermMemory(MemoryConfig())
    mem.step(_embeddings(0, 1)[0])
    mem.reset()
    assert mem.state.t == 0 and mem.state.e_prev is None and not mem.state.h.any()


def test_params_file(tmp_path):
    params, _ = init(MemoryConfig(q_tokens=2, dim=3, seed=8))
    params.save(tmp_path / "m.bin")
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:8] == b"SSMEMORY"
    loaded = MemoryParams.load(tmp_path / "m.bin", 2, 3)
    assert np.array_equal(loaded.flat(), params.flat())
    with pytest.raises(ParamsFileError):
        MemoryParams.load(tmp_path / "m.bin", 4, 8)
    (tmp_path / "c.bin").write_bytes(b"SSCURSOR" + raw[8:])
    with pytest.raises(ParamsFileError):
        MemoryParams.load(tmp_path / "c.bin", 2, 3)
