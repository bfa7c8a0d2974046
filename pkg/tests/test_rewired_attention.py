import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshpose.errors import InvalidInputError
from meshpose.rewired_attention import (ARTICULATION, QKV, SOURCE, FrameTensor, attention_weights,
                                        build_attention_set, joint_attention,
                                        multihead_attention, rewired_attention, self_attention)


def qkv(rng, n, hw, c):
    return QKV(*(rng.normal(size=(n, hw, c)) for _ in range(3)))


def brute_attention(q, K, V):
    """Explicit per-row softmax sum."""
    out = np.zeros((len(q), V.shape[1]))
    for i, qi in enumerate(q):
        logits = [float(qi @ k) / np.sqrt(len(qi)) for k in K]
        m = max(logits)
        w = [np.exp(x - m) for x in logits]
        z = sum(w)
        for wj, vj in zip(w, V):
            out[i] += wj / z * vj
    return out


shapes = st.tuples(st.integers(1, 5), st.integers(1, 6), st.integers(1, 6), st.integers(0, 10**6))


def test_single_token_returns_itself():
    x = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(self_attention(x, x, x), x, atol=1e-15)


def test_identical_keys_give_uniform_average(rng):
    q = rng.normal(size=(3, 4))
    K = np.tile(rng.normal(size=4), (5, 1))
    V = rng.normal(size=(5, 4))
    np.testing.assert_allclose(self_attention(q, K, V), np.tile(V.mean(0), (3, 1)), atol=1e-12)


def test_three_token_oracle():
    q = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, -0.5]])
    k = np.array([[0.2, 0.4], [-1.0, 0.3], [0.7, 0.7]])
    v = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 0.5]])
    np.testing.assert_allclose(self_attention(q, k, v), brute_attention(q, k, v), atol=1e-12)


def test_attention_sets_listed_order():
    assert build_attention_set(0, 4) == [(SOURCE, 0), (ARTICULATION, 1), (ARTICULATION, 2),
                                         (ARTICULATION, 3)]
    assert build_attention_set(2, 4) == [(ARTICULATION, 0), (ARTICULATION, 1), (SOURCE, 2),
                                         (ARTICULATION, 3)]
    assert build_attention_set(0, 1) == [(SOURCE, 0)]
    with pytest.raises(InvalidInputError):
        build_attention_set(4, 4)


def test_single_view_is_pure_source_conditioning(rng):
    a, s = qkv(rng, 1, 3, 4), qkv(rng, 1, 3, 4)
    out = rewired_attention(a, s)
    np.testing.assert_allclose(out[0], self_attention(a.q[0], s.k[0], s.v[0]), atol=1e-15)


def test_two_view_brute_force(rng):
    a, s = qkv(rng, 2, 2, 2), qkv(rng, 2, 2, 2)
    out = rewired_attention(a, s)
    K0 = np.concatenate([s.k[0], a.k[1]])
    V0 = np.concatenate([s.v[0], a.v[1]])
    K1 = np.concatenate([a.k[0], s.k[1]])
    V1 = np.concatenate([a.v[0], s.v[1]])
    np.testing.assert_allclose(out[0], brute_attention(a.q[0], K0, V0), atol=1e-12)
    np.testing.assert_allclose(out[1], brute_attention(a.q[1], K1, V1), atol=1e-12)


def test_shape_mismatch_rejected(rng):
    with pytest.raises(InvalidInputError):
        rewired_attention(qkv(rng, 2, 3, 4), qkv(rng, 3, 3, 4))
    with pytest.raises(InvalidInputError):
        FrameTensor("other", np.zeros((1, 1, 1)))
    with pytest.raises(InvalidInputError):
        FrameTensor(SOURCE, np.zeros((2, 3)))


@given(shapes)
def test_coincident_frames_reduce_to_joint_attention(shape):
    n, hw, c, seed = shape
    a = qkv(np.random.default_rng(seed), n, hw, c)
    np.testing.assert_allclose(rewired_attention(a, a), joint_attention(a), atol=1e-9)


@given(shapes)
def test_set_cardinality_and_source_position(shape):
    n = shape[0]
    for k in range(n):
        entries = build_attention_set(k, n)
        assert len(entries) == n
        assert [i for i, (f, _) in enumerate(entries) if f == SOURCE] == [k]


@given(shapes)
def test_rows_are_stochastic(shape):
    n, hw, c, seed = shape
    rng = np.random.default_rng(seed)
    W = attention_weights(rng.normal(size=(hw, c)) * 5, rng.normal(size=(n * hw, c)) * 5)
    assert np.all(W >= 0)
    np.testing.assert_allclose(W.sum(1), 1.0, atol=1e-9)


@given(shapes)
def test_view_permutation_equivariance(shape):
    n, hw, c, seed = shape
    rng = np.random.default_rng(seed)
    a, s = qkv(rng, n, hw, c), qkv(rng, n, hw, c)
    perm = rng.permutation(n)

    def permute(x):
        return QKV(x.q[perm], x.k[perm], x.v[perm])

    np.testing.assert_allclose(rewired_attention(permute(a), permute(s)),
                               rewired_attention(a, s)[perm], atol=1e-12)


@given(shapes)
def test_shape_and_value_translation(shape):
    n, hw, c, seed = shape
    rng = np.random.default_rng(seed)
    a, s = qkv(rng, n, hw, c), qkv(rng, n, hw, c)
    u = rng.normal(size=c)
    out = rewired_attention(a, s)
    assert out.shape == a.shape
    shifted = rewired_attention(QKV(a.q, a.k, a.v + u), QKV(s.q, s.k, s.v + u))
    np.testing.assert_allclose(shifted, out + u, atol=1e-12)


def test_multihead_splits_channels(rng):
    q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    out = multihead_attention(q, k, v, 2)
    np.testing.assert_allclose(out[:, :2], self_attention(q[:, :2], k[:, :2], v[:, :2]))
    np.testing.assert_allclose(out[:, 2:], self_attention(q[:, 2:], k[:, 2:], v[:, 2:]))
    with pytest.raises(InvalidInputError):
        multihead_attention(q, k, v, 3)
