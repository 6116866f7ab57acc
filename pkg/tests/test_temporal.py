import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smie.data import SkeletonSequence
from smie.temporal import (attention_csv, attention_weights, bidirectional_motion, default_keyframes,
                           frame_motion, mask_keyframes, motion_attention, select_keyframes)

X = SkeletonSequence(np.array([0.0, 1.0, 3.0]).reshape(3, 1, 1))


def brute_motion(x):
    """Loop-based reference for the bidirectional displacement energy."""
    K = x.shape[0]
    p = np.zeros_like(x)
    for k in range(K):
        for j in range(x.shape[1]):
            for c in range(x.shape[2]):
                nex = x[k + 1, j, c] - x[k, j, c] if k < K - 1 else 0.0
                pre = x[k - 1, j, c] - x[k, j, c] if k > 0 else 0.0
                p[k, j, c] = nex ** 2 + pre ** 2
    return p


def test_hand_example_chain():
    p = bidirectional_motion(X)
    assert p.ravel().tolist() == [1.0, 5.0, 4.0]
    p_k = frame_motion(p)
    assert p_k.tolist() == [1.0, 5.0, 4.0]
    q = attention_weights(p_k)
    np.testing.assert_allclose(q, [0.1, 0.5, 0.4], atol=1e-12)
    assert select_keyframes(q, 1).tolist() == [1]
    assert mask_keyframes(X, [1]).values.ravel().tolist() == [0.0, 0.0, 3.0]


def test_motion_edge_cases():
    assert not bidirectional_motion(np.full((4, 2, 3), 7.0)).any()
    assert bidirectional_motion(np.ones((1, 2, 3))).tolist() == np.zeros((1, 2, 3)).tolist()


def test_frame_motion_linear():
    p = np.random.default_rng(0).random((5, 3, 2))
    np.testing.assert_allclose(frame_motion(2 * p), 2 * frame_motion(p))
    assert not frame_motion(np.zeros((3, 2, 2))).any()


def test_attention_fallback_and_errors():
    assert attention_weights(np.zeros(4)).tolist() == [0.25] * 4
    with pytest.raises(ValueError):
        attention_weights(np.array([1.0, -0.1]))


def test_select_keyframes_rules():
    assert select_keyframes(np.array([0.2, 0.5, 0.3]), 0).tolist() == []
    assert select_keyframes(np.full(4, 0.25), 2).tolist() == [0, 1]
    assert select_keyframes(np.array([0.3, 0.1, 0.3, 0.3]), 2).tolist() == [0, 2]
    with pytest.raises(ValueError):
        select_keyframes(np.full(3, 1 / 3), 4)


def test_mask_keyframes_edges():
    x = SkeletonSequence(np.random.default_rng(1).normal(size=(4, 2, 3)))
    assert np.array_equal(mask_keyframes(x, []).values, x.values)
    assert not mask_keyframes(x, range(4)).values.any()
    with pytest.raises(IndexError):
        mask_keyframes(x, [4])


def test_default_keyframes():
    assert default_keyframes(50) == 15
    assert default_keyframes(20) == 6


def test_attention_csv():
    text = attention_csv(np.array([0.1, 0.5, 0.4]))
    assert text == "frame_index,q\n0,0.100000\n1,0.500000\n2,0.400000\n"


seqs = arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 3), st.integers(1, 3)),
              elements=st.floats(-50, 50))


@given(seqs)
def test_motion_matches_brute_force(x):
    np.testing.assert_allclose(bidirectional_motion(x), brute_motion(x), rtol=1e-12, atol=1e-12)


@given(seqs)
def test_attention_is_distribution(x):
    q = motion_attention(x)
    assert abs(q.sum() - 1.0) < 1e-9
    assert np.all((q >= 0) & (q <= 1))


@given(seqs, st.floats(-100, 100))
def test_attention_translation_invariant(x, shift):
    a = motion_attention(x)
    b = motion_attention(x + shift)
    np.testing.assert_allclose(b, a, atol=1e-7)


@given(seqs, st.data())
def test_mask_leaves_other_frames_bitwise(x, data):
    K = x.shape[0]
    idx = data.draw(st.lists(st.integers(0, K - 1), unique=True))
    out = mask_keyframes(x, idx).values
    keep = np.setdiff1d(np.arange(K), idx)
    assert out[keep].tobytes() == x[keep].tobytes()
    assert not out[idx].any()


@given(arrays(np.float64, st.integers(1, 30), elements=st.sampled_from([0.0, 0.1, 0.2, 0.5])), st.data())
def test_select_keyframes_deterministic_topk(q, data):
    P = data.draw(st.integers(0, q.shape[0]))
    sel = select_keyframes(q, P)
    assert np.array_equal(sel, select_keyframes(q, P))
    assert list(sel) == sorted(sel) and len(set(sel)) == P
    # brute force: rank by (-q, index)
    ref = sorted(sorted(range(q.shape[0]), key=lambda k: (-q[k], k))[:P])
    assert list(sel) == ref
