"""Bidirectional motion attention and keyframe masking.

Motion at frame k is the squared displacement to the next frame plus the
squared displacement to the previous frame (missing neighbours contribute
0). Its per-frame mean, normalised over time, is the attention weight q_k;
the P frames with the largest q_k are zeroed to form the masked sequence.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .data import SkeletonSequence


def _values(seq) -> np.ndarray:
    return seq.values if isinstance(seq, SkeletonSequence) else np.asarray(seq, dtype=np.float64)


def bidirectional_motion(seq) -> np.ndarray:
    x = _values(seq)
    nex = np.zeros_like(x)
    pre = np.zeros_like(x)
    nex[:-1] = x[1:] - x[:-1]
    pre[1:] = x[:-1] - x[1:]
    return nex ** 2 + pre ** 2


def frame_motion(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p.reshape(p.shape[0], -1).mean(axis=1)


def attention_weights(p_k: np.ndarray) -> np.ndarray:
    p_k = np.asarray(p_k, dtype=np.float64)
    if np.any(p_k < 0):
        raise ValueError("frame motion must be non-negative")
    total = p_k.sum()
    if total == 0:
        return np.full(p_k.shape, 1.0 / p_k.shape[0])
    return p_k / total


def motion_attention(seq) -> np.ndarray:
    return attention_weights(frame_motion(bidirectional_motion(seq)))


def default_keyframes(K: int) -> int:
    """Number of masked keyframes: 15 at 50 frames, 30% of K otherwise."""
    return 15 if K == 50 else int(round(0.3 * K))


def select_keyframes(q: np.ndarray, P: int) -> np.ndarray:
    """Ascending indices of the P largest weights; ties favour earlier frames."""
    q = np.asarray(q)
    if not 0 <= P <= q.shape[0]:
        raise ValueError(f"P must be in [0, {q.shape[0]}], got {P}")
    order = np.argsort(-q, kind="stable")
    return np.sort(order[:P])


def mask_keyframes(seq, indices) -> SkeletonSequence:
    x = _values(seq)
    indices = np.asarray(indices, dtype=int)
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
        raise IndexError(f"frame index out of range for K={x.shape[0]}")
    out = x.copy()
    out[indices] = 0.0
    return SkeletonSequence(out)


def masked_sample(seq, P: int) -> SkeletonSequence:
    return mask_keyframes(seq, select_keyframes(motion_attention(seq), P))


def attention_csv(q: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_index", "q"])
    for k, value in enumerate(q):
        writer.writerow([k, f"{value:.6f}"])
    return buf.getvalue()
