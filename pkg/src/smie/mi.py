"""Jensen-Shannon MI estimate, temporal margin loss and their score gradients.

Scores come from the connection network: ``g`` for matched (visual, semantic)
pairs, ``g_hat`` for the keyframe-masked visual feature with the same
semantic vector, and ``g_neg`` for shifted, unmatched pairs. Both MI
estimates share ``g_neg``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def softplus(z):
    """log(1 + e^z) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    out = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)
    return out if out.ndim else float(out)


def logistic(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def _check(scores, name):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ValueError(f"{name} is empty")
    return scores


def jsd_mi(pos_scores, neg_scores) -> float:
    pos = _check(pos_scores, "pos_scores")
    neg = _check(neg_scores, "neg_scores")
    return float(np.mean(-softplus(-pos)) - np.mean(softplus(neg)))


def global_loss(m: float) -> float:
    return -m


def temporal_mi(masked_pos_scores, neg_scores) -> float:
    """Same estimator as :func:`jsd_mi`; the negatives must be the unmasked ones."""
    return jsd_mi(masked_pos_scores, neg_scores)


def hinge_active(m: float, m_hat: float, beta: float) -> bool:
    # the kink itself counts as active
    return beta - (m - m_hat) >= 0


def hinge_loss(m: float, m_hat: float, beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return max(0.0, beta - (m - m_hat))


def total_loss(l1: float, l2: float, lam: float = 0.5) -> float:
    return l1 + lam * l2


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.1
    lam: float = 0.5

    def __post_init__(self):
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lambda must be >= 0")


@dataclass
class MiBatchResult:
    m: float
    m_hat: float
    L1: float
    L2: float
    L: float
    pos_scores: np.ndarray
    masked_pos_scores: np.ndarray
    neg_scores: np.ndarray


def batch_objective(pos, masked_pos, neg, config: LossConfig = LossConfig()) -> MiBatchResult:
    m = jsd_mi(pos, neg)
    m_hat = temporal_mi(masked_pos, neg)
    l1 = global_loss(m)
    l2 = hinge_loss(m, m_hat, config.beta)
    return MiBatchResult(m, m_hat, l1, l2, total_loss(l1, l2, config.lam),
                         np.asarray(pos, dtype=np.float64), np.asarray(masked_pos, dtype=np.float64),
                         np.asarray(neg, dtype=np.float64))


def loss_score_gradients(pos, masked_pos, neg, beta: float, lam: float):
    """Exact dL/dg, dL/dg_hat, dL/dg_neg for ``L = -m + lam * max(0, beta - (m - m_hat))``.

    With d(softplus)/dz = logistic(z):
      dL/dg_i     = -(1 + lam*a) * logistic(-g_i) / N
      dL/dg_hat_i =        lam*a * logistic(-g_hat_i) / N
      dL/dg_neg_j =                logistic(g_neg_j) / M
    where ``a`` is 1 when the hinge is active. The negative term cancels
    inside the hinge, so it only receives gradient from L1.
    """
    pos = _check(pos, "pos")
    masked_pos = _check(masked_pos, "masked_pos")
    neg = _check(neg, "neg")
    m = jsd_mi(pos, neg)
    m_hat = temporal_mi(masked_pos, neg)
    active = lam * float(hinge_active(m, m_hat, beta))
    d_pos = -(1.0 + active) * logistic(-pos) / pos.size
    d_masked = active * logistic(-masked_pos) / masked_pos.size
    d_neg = logistic(neg) / neg.size
    return d_pos, d_masked, d_neg


def infonce_diagnostic(score_matrix) -> tuple[float, float]:
    """InfoNCE loss and the ``log B - loss`` MI lower bound.

    ``score_matrix[i, j]`` scores visual feature j against semantic vector i,
    so the diagonal holds the matched pairs and f = exp(score).
    """
    s = np.asarray(score_matrix, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] < 2:
        raise ValueError("score matrix must be square with B >= 2")
    shifted = s - s.max(axis=1, keepdims=True)
    log_softmax = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-np.mean(np.diag(log_softmax)))
    return loss, math.log(s.shape[0]) - loss


METRICS_HEADER = "epoch,lr,m,m_hat,L1,L2,L,infonce_bound"


def metrics_line(epoch: int, lr: float, m: float, m_hat: float, l1: float, l2: float, l: float,
                 infonce_bound: float) -> str:
    return f"{epoch},{lr:.6e},{m:.6f},{m_hat:.6f},{l1:.6f},{l2:.6f},{l:.6f},{infonce_bound:.6f}"
