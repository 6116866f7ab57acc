"""
Jensen-Shannon mutual information scores
========================================

A tour of the estimator that drives training: scores in, an MI estimate
out, and the two losses built from it.
"""

import math

import numpy as np

from smie.mi import (LossConfig, batch_objective, infonce_diagnostic, jsd_mi, loss_score_gradients,
                     softplus)

rng = np.random.default_rng(0)

# softplus is computed in a form that never overflows
print(softplus(np.array([-800.0, 0.0, 800.0])), "ln 2 =", math.log(2))

# A critic that cannot tell positives from negatives sits at -2 ln 2
print("all-zero scores:", jsd_mi(np.zeros(16), np.zeros(16)))

# Separating the two score sets raises the estimate towards 0 from below
for gap in (0.0, 1.0, 3.0, 8.0):
    pos = gap + rng.standard_normal(256)
    neg = -gap + rng.standard_normal(256)
    print(f"gap {gap:4.1f}  m = {jsd_mi(pos, neg):+.4f}")

# %%
# The temporal term compares full and keyframe-masked positives against the
# same negatives, so negatives cancel out of m - m_hat.

pos, masked, neg = rng.normal(2, 1, 8), rng.normal(1, 1, 8), rng.normal(-1, 1, 8)
r = batch_objective(pos, masked, neg, LossConfig(beta=0.1, lam=0.5))
print(f"m {r.m:.4f}  m_hat {r.m_hat:.4f}  L1 {r.L1:.4f}  L2 {r.L2:.4f}  L {r.L:.4f}")

d_pos, d_masked, d_neg = loss_score_gradients(pos, masked, neg, 0.1, 0.5)
print("hinge active:", bool(np.any(d_masked)), " dL/dg[0] =", d_pos[0])

# %%
# InfoNCE over a B x B score table is reported alongside, as a diagnostic.
# Its bound can never exceed log B.

B = 8
table = rng.standard_normal((B, B)) + 4 * np.eye(B)
loss, bound = infonce_diagnostic(table)
print(f"InfoNCE loss {loss:.4f}  bound {bound:.4f} <= log B = {math.log(B):.4f}")
