"""
Motion attention and keyframe masking
=====================================

Frames with large displacements to their neighbours get high attention;
the top ones are zeroed to make the masked sample.
"""

import numpy as np

from smie.data import SkeletonSequence, preprocess
from smie.temporal import (attention_csv, bidirectional_motion, default_keyframes, frame_motion,
                           masked_sample, motion_attention, select_keyframes)

# One joint, one channel: x = [0, 1, 3]
x = SkeletonSequence(np.array([0.0, 1.0, 3.0]).reshape(3, 1, 1))
p = bidirectional_motion(x)
print("motion energy", p.ravel(), "-> per frame", frame_motion(p))
print("attention", motion_attention(x))

# %%
# A longer clip: a joint that idles, jumps once, then idles again.

t = np.linspace(0, 1, 80)
track = np.stack([np.tanh(20 * (t - 0.5)), np.sin(2 * np.pi * t), 0 * t], axis=1)
seq = preprocess(SkeletonSequence(track[:, None, :]), 50)

q = motion_attention(seq)
P = default_keyframes(seq.K)
keys = select_keyframes(q, P)
print(f"K={seq.K}, masking P={P} frames:", keys.tolist())

masked = masked_sample(seq, P)
zeroed = np.flatnonzero(~masked.values.any(axis=(1, 2)))
print("zero frames after masking:", zeroed.tolist())

print(attention_csv(q).splitlines()[:4])
