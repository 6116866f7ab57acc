"""
Checking the training gradient
==============================

The connection network is a plain numpy MLP with a hand-written backward
pass.  Central differences confirm it, first on the network alone, then on
the full training loss.
"""

import numpy as np

from smie.gradcheck import full_loss_gradcheck
from smie.nn import grad_check, init_params, mlp_backward, mlp_forward

rng = np.random.default_rng(3)
params = init_params((6, 8, 4, 1), seed=0)
x = rng.standard_normal((5, 6))
w = rng.standard_normal(5)

# loss = sum_i w_i * T(x_i), so the upstream gradient is just w
scores, cache = mlp_forward(params, x)
analytic, _ = mlp_backward(params, cache, w)
err = grad_check(lambda p: float(w @ mlp_forward(p, x)[0]), params, analytic, h=1e-5)
print(f"network alone: max relative error {err:.2e}")

# %%
# The full loss adds the JSD estimate and the hinge.  Points near a ReLU or
# hinge kink are redrawn so differences are well defined.

for seed in range(5):
    print(f"seed {seed}: {full_loss_gradcheck(seed):.2e}")
