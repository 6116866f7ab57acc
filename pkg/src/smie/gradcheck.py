"""Finite-difference verification of the full training loss gradient."""

from __future__ import annotations

import numpy as np

from .data import l2_normalize
from .encoder import layer_norm
from .nn import Mlp3Params, grad_check, init_params, mlp_forward
from .train import TrainConfig, batch_step, pair_inputs

KINK_MARGIN = 1e-3
HINGE_MARGIN = 1e-6


def random_batch(rng, batch: int, d_visual: int, d_semantic: int):
    v = layer_norm(rng.standard_normal((batch, d_visual)))
    v_hat = layer_norm(v + 0.5 * rng.standard_normal((batch, d_visual)))
    a = np.stack([l2_normalize(rng.standard_normal(d_semantic)).vector for _ in range(batch)])
    return v, v_hat, a


def _kink_free(params: Mlp3Params, v, v_hat, a, config: TrainConfig) -> bool:
    x = np.concatenate([pair_inputs(v, a), pair_inputs(v_hat, a),
                        pair_inputs(np.roll(v, -config.shift, axis=0), a)])
    _, cache = mlp_forward(params, x)
    if min(np.abs(cache.z1).min(), np.abs(cache.z2).min()) <= KINK_MARGIN:
        return False
    result, _ = batch_step(params, v, v_hat, a, config)
    return abs(config.beta - (result.m - result.m_hat)) > HINGE_MARGIN


def full_loss_gradcheck(seed: int, batch: int = 6, d_visual: int = 5, d_semantic: int = 4,
                        hidden=(7, 5), beta: float = 0.1, lam: float = 0.5, h: float = 1e-5,
                        max_tries: int = 200) -> float:
    """Max relative error of the analytic dL/dparams on one random batch.

    Parameters and batch are redrawn until no ReLU pre-activation lies within
    ``KINK_MARGIN`` of 0 and the hinge is away from its kink.
    """
    config = TrainConfig(beta=beta, lam=lam, batch_size=batch, hidden1=hidden[0], hidden2=hidden[1])
    rng = np.random.default_rng(seed)
    for attempt in range(max_tries):
        params = init_params((d_visual + d_semantic, hidden[0], hidden[1], 1), int(rng.integers(2**31)))
        # non-zero biases so the check also covers them
        params = params.with_arrays([a + 0.1 * rng.standard_normal(a.shape) if a.ndim == 1 else a
                                     for a in params.arrays()])
        v, v_hat, a = random_batch(rng, batch, d_visual, d_semantic)
        if _kink_free(params, v, v_hat, a, config):
            break
    else:
        raise RuntimeError("could not find a kink-free point")
    _, analytic = batch_step(params, v, v_hat, a, config)
    return grad_check(lambda p: batch_step(p, v, v_hat, a, config)[0].L, params, analytic, h)

