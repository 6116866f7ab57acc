"""Training loop for the connection network.

Visual features of the full and keyframe-masked sequences are computed once
with the frozen encoder; each epoch then only runs the connection network
on (v, a), (v_hat, a) and shifted (v', a) pairs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import DEFAULT_FRAMES, ClassSplit, DataError, Dataset, preprocess
from .encoder import FrameEncoderParams, visual_feature
from .mi import (METRICS_HEADER, LossConfig, batch_objective, infonce_diagnostic, loss_score_gradients,
                 metrics_line)
from .nn import (AdamState, CosineSchedule, Mlp3Params, NonFiniteError, adam_from_tensors, adam_step,
                 adam_to_tensors, cosine_lr, init_params, mlp_backward, mlp_forward, params_from_tensors,
                 params_to_tensors, read_checkpoint, write_checkpoint)
from .temporal import default_keyframes, masked_sample

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    batch_size: int = 128
    beta: float = 0.1
    lam: float = 0.5
    # masked keyframes; None picks the default for the sequence length
    P: Optional[int] = None
    seed: int = 0
    hidden1: int = 512
    hidden2: int = 256
    frames: int = DEFAULT_FRAMES
    shift: int = 1
    # sequences used for the per-epoch InfoNCE diagnostic
    diag_size: int = 64

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 so that shifted negatives exist")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.P is not None and not 0 <= self.P <= self.frames:
            raise ValueError(f"P must be in [0, {self.frames}]")
        if self.shift < 1:
            raise ValueError("shift must be >= 1")
        LossConfig(self.beta, self.lam)

    @property
    def keyframes(self) -> int:
        return default_keyframes(self.frames) if self.P is None else self.P

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class FeatureCache:
    sample_ids: np.ndarray
    class_ids: np.ndarray
    v: np.ndarray
    v_hat: np.ndarray
    a: np.ndarray  # semantic vector of each sample's class
    embeddings: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.sample_ids)


def make_negatives(batch_ids, shift: int = 1) -> list:
    """Partner for position i is position (i + shift) mod B."""
    B = len(batch_ids)
    if B < 2:
        raise ValueError("need at least 2 samples to build shifted negatives")
    return [batch_ids[(i + shift) % B] for i in range(B)]


def count_collisions(class_ids, shift: int = 1) -> int:
    """Negatives whose shifted partner has the same class (kept in the batch)."""
    class_ids = np.asarray(class_ids)
    return int(np.sum(class_ids == np.roll(class_ids, -shift)))


def precompute_features(dataset: Dataset, encoder: FrameEncoderParams, split: ClassSplit,
                        P: Optional[int] = None, frames: int = DEFAULT_FRAMES) -> FeatureCache:
    samples = dataset.samples(sorted(split.seen), subset="train")
    if not samples:
        raise DataError("no seen-class training samples")
    P = default_keyframes(frames) if P is None else P
    v, v_hat = [], []
    for s in samples:
        seq = preprocess(dataset.sequence(s.id), frames)
        v.append(visual_feature(encoder, seq))
        v_hat.append(visual_feature(encoder, masked_sample(seq, P)) if P else v[-1])
    embeddings = {c: dataset.embedding(c) for c in sorted(split.seen)}
    class_ids = np.array([s.class_id for s in samples])
    return FeatureCache(np.array([s.id for s in samples]), class_ids, np.stack(v), np.stack(v_hat),
                        np.stack([embeddings[c] for c in class_ids]), embeddings)


@dataclass
class TrainState:
    params: Mlp3Params
    adam: AdamState
    epoch: int = 0
    seed: int = 0
    # rows: epoch, lr, m, m_hat, L1, L2, L, infonce_bound
    history: list = field(default_factory=list)


def init_state(config: TrainConfig, d_visual: int, d_semantic: int) -> TrainState:
    params = init_params((d_visual + d_semantic, config.hidden1, config.hidden2, 1), config.seed)
    return TrainState(params, AdamState.zeros_for(params), 0, config.seed, [])


def pair_inputs(v: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.concatenate([v, a], axis=1)


def batch_step(params: Mlp3Params, v, v_hat, a, config: TrainConfig):
    """Scores, loss terms and parameter gradients for one batch."""
    B = v.shape[0]
    v_neg = np.roll(v, -config.shift, axis=0)
    x = np.concatenate([pair_inputs(v, a), pair_inputs(v_hat, a), pair_inputs(v_neg, a)])
    scores, cache = mlp_forward(params, x)
    g, g_hat, g_neg = scores[:B], scores[B:2 * B], scores[2 * B:]
    result = batch_objective(g, g_hat, g_neg, LossConfig(config.beta, config.lam))
    if not np.isfinite(result.L):
        raise NonFiniteError(f"non-finite loss (m={result.m}, m_hat={result.m_hat}, "
                             f"max |score|={np.abs(scores).max()})")
    upstream = np.concatenate(loss_score_gradients(g, g_hat, g_neg, config.beta, config.lam))
    grads, _ = mlp_backward(params, cache, upstream)
    return result, grads


def infonce_bound(params: Mlp3Params, cache: FeatureCache, n: int) -> float:
    n = min(n, len(cache))
    v, a = cache.v[:n], cache.a[:n]
    # row i: semantic a_i against every visual v_j
    x = np.concatenate([np.tile(v, (n, 1)), np.repeat(a, n, axis=0)], axis=1)
    scores, _ = mlp_forward(params, x)
    return infonce_diagnostic(scores.reshape(n, n))[1]


def train_epoch(state: TrainState, cache: FeatureCache, config: TrainConfig):
    """One pass over the cache. Returns ``(new_state, metrics)``."""
    schedule = CosineSchedule(config.lr, config.epochs)
    lr = cosine_lr(schedule, state.epoch)
    order = np.random.default_rng([state.seed, state.epoch]).permutation(len(cache))
    params, adam = state.params, state.adam
    sums = np.zeros(5)
    n_batches = 0
    collisions = 0
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        if len(idx) < 2:
            continue
        result, grads = batch_step(params, cache.v[idx], cache.v_hat[idx], cache.a[idx], config)
        params, adam = adam_step(params, grads, adam, lr)
        sums += [result.m, result.m_hat, result.L1, result.L2, result.L]
        n_batches += 1
        collisions += count_collisions(cache.class_ids[idx], config.shift)
    if n_batches == 0:
        raise DataError("no batch with at least 2 samples")
    m, m_hat, l1, l2, l = sums / n_batches
    bound = infonce_bound(params, cache, config.diag_size)
    metrics = {"epoch": state.epoch, "lr": lr, "m": m, "m_hat": m_hat, "L1": l1, "L2": l2, "L": l,
               "infonce_bound": bound, "collisions": collisions}
    row = [state.epoch, lr, m, m_hat, l1, l2, l, bound]
    new_state = TrainState(params, adam, state.epoch + 1, state.seed, state.history + [row])
    log.debug("epoch %d lr %.3g L %.5f m %.5f m_hat %.5f", state.epoch, lr, l, m, m_hat)
    return new_state, metrics


def train(dataset: Dataset, split: ClassSplit, encoder: FrameEncoderParams, config: TrainConfig,
          out_dir=None, state: Optional[TrainState] = None, cache: Optional[FeatureCache] = None) -> TrainState:
    """Train (or resume) the connection network; optionally write checkpoint and metrics."""
    config.validate()
    if not encoder.frozen:
        raise ValueError("the encoder must be pretrained and frozen before training")
    split.validate_against(dataset.manifest)
    if cache is None:
        cache = precompute_features(dataset, encoder, split, config.keyframes, config.frames)
    if state is None:
        state = init_state(config, cache.v.shape[1], cache.a.shape[1])
    while state.epoch < config.epochs:
        state, _ = train_epoch(state, cache, config)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_state(out / "model.smck", state)
        write_metrics(out / "metrics.csv", state.history)
    return state


def write_metrics(path, history) -> None:
    lines = [METRICS_HEADER] + [metrics_line(int(r[0]), *r[1:]) for r in history]
    Path(path).write_text("\n".join(lines) + "\n")


def save_state(path, state: TrainState) -> None:
    tensors = params_to_tensors(state.params, "estimator")
    tensors.update(adam_to_tensors(state.adam))
    tensors["train.epoch"] = np.array(float(state.epoch))
    tensors["train.seed"] = np.array(float(state.seed))
    tensors["train.history"] = np.array(state.history, dtype=np.float64).reshape(-1, 8)
    write_checkpoint(path, tensors)


def load_state(path) -> TrainState:
    t = read_checkpoint(path)
    params = params_from_tensors(Mlp3Params, t, "estimator", ["layer1", "layer2", "layer3"])
    history = [list(row) for row in t["train.history"]]
    return TrainState(params, adam_from_tensors(t), int(t["train.epoch"]), int(t["train.seed"]), history)


def load_model(path) -> Mlp3Params:
    return params_from_tensors(Mlp3Params, read_checkpoint(path), "estimator", ["layer1", "layer2", "layer3"])
