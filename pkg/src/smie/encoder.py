"""Frozen visual feature extractor stand-in and parameter-free layer norm.

The extractor is a per-frame MLP (J*C -> H_e -> D_v, ReLU in between) whose
frame features are mean-pooled over time and layer-normalized. It is
pretrained on seen classes with a throwaway softmax head and then frozen.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import DEFAULT_FRAMES, ClassSplit, DataError, Dataset, SkeletonSequence, preprocess
from .nn import (AdamState, LinearParams, ParamSet, ShapeError, adam_step, init_linear, read_checkpoint,
                 relu, relu_grad, write_checkpoint)

log = logging.getLogger(__name__)

LN_EPS = 1e-5


@dataclass
class FrameEncoderParams(ParamSet):
    linear1: LinearParams
    linear2: LinearParams
    frozen: bool = False

    def layers(self):
        return [self.linear1, self.linear2]

    def layer_names(self):
        return ["linear1", "linear2"]

    def _rebuild(self, layers):
        return FrameEncoderParams(*layers, frozen=self.frozen)

    @property
    def input_dim(self) -> int:
        return self.linear1.weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.linear2.weight.shape[0]


def init_encoder(input_dim: int, hidden: int = 128, feature_dim: int = 64, seed: int = 0) -> FrameEncoderParams:
    rng = np.random.default_rng(seed)
    return FrameEncoderParams(init_linear(input_dim, hidden, rng), init_linear(hidden, feature_dim, rng))


def encode_frames(params: FrameEncoderParams, seq) -> np.ndarray:
    """K x D_v per-frame features; frames are encoded independently."""
    values = seq.values if isinstance(seq, SkeletonSequence) else np.asarray(seq, dtype=np.float64)
    frames = values.reshape(values.shape[0], -1)
    if frames.shape[1] != params.input_dim:
        raise ShapeError(f"encoder expects J*C={params.input_dim}, got {frames.shape[1]}")
    return params.linear2(relu(params.linear1(frames)))


def layer_norm(x, eps: float = LN_EPS) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps)


def layer_norm_backward(y: np.ndarray, x: np.ndarray, dy: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Gradient through ``y = layer_norm(x)`` along the last axis."""
    var = ((x - x.mean(axis=-1, keepdims=True)) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return inv_std * (dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True))


def pool_and_norm(frame_features: np.ndarray) -> np.ndarray:
    frame_features = np.asarray(frame_features, dtype=np.float64)
    if frame_features.ndim != 2 or frame_features.shape[0] < 1:
        raise ShapeError("expected a K x D array with K >= 1")
    return layer_norm(frame_features.mean(axis=0))


def visual_feature(params: FrameEncoderParams, seq) -> np.ndarray:
    return pool_and_norm(encode_frames(params, seq))


# ---------------------------------------------------------------------------
# pretraining


@dataclass
class PretrainConfig:
    hidden: int = 128
    feature_dim: int = 64
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 128
    frames: int = DEFAULT_FRAMES
    seed: int = 0


@dataclass
class PretrainReport:
    history: list
    train_accuracy: float


@dataclass
class _EncoderWithHead(ParamSet):
    linear1: LinearParams
    linear2: LinearParams
    head: LinearParams

    def layers(self):
        return [self.linear1, self.linear2, self.head]

    def layer_names(self):
        return ["linear1", "linear2", "head"]


def stack_sequences(dataset: Dataset, samples, frames: int = DEFAULT_FRAMES) -> np.ndarray:
    """Preprocessed sequences as an N x K x (J*C) array."""
    seqs = [preprocess(dataset.sequence(s.id), frames).values for s in samples]
    return np.stack([v.reshape(v.shape[0], -1) for v in seqs])


def _forward_backward(p: _EncoderWithHead, x: np.ndarray, labels: np.ndarray):
    z1 = p.linear1(x)  # B K H
    a1 = relu(z1)
    a1_mean = a1.mean(axis=1)
    pooled = p.linear2(a1_mean)  # linear2 commutes with the temporal mean
    feat = layer_norm(pooled)
    logits = p.head(feat)
    logits = logits - logits.max(axis=1, keepdims=True)
    log_prob = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    B = x.shape[0]
    loss = -log_prob[np.arange(B), labels].mean()
    correct = int((log_prob.argmax(axis=1) == labels).sum())

    d_logits = np.exp(log_prob)
    d_logits[np.arange(B), labels] -= 1.0
    d_logits /= B
    g_head = LinearParams(d_logits.T @ feat, d_logits.sum(axis=0))
    d_pooled = layer_norm_backward(feat, pooled, d_logits @ p.head.weight)
    g2 = LinearParams(d_pooled.T @ a1_mean, d_pooled.sum(axis=0))
    K = x.shape[1]
    dz1 = ((d_pooled @ p.linear2.weight) / K)[:, None, :] * relu_grad(z1)
    g1 = LinearParams(np.einsum("bkh,bki->hi", dz1, x), dz1.sum(axis=(0, 1)))
    return loss, correct, _EncoderWithHead(g1, g2, g_head)


def pretrain_encoder(dataset: Dataset, split: ClassSplit, config: PretrainConfig = PretrainConfig()):
    """Train encoder + linear head on seen-class training samples; return frozen encoder.

    Returns ``(encoder, report)``; the report carries per-epoch
    ``(epoch, loss, running_accuracy)`` and the head's final training accuracy.
    """
    seen = sorted(split.seen)
    if not seen:
        raise DataError("empty seen set")
    samples = dataset.samples(seen, subset="train")
    if not samples:
        raise DataError("seen classes have no training samples")
    x = stack_sequences(dataset, samples, config.frames)
    label_of = {c: i for i, c in enumerate(seen)}
    labels = np.array([label_of[s.class_id] for s in samples])

    rng = np.random.default_rng([config.seed, 1])
    enc = init_encoder(x.shape[2], config.hidden, config.feature_dim, seed=config.seed)
    params = _EncoderWithHead(enc.linear1, enc.linear2, init_linear(config.feature_dim, len(seen), rng))
    state = AdamState.zeros_for(params)
    history = []
    n = len(samples)
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 2, epoch]).permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, hits, grads = _forward_backward(params, x[idx], labels[idx])
            params, state = adam_step(params, grads, state, config.lr)
            total += loss * len(idx)
            correct += hits
        history.append((epoch, total / n, correct / n))
        log.debug("pretrain epoch %d loss %.4f acc %.4f", epoch, total / n, correct / n)
    hits = sum(_forward_backward(params, x[i:i + 512], labels[i:i + 512])[1] for i in range(0, n, 512))
    report = PretrainReport(history, hits / n)
    return FrameEncoderParams(params.linear1, params.linear2, frozen=True), report


def encoder_accuracy(encoder: FrameEncoderParams, dataset: Dataset, split: ClassSplit) -> float:
    """Nearest-class-mean accuracy of pooled features on seen training samples."""
    seen = sorted(split.seen)
    samples = dataset.samples(seen, subset="train")
    feats = np.stack([visual_feature(encoder, preprocess(dataset.sequence(s.id))) for s in samples])
    labels = np.array([s.class_id for s in samples])
    means = np.stack([feats[labels == c].mean(axis=0) for c in seen])
    pred = np.array(seen)[np.argmin(((feats[:, None, :] - means[None]) ** 2).sum(-1), axis=1)]
    return float((pred == labels).mean())


def save_encoder(path, encoder: FrameEncoderParams) -> None:
    tensors = {f"encoder.{n}": a for n, a in zip(encoder.names(), encoder.arrays())}
    tensors["encoder.frozen"] = np.array(1.0 if encoder.frozen else 0.0)
    write_checkpoint(path, tensors)


def load_encoder(path) -> FrameEncoderParams:
    t = read_checkpoint(path)
    try:
        return FrameEncoderParams(
            LinearParams(t["encoder.linear1.weight"], t["encoder.linear1.bias"]),
            LinearParams(t["encoder.linear2.weight"], t["encoder.linear2.bias"]),
            frozen=bool(t["encoder.frozen"] != 0),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: not an encoder checkpoint (missing {exc})") from None
