"""Small numpy neural-network kernel: linear layers, a 3-layer ReLU perceptron
with hand-written backward pass, Adam, cosine annealing, finite-difference
gradient checking and the SMCK tensor checkpoint format."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"SMCK"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(pre):
    # subgradient at exactly 0 is 0
    return (pre > 0).astype(np.float64)


@dataclass
class LinearParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __call__(self, x):
        return x @ self.weight.T + self.bias

    @property
    def shape(self):
        return self.weight.shape


def init_linear(n_in: int, n_out: int, rng) -> LinearParams:
    bound = math.sqrt(6.0 / n_in)
    return LinearParams(rng.uniform(-bound, bound, (n_out, n_in)), np.zeros(n_out))


class ParamSet:
    """Mixin for dataclasses of LinearParams: a fixed flat ordering of arrays."""

    def layers(self) -> list[LinearParams]:
        raise NotImplementedError

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers():
            out += [layer.weight, layer.bias]
        return out

    def names(self) -> list[str]:
        out = []
        for name in self.layer_names():
            out += [f"{name}.weight", f"{name}.bias"]
        return out

    def layer_names(self) -> list[str]:
        raise NotImplementedError

    def with_arrays(self, arrays: Sequence[np.ndarray]):
        arrays = list(arrays)
        layers = [LinearParams(arrays[2 * i], arrays[2 * i + 1]) for i in range(len(arrays) // 2)]
        return self._rebuild(layers)

    def _rebuild(self, layers):
        return type(self)(*layers)

    def zeros_like(self):
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class Mlp3Params(ParamSet):
    """The connection network: Linear-ReLU-Linear-ReLU-Linear with scalar output."""

    layer1: LinearParams
    layer2: LinearParams
    layer3: LinearParams

    def layers(self):
        return [self.layer1, self.layer2, self.layer3]

    def layer_names(self):
        return ["layer1", "layer2", "layer3"]

    @property
    def input_dim(self) -> int:
        return self.layer1.weight.shape[1]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.layer1.weight.shape[1], self.layer1.weight.shape[0],
                self.layer2.weight.shape[0], self.layer3.weight.shape[0])


def init_params(dims: Sequence[int], seed: int) -> Mlp3Params:
    """Uniform fan-in init, ``dims = (D_in, H1, H2, 1)``, zero biases."""
    d_in, h1, h2, d_out = dims
    if d_out != 1:
        raise ShapeError("the connection network has a scalar output")
    rng = np.random.default_rng(seed)
    return Mlp3Params(init_linear(d_in, h1, rng), init_linear(h1, h2, rng), init_linear(h2, d_out, rng))


@dataclass
class MlpCache:
    x: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    param_id: int = field(default=0)


def mlp_forward(params: Mlp3Params, batch: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ShapeError(f"expected B x {params.input_dim} batch, got {batch.shape}")
    z1 = params.layer1(batch)
    z2 = params.layer2(relu(z1))
    out = params.layer3(relu(z2))
    return out[:, 0], MlpCache(batch, z1, z2, id(params))


def mlp_backward(params: Mlp3Params, cache: MlpCache, upstream: np.ndarray) -> tuple[Mlp3Params, np.ndarray]:
    """Gradients of ``sum(upstream * scores)`` w.r.t. params and the input batch."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if cache.param_id != id(params) or cache.z1.shape[1] != params.layer1.weight.shape[0]:
        raise ShapeError("cache does not come from a forward pass with these parameters")
    if upstream.shape != (cache.x.shape[0],):
        raise ShapeError(f"upstream must have shape ({cache.x.shape[0]},), got {upstream.shape}")
    a1 = relu(cache.z1)
    a2 = relu(cache.z2)
    d3 = upstream[:, None]
    g3 = LinearParams(d3.T @ a2, d3.sum(axis=0))
    dz2 = (d3 @ params.layer3.weight) * relu_grad(cache.z2)
    g2 = LinearParams(dz2.T @ a1, dz2.sum(axis=0))
    dz1 = (dz2 @ params.layer2.weight) * relu_grad(cache.z1)
    g1 = LinearParams(dz1.T @ cache.x, dz1.sum(axis=0))
    dx = dz1 @ params.layer1.weight
    return Mlp3Params(g1, g2, g3), dx


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_for(cls, params: ParamSet, **kw) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)


def adam_step(params: ParamSet, grads: ParamSet, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if [a.shape for a in p_arrays] != [g.shape for g in g_arrays] or \
            [a.shape for a in p_arrays] != [m.shape for m in state.m]:
        raise ShapeError("parameter, gradient and moment shapes differ")
    for name, g in zip(params.names(), g_arrays):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_p), AdamState(new_m, new_v, t, b1, b2, state.eps)


@dataclass(frozen=True)
class CosineSchedule:
    base_lr: float
    total_epochs: int

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be positive")


def cosine_lr(schedule: CosineSchedule, epoch: int) -> float:
    if not 0 <= epoch <= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs}]")
    return 0.5 * schedule.base_lr * (1.0 + math.cos(math.pi * epoch / schedule.total_epochs))


def grad_check(loss_fn: Callable[[ParamSet], float], params: ParamSet, analytic: ParamSet,
               h: float = 1e-5) -> float:
    """Max relative error between ``analytic`` and central differences of ``loss_fn``.

    Every coordinate of every array is perturbed; keep the parameter count small.
    """
    if not h > 0:
        raise ValueError("finite-difference step h must be positive")
    worst = 0.0
    arrays = [a.copy() for a in params.arrays()]
    for idx, (arr, g) in enumerate(zip(arrays, analytic.arrays())):
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(params.with_arrays(arrays))
            flat[i] = orig - h
            down = loss_fn(params.with_arrays(arrays))
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(1e-8, abs(gflat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# SMCK checkpoint: named float64 tensors


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack("<I" + "I" * arr.ndim, arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an SMCK checkpoint")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", raw, pos)
            dims = struct.unpack_from("<" + "I" * rank, raw, pos + 4)
            pos += 4 + 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if pos + 8 * size > len(raw):
                raise ValueError("truncated")
            out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(dims).copy()
            pos += 8 * size
    except struct.error:
        raise ValueError(f"{path}: truncated checkpoint") from None
    return out


def params_to_tensors(params: ParamSet, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}.{n}": a for n, a in zip(params.names(), params.arrays())}


def params_from_tensors(template_cls, tensors: dict, prefix: str, layer_names: Sequence[str]):
    layers = [LinearParams(tensors[f"{prefix}.{n}.weight"], tensors[f"{prefix}.{n}.bias"])
              for n in layer_names]
    return template_cls(*layers)


def adam_to_tensors(state: AdamState, prefix: str = "adam") -> dict[str, np.ndarray]:
    out = {f"{prefix}.t": np.array(float(state.t)),
           f"{prefix}.hyper": np.array([state.beta1, state.beta2, state.eps])}
    for i, (m, v) in enumerate(zip(state.m, state.v)):
        out[f"{prefix}.m.{i}"] = m
        out[f"{prefix}.v.{i}"] = v
    return out


def adam_from_tensors(tensors: dict, prefix: str = "adam") -> AdamState:
    n = sum(1 for k in tensors if k.startswith(f"{prefix}.m."))
    b1, b2, eps = tensors[f"{prefix}.hyper"].tolist()
    return AdamState([tensors[f"{prefix}.m.{i}"] for i in range(n)],
                     [tensors[f"{prefix}.v.{i}"] for i in range(n)],
                     int(tensors[f"{prefix}.t"]), b1, b2, eps)
