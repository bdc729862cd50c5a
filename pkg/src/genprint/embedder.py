"""Trainable feed-forward embedding network producing hash digests.

A small PReLU MLP maps feature vectors to the embedding space; the final
linear layer reduces to the digest width and is itself followed by PReLU.
Training pairs the network with a ClassHead through the losses module and
updates everything with bias-corrected Adam. All arithmetic is float64 and
fully deterministic given the seeds.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    FormatError,
    ShapeMismatchError,
    ZeroVectorError,
)
from .featurizer import AuxScaler
from .losses import Batch, ClassHead, LossConfig, LossVariant, loss_backward
from .numeric import RngState, derive_seed

CHECKPOINT_MAGIC = b"EMB1"
CHECKPOINT_VERSION = 1

_MODALITY_CODES = {"text": 0, "image": 1}
_MODALITY_NAMES = {v: k for k, v in _MODALITY_CODES.items()}


class EmbedderConfig(BaseModel):
    """Network shape and init seed. input_dim may stay unset until data is seen."""

    model_config = ConfigDict(extra="forbid")

    input_dim: int | None = Field(default=None, gt=0)
    hidden_dims: tuple[int, ...] = (256,)
    emb_dim: int = Field(default=512, ge=2)
    prelu_init: float = 0.25
    seed: int = Field(default=1, ge=0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=32, ge=1)
    shuffle_seed: int = Field(default=1, ge=0)
    patience: int | None = Field(default=None, ge=1)  # early stop disabled by default


@dataclass
class LayerParams:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    slope: np.ndarray  # per-channel PReLU slopes, (out,)


@dataclass
class EmbedderParams:
    """All trainable state: hidden/output layers plus the attached class head."""

    layers: list[LayerParams]
    head: ClassHead

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def emb_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def tensors(self) -> list[np.ndarray]:
        """Flat parameter list in a fixed order (layers, then head W, head b)."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend([layer.W, layer.b, layer.slope])
        out.extend([self.head.W, self.head.b])
        return out


@dataclass
class AdamState:
    """First/second-moment accumulators aligned with EmbedderParams.tensors()."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: EmbedderParams, lr: float = 1e-4) -> "AdamState":
        tensors = params.tensors()
        return cls(
            m=[np.zeros_like(t) for t in tensors],
            v=[np.zeros_like(t) for t in tensors],
            lr=lr,
        )


@dataclass
class EpochStats:
    mean_loss: float
    accuracy: float
    n_steps: int
    pseudo_count: int = 0


def init_params(cfg: EmbedderConfig, n_classes: int) -> EmbedderParams:
    """He-normal weights (std = sqrt(2/fan_in)), zero biases, constant PReLU slopes."""
    if cfg.input_dim is None:
        raise DimensionMismatchError("input_dim must be resolved before init")
    rng = RngState(cfg.seed)
    dims = [cfg.input_dim, *cfg.hidden_dims, cfg.emb_dim]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = rng.normal_array(fan_out * fan_in).reshape(fan_out, fan_in)
        W *= np.sqrt(2.0 / fan_in)
        layers.append(
            LayerParams(
                W=W,
                b=np.zeros(fan_out),
                slope=np.full(fan_out, cfg.prelu_init, dtype=np.float64),
            )
        )
    head_W = rng.normal_array(n_classes * cfg.emb_dim).reshape(n_classes, cfg.emb_dim)
    head_W *= np.sqrt(2.0 / cfg.emb_dim)
    head = ClassHead(W=head_W, b=np.zeros(n_classes))
    return EmbedderParams(layers=layers, head=head)


def _prelu(u: np.ndarray, slope: np.ndarray) -> np.ndarray:
    return np.where(u > 0, u, slope * u)


def forward_batch(params: EmbedderParams, X: np.ndarray):
    """Embeddings for a batch plus the per-layer caches backward needs."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != params.input_dim:
        raise DimensionMismatchError(
            f"input has dim {X.shape[1]}, network expects {params.input_dim}"
        )
    acts = [X]
    pre = []
    h = X
    for layer in params.layers:
        u = h @ layer.W.T + layer.b
        h = _prelu(u, layer.slope)
        pre.append(u)
        acts.append(h)
    return h, pre, acts


def forward(params: EmbedderParams, x: np.ndarray) -> np.ndarray:
    """Embedding of a single feature vector (not yet normalized)."""
    emb, _, _ = forward_batch(params, np.asarray(x, dtype=np.float64)[None, :])
    return emb[0]


def backward(
    params: EmbedderParams, X: np.ndarray, y: np.ndarray, loss_cfg: LossConfig
) -> tuple[float, list[np.ndarray]]:
    """Mean loss and its exact gradients for every tensor in params.tensors()."""
    emb, pre, acts = forward_batch(params, X)
    out = loss_backward(params.head, Batch(X=emb, y=np.asarray(y)), loss_cfg)
    grads = _backprop(params, pre, acts, out.grad_X)
    grads.extend([out.grad_W, out.grad_b])
    return out.value, grads


def _backprop(params, pre, acts, d_emb) -> list[np.ndarray]:
    layer_grads: list[list[np.ndarray]] = []
    dh = d_emb
    for idx in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[idx]
        u = pre[idx]
        negative = u < 0
        d_slope = np.sum(np.where(negative, dh * u, 0.0), axis=0)
        du = dh * np.where(negative, layer.slope, 1.0)
        dW = du.T @ acts[idx]
        db = du.sum(axis=0)
        dh = du @ layer.W
        layer_grads.append([dW, db, d_slope])
    flat: list[np.ndarray] = []
    for grads in reversed(layer_grads):
        flat.extend(grads)
    return flat


def adam_step(
    params: EmbedderParams, grads: list[np.ndarray], state: AdamState
) -> tuple[EmbedderParams, AdamState]:
    """One bias-corrected Adam update, applied to params in place."""
    tensors = params.tensors()
    if len(grads) != len(tensors):
        raise ShapeMismatchError("gradient list does not match parameter list")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(tensors, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatchError(f"gradient shape {g.shape} != param {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def _margin_free_accuracy(
    params: EmbedderParams, emb: np.ndarray, y: np.ndarray, loss_cfg: LossConfig
) -> int:
    if loss_cfg.variant is LossVariant.SOFTMAX:
        logits = emb @ params.head.W.T + params.head.b
    else:
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        wn = params.head.W / np.linalg.norm(params.head.W, axis=1, keepdims=True)
        logits = (emb / norms) @ wn.T
    return int(np.sum(np.argmax(logits, axis=1) == y))


def train_epoch(
    params: EmbedderParams,
    state: AdamState,
    X: np.ndarray,
    y: np.ndarray,
    X_pseudo: np.ndarray | None,
    y_pseudo: np.ndarray | None,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    epoch: int,
) -> EpochStats:
    """One pass over shuffled minibatches of labeled plus pseudo-labeled rows.

    Pseudo rows are appended to the labeled set, never replacing it; the
    shuffle order is a pure function of (shuffle_seed, epoch).
    """
    if len(X) == 0:
        raise EmptyDatasetError("labeled training set is empty")
    pseudo_count = 0 if X_pseudo is None else len(X_pseudo)
    if pseudo_count:
        X_all = np.concatenate([X, X_pseudo])
        y_all = np.concatenate([np.asarray(y), np.asarray(y_pseudo)])
    else:
        X_all, y_all = np.asarray(X), np.asarray(y)

    rng = RngState(derive_seed(train_cfg.shuffle_seed, epoch))
    order = rng.permutation(len(X_all))

    total_loss = 0.0
    correct = 0
    steps = 0
    for start in range(0, len(order), train_cfg.batch_size):
        idx = order[start : start + train_cfg.batch_size]
        Xb, yb = X_all[idx], y_all[idx]
        emb, pre, acts = forward_batch(params, Xb)
        out = loss_backward(params.head, Batch(X=emb, y=yb), loss_cfg)
        grads = _backprop(params, pre, acts, out.grad_X)
        grads.extend([out.grad_W, out.grad_b])
        correct += _margin_free_accuracy(params, emb, yb, loss_cfg)
        adam_step(params, grads, state)
        total_loss += out.value * len(idx)
        steps += 1
    return EpochStats(
        mean_loss=total_loss / len(order),
        accuracy=correct / len(order),
        n_steps=steps,
        pseudo_count=pseudo_count,
    )


def embed_all(params: EmbedderParams, X: np.ndarray) -> np.ndarray:
    """L2-normalized embeddings for every row of X, order preserved."""
    emb, _, _ = forward_batch(params, X)
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms <= 1e-12):
        raise ZeroVectorError("a forward pass produced a numerically zero embedding")
    return emb / norms[:, None]


# --- checkpoint format -----------------------------------------------------
#
# Little-endian: magic "EMB1", u32 version, u32 layer count, then per layer
# u32 rows, u32 cols, rows*cols f64 weights (row-major), rows f64 bias,
# rows f64 slopes. The class head follows in the same layout (its slope slot
# is written as zeros). A trailing block stores what inference needs from the
# fitted featurizer: u8 modality code, u32 aux count, aux means f64, aux
# stds f64.


def _pack_layer(W: np.ndarray, b: np.ndarray, slope: np.ndarray) -> bytes:
    rows, cols = W.shape
    return (
        struct.pack("<II", rows, cols)
        + W.astype("<f8").tobytes()
        + b.astype("<f8").tobytes()
        + slope.astype("<f8").tobytes()
    )


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated checkpoint file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def serialize_params(
    params: EmbedderParams, modality: str, scaler: AuxScaler
) -> bytes:
    blob = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params.layers))]
    for layer in params.layers:
        blob.append(_pack_layer(layer.W, layer.b, layer.slope))
    head = params.head
    blob.append(_pack_layer(head.W, head.b, np.zeros(head.n_classes)))
    blob.append(struct.pack("<BI", _MODALITY_CODES[modality], len(scaler.mean)))
    blob.append(scaler.mean.astype("<f8").tobytes())
    blob.append(scaler.std.astype("<f8").tobytes())
    return b"".join(blob)


def deserialize_params(data: bytes) -> tuple[EmbedderParams, str, AuxScaler]:
    r = _Reader(data)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    layer_count = r.u32()
    records = []
    for _ in range(layer_count + 1):  # layers plus the head
        rows, cols = r.u32(), r.u32()
        if rows == 0 or cols == 0 or rows * cols > 1 << 28:
            raise FormatError("implausible layer shape")
        W = r.f64s(rows * cols).reshape(rows, cols)
        b = r.f64s(rows)
        slope = r.f64s(rows)
        records.append((W, b, slope))
    layers = [LayerParams(W, b, slope) for W, b, slope in records[:-1]]
    head_W, head_b, _ = records[-1]
    modality_code = struct.unpack("<B", r.take(1))[0]
    if modality_code not in _MODALITY_NAMES:
        raise FormatError("unknown modality code")
    aux_count = r.u32()
    mean = r.f64s(aux_count)
    std = r.f64s(aux_count)
    if r.pos != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    params = EmbedderParams(layers=layers, head=ClassHead(W=head_W, b=head_b))
    return params, _MODALITY_NAMES[modality_code], AuxScaler(mean=mean, std=std)
