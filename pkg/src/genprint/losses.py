"""Classification losses over a class head: plain softmax, normalized-cosine
softmax (NormFace), and additive-angular-margin softmax (ArcFace).

Forward values and exact analytic gradients are provided for all three
variants; the margin applies to the true class during training only.

Conventions: the head holds one weight row per class. For the normalized
variants both weight rows and features are L2-normalized on the fly and the
bias is ignored. The margin path computes the true-class logit as
``s * cos(theta + m)`` with ``theta + m`` clamped at pi; the clamp region and
the arccos endpoints contribute zero gradient (subgradient choice).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import DimensionMismatchError, ZeroVectorError
from .numeric import ZERO_NORM_TOL, softmax_rows, stable_softmax


class LossVariant(str, Enum):
    SOFTMAX = "softmax"
    NORMFACE = "normface"
    ARCFACE = "arcface"


class LossConfig(BaseModel):
    """Loss selector plus the cosine-logit scale s and angular margin m."""

    model_config = ConfigDict(extra="forbid")

    variant: LossVariant = LossVariant.ARCFACE
    s: float = Field(default=30.0, gt=0.0)
    m: float = Field(default=0.5, ge=0.0, le=math.pi / 2)
    cos_clamp_eps: float = Field(default=1e-7, gt=0.0, lt=1e-2)


@dataclass
class ClassHead:
    """Per-class weight rows W (n x d) and bias b (n,); b is used by SOFTMAX only."""

    W: np.ndarray
    b: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]


@dataclass
class Batch:
    """Feature rows X (N x d) with integer class labels y (N,)."""

    X: np.ndarray
    y: np.ndarray


@dataclass
class LossOutput:
    value: float
    logits: np.ndarray
    thetas: np.ndarray | None
    grad_W: np.ndarray | None = None
    grad_b: np.ndarray | None = None
    grad_X: np.ndarray | None = None


def _check_batch(head: ClassHead, X: np.ndarray, y: np.ndarray | None) -> None:
    if X.ndim != 2 or X.shape[1] != head.dim:
        raise DimensionMismatchError(
            f"features have shape {X.shape}, head expects dim {head.dim}"
        )
    if y is not None:
        if len(y) != X.shape[0]:
            raise DimensionMismatchError("label count does not match batch size")
        if len(y) and (y.min() < 0 or y.max() >= head.n_classes):
            raise DimensionMismatchError("label index out of range")


def _row_norms(M: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms <= ZERO_NORM_TOL):
        raise ZeroVectorError(f"cannot normalize zero {what} row")
    return norms


def _cosines(head: ClassHead, X: np.ndarray):
    """Normalized rows and the clipped cosine matrix between them."""
    xn = _row_norms(X, "feature")
    wn = _row_norms(head.W, "weight")
    Xh = X / xn[:, None]
    Wh = head.W / wn[:, None]
    C = np.clip(Xh @ Wh.T, -1.0, 1.0)
    return Xh, Wh, xn, wn, C


def compute_logits(
    head: ClassHead, batch: Batch, cfg: LossConfig, training: bool
) -> np.ndarray:
    """Logit matrix (N x n) for the configured variant.

    With training=True the ARCFACE variant replaces each true-class entry by
    s*cos(theta + m); with training=False it is identical to NORMFACE.
    """
    X = np.asarray(batch.X, dtype=np.float64)
    y = None if batch.y is None else np.asarray(batch.y, dtype=np.int64)
    _check_batch(head, X, y if training else y)
    if cfg.variant is LossVariant.SOFTMAX:
        return X @ head.W.T + head.b
    _, _, _, _, C = _cosines(head, X)
    logits = cfg.s * C
    if cfg.variant is LossVariant.ARCFACE and training:
        if y is None:
            raise DimensionMismatchError("margin path requires labels")
        rows = np.arange(len(y))
        theta = np.arccos(C[rows, y])
        logits[rows, y] = cfg.s * np.cos(np.minimum(theta + cfg.m, math.pi))
    return logits


def _forward_parts(head: ClassHead, batch: Batch, cfg: LossConfig):
    X = np.asarray(batch.X, dtype=np.float64)
    y = np.asarray(batch.y, dtype=np.int64)
    _check_batch(head, X, y)
    rows = np.arange(len(y))

    if cfg.variant is LossVariant.SOFTMAX:
        logits = X @ head.W.T + head.b
        parts = (X, y, rows, logits, None, None)
    else:
        Xh, Wh, xn, wn, C = _cosines(head, X)
        logits = cfg.s * C
        if cfg.variant is LossVariant.ARCFACE:
            theta_t = np.arccos(C[rows, y])
            logits[rows, y] = cfg.s * np.cos(np.minimum(theta_t + cfg.m, math.pi))
        thetas = np.arccos(C)
        parts = (X, y, rows, logits, thetas, (Xh, Wh, xn, wn, C))

    z = parts[3]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    value = float(np.mean(lse - z[rows, y]))
    return value, parts


def loss_forward(head: ClassHead, batch: Batch, cfg: LossConfig) -> LossOutput:
    """Mean negative log-likelihood of the true classes (training logits)."""
    value, (_, _, _, logits, thetas, _) = _forward_parts(head, batch, cfg)
    return LossOutput(value=value, logits=logits, thetas=thetas)


def loss_backward(head: ClassHead, batch: Batch, cfg: LossConfig) -> LossOutput:
    """Forward value plus exact gradients of the mean loss.

    The gradient chain for the normalized variants runs through both row
    normalizations: with c = <w_hat, x_hat>,

        dc/dx = (w_hat - c * x_hat) / ||x||
        dc/dw = (x_hat - c * w_hat) / ||w||

    and the margin entry contributes dz/dc = s * sin(theta + m) / sin(theta),
    zeroed where |cos| is within cos_clamp_eps of 1 or theta + m >= pi.
    """
    value, (X, y, rows, logits, thetas, norm_parts) = _forward_parts(head, batch, cfg)
    N = len(y)
    P = softmax_rows(logits)
    G = P.copy()
    G[rows, y] -= 1.0
    G /= N

    if cfg.variant is LossVariant.SOFTMAX:
        grad_W = G.T @ X
        grad_b = G.sum(axis=0)
        grad_X = G @ head.W
        return LossOutput(value, logits, thetas, grad_W, grad_b, grad_X)

    Xh, Wh, xn, wn, C = norm_parts
    Gc = cfg.s * G
    if cfg.variant is LossVariant.ARCFACE:
        c_t = C[rows, y]
        theta_t = np.arccos(c_t)
        interior = (np.abs(c_t) < 1.0 - cfg.cos_clamp_eps) & (
            theta_t + cfg.m < math.pi
        )
        sin_t = np.sqrt(1.0 - c_t * c_t)
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(interior, np.sin(theta_t + cfg.m) / sin_t, 0.0)
        Gc[rows, y] *= factor

    GC = Gc * C
    grad_X = (Gc @ Wh - GC.sum(axis=1, keepdims=True) * Xh) / xn[:, None]
    grad_W = (Gc.T @ Xh - GC.sum(axis=0)[:, None] * Wh) / wn[:, None]
    grad_b = np.zeros_like(head.b)
    return LossOutput(value, logits, thetas, grad_W, grad_b, grad_X)


def inference_confidence(
    head: ClassHead, x: np.ndarray, cfg: LossConfig
) -> tuple[int, np.ndarray]:
    """Predicted class and softmax probabilities from margin-free logits.

    Ties resolve to the lowest class index.
    """
    x = np.asarray(x, dtype=np.float64)
    batch = Batch(X=x[None, :], y=np.zeros(1, dtype=np.int64))
    logits = compute_logits(head, batch, cfg, training=False)[0]
    probs = stable_softmax(logits)
    return int(np.argmax(probs)), probs


def inference_probabilities(
    head: ClassHead, X: np.ndarray, cfg: LossConfig
) -> np.ndarray:
    """Margin-free softmax probabilities for a whole matrix of features."""
    X = np.asarray(X, dtype=np.float64)
    batch = Batch(X=X, y=np.zeros(X.shape[0], dtype=np.int64))
    logits = compute_logits(head, batch, cfg, training=False)
    return softmax_rows(logits)
