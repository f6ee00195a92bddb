"""Prior mean functions over the C output channels.

Three variants: identically zero, a learnable per-class constant, and the
zero-shot softmax mean m(x) = gamma * softmax(tau * f(x)' W) built from a
linear zero-shot head W.  The softmax uses the mean model's embeddings only;
temperature tau sharpens the head's scores and gamma scales the resulting
probabilities, both parameterized in log space so they stay positive.

The softmax is computed in float64 with row-max subtraction; rows sum to 1
to within 1e-12, every entry of the softmax mean lies in [0, gamma], and
tau -> 0 recovers the uniform vector gamma/C.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .embedstore import ZeroShotHead
from .errors import DimensionMismatch

__all__ = [
    "ZeroMean",
    "ConstantMean",
    "SoftmaxHeadMean",
    "MeanSpec",
    "mean_eval",
    "softmax_mean_param_grads",
    "constant_mean_param_grad",
]


@dataclass(frozen=True)
class ZeroMean:
    """m(x) = 0 for every class."""


@dataclass(frozen=True)
class ConstantMean:
    """m(x) = values, one learnable constant per class (input-independent)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size < 1 or not np.all(np.isfinite(v)):
            raise DimensionMismatch("constant mean needs >= 1 finite per-class value")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class SoftmaxHeadMean:
    """m(x) = gamma * softmax(tau * f(x)' W) with W a frozen zero-shot head."""

    head: ZeroShotHead
    log_tau: float = math.log(100.0)
    log_gamma: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.log_tau) and math.isfinite(self.log_gamma)):
            raise DimensionMismatch("log_tau and log_gamma must be finite")

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)

    @property
    def gamma(self) -> float:
        return math.exp(self.log_gamma)


MeanSpec = Union[ZeroMean, ConstantMean, SoftmaxHeadMean]


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _head_scores(spec: SoftmaxHeadMean, features: np.ndarray) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != spec.head.dim:
        raise DimensionMismatch(
            f"mean features must be M x {spec.head.dim}, got shape {feats.shape}"
        )
    return feats @ spec.head.weights.astype(np.float64)


def mean_eval(spec: MeanSpec, features: np.ndarray | None, num_classes: int) -> np.ndarray:
    """Evaluate the prior mean, returning an M x C float64 matrix.

    ``features`` are the mean model's embeddings; Zero and Constant ignore
    their values but still use the row count (pass an M x D block, or None
    for M = 0).
    """
    if num_classes < 1:
        raise DimensionMismatch("num_classes must be >= 1")
    m = 0 if features is None else np.asarray(features).shape[0]
    if isinstance(spec, ZeroMean):
        return np.zeros((m, num_classes), dtype=np.float64)
    if isinstance(spec, ConstantMean):
        if spec.values.size != num_classes:
            raise DimensionMismatch(
                f"constant mean has {spec.values.size} entries for {num_classes} classes"
            )
        return np.tile(spec.values, (m, 1))
    if spec.head.num_classes != num_classes:
        raise DimensionMismatch(
            f"head has {spec.head.num_classes} columns for {num_classes} classes"
        )
    if m == 0:
        return np.zeros((0, num_classes), dtype=np.float64)
    probs = _softmax_rows(spec.tau * _head_scores(spec, features))
    return spec.gamma * probs


def softmax_mean_param_grads(
    spec: SoftmaxHeadMean, features: np.ndarray, adjoint: np.ndarray
) -> tuple[float, float]:
    """d(loss)/d(log tau) and d(loss)/d(log gamma) for the softmax mean.

    ``adjoint`` is dL/dm, same shape as the mean output.  With s the softmax
    rows and z the head scores: dm/d(tau) = gamma * s * (z - sum_k s_k z_k),
    and dm/d(log gamma) = m itself.
    """
    if features.shape[0] == 0:
        return 0.0, 0.0
    z = _head_scores(spec, features)
    s = _softmax_rows(spec.tau * z)
    adjoint = np.asarray(adjoint, dtype=np.float64)
    if adjoint.shape != s.shape:
        raise DimensionMismatch(
            f"adjoint shape {adjoint.shape} does not match mean output {s.shape}"
        )
    zbar = np.sum(s * z, axis=1, keepdims=True)
    d_tau = spec.gamma * float(np.sum(adjoint * s * (z - zbar)))
    d_log_tau = spec.tau * d_tau
    d_log_gamma = float(np.sum(adjoint * (spec.gamma * s)))
    return d_log_tau, d_log_gamma


def constant_mean_param_grad(adjoint: np.ndarray) -> np.ndarray:
    """d(loss)/d(values) for the constant mean: column sums of the adjoint."""
    return np.asarray(adjoint, dtype=np.float64).sum(axis=0)
