"""Stationary base kernels, per-model deep kernels, and ensemble sums.

A deep kernel evaluates a unit-amplitude base kernel on length-scale-warped
embeddings: k(x, x') = ktilde(f(x)/l, f(x')/l) with one positive length
scale per embedding dimension (optionally tied to a single scalar).  The
ensemble kernel is the plain sum of the member kernels, so an ensemble
self-gram has every diagonal entry exactly equal to the number of members.

Distances are computed by direct coordinate differences (scipy ``cdist``),
never via the x'x + y'y - 2x'y expansion, so coincident points give exactly
zero distance and the base kernels return exactly 1 there.  All gram
arithmetic is float64.

Besides the forward grams this module owns d(gram)/d(log length-scale)
contractions: given the adjoint dL/dK of a loss w.r.t. one model's gram
block, :func:`lengthscale_grad` returns dL/d(log l) for that model's length
scales in closed form (derivations in the function body).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, LengthMismatch, ModelCountMismatch

_SQRT5 = math.sqrt(5.0)


class BaseKernelKind(enum.Enum):
    RBF = "rbf"
    LAPLACIAN = "laplacian"
    MATERN52 = "matern52"


@dataclass(frozen=True)
class DeepKernelSpec:
    """One ensemble member: which embedding table it reads and its scales.

    ``log_lengthscales`` has one entry per embedding dimension.  With
    ``scalar_lengthscale`` every entry must be equal (a single tied scale,
    broadcast across dimensions); the optimizer then treats it as one
    parameter whose gradient is the sum over dimensions.
    """

    model_id: str
    kind: BaseKernelKind
    log_lengthscales: np.ndarray
    scalar_lengthscale: bool = False

    def __post_init__(self):
        lls = np.asarray(self.log_lengthscales, dtype=np.float64).ravel()
        if lls.size < 1:
            raise DimensionMismatch("log_lengthscales must have at least one entry")
        if not np.all(np.isfinite(lls)):
            raise DimensionMismatch(
                "log_lengthscales must be finite", model_id=self.model_id
            )
        if self.scalar_lengthscale and not np.all(lls == lls[0]):
            raise DimensionMismatch(
                "scalar_lengthscale requires identical entries", model_id=self.model_id
            )
        lls = lls.copy()
        lls.setflags(write=False)
        object.__setattr__(self, "log_lengthscales", lls)

    @property
    def dim(self) -> int:
        return self.log_lengthscales.size

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)


# ---------------------------------------------------------------------------
# Forward evaluation
# ---------------------------------------------------------------------------


def base_kernel_pair(kind: BaseKernelKind, a: np.ndarray, b: np.ndarray) -> float:
    """Evaluate one base kernel on a single (already warped) pair."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if kind is BaseKernelKind.RBF:
        return math.exp(-0.5 * float(d @ d))
    if kind is BaseKernelKind.LAPLACIAN:
        return math.exp(-float(np.sum(np.abs(d))))
    r = math.sqrt(float(d @ d))
    u = _SQRT5 * r
    return (1.0 + u + u * u / 3.0) * math.exp(-u)


def _base_gram(kind: BaseKernelKind, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    if kind is BaseKernelKind.RBF:
        return np.exp(-0.5 * cdist(a, b, metric="sqeuclidean"))
    if kind is BaseKernelKind.LAPLACIAN:
        return np.exp(-cdist(a, b, metric="cityblock"))
    u = _SQRT5 * cdist(a, b, metric="euclidean")
    return (1.0 + u + u * u / 3.0) * np.exp(-u)


def _warp(spec: DeepKernelSpec, feats: np.ndarray) -> np.ndarray:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != spec.dim:
        raise DimensionMismatch(
            f"features for model {spec.model_id!r} must be N x {spec.dim}, "
            f"got shape {feats.shape}"
        )
    return feats / spec.lengthscales


def deep_kernel_gram(
    spec: DeepKernelSpec, feats_a: np.ndarray, feats_b: np.ndarray | None = None
) -> np.ndarray:
    """Gram block for one ensemble member.

    With ``feats_b=None`` the result is the self-gram: symmetrized exactly
    ((G + G') / 2) and with the unit diagonal written in directly.
    """
    wa = _warp(spec, feats_a)
    if feats_b is None:
        g = _base_gram(spec.kind, wa, wa)
        g = 0.5 * (g + g.T)
        np.fill_diagonal(g, 1.0)
        return g
    return _base_gram(spec.kind, wa, _warp(spec, feats_b))


def ensemble_gram(
    specs: tuple[DeepKernelSpec, ...] | list[DeepKernelSpec],
    blocks_a: list[np.ndarray],
    blocks_b: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Sum of member grams; ``blocks_a[i]`` feeds ``specs[i]``.

    Every member must see the same number of rows.  With ``blocks_b=None``
    this is the ensemble self-gram: symmetric, diagonal exactly len(specs).
    """
    if len(specs) == 0:
        raise ModelCountMismatch("ensemble needs at least one kernel")
    if len(blocks_a) != len(specs) or (blocks_b is not None and len(blocks_b) != len(specs)):
        raise ModelCountMismatch(
            f"{len(specs)} kernels but {len(blocks_a)} feature blocks"
        )
    rows_a = {b.shape[0] for b in blocks_a}
    if len(rows_a) != 1:
        raise LengthMismatch(f"feature blocks disagree on row count: {sorted(rows_a)}")
    if blocks_b is not None:
        rows_b = {b.shape[0] for b in blocks_b}
        if len(rows_b) != 1:
            raise LengthMismatch(f"feature blocks disagree on row count: {sorted(rows_b)}")
    total = None
    for i, spec in enumerate(specs):
        g = deep_kernel_gram(spec, blocks_a[i], None if blocks_b is None else blocks_b[i])
        total = g if total is None else total + g
    if blocks_b is None:
        total = 0.5 * (total + total.T)
        np.fill_diagonal(total, float(len(specs)))
    return total


# ---------------------------------------------------------------------------
# Length-scale gradients
# ---------------------------------------------------------------------------


def _weighted_sq_diffs(h: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> np.ndarray:
    # sum_pq H_pq (a_pd - b_qd)^2, vectorized over d via row/column sums:
    #   = sum_p a_pd^2 r_p + sum_q b_qd^2 c_q - 2 sum_p a_pd (H b)_pd
    r = h.sum(axis=1)
    c = h.sum(axis=0)
    return (wa * wa).T @ r + (wb * wb).T @ c - 2.0 * np.sum(wa * (h @ wb), axis=0)


def _weighted_abs_diffs(h: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> np.ndarray:
    # sum_pq H_pq |a_pd - b_qd| has no rank-one shortcut; chunk over d to keep
    # the P x Q x chunk intermediate around a few million doubles.
    p, q = h.shape
    d = wa.shape[1]
    out = np.empty(d, dtype=np.float64)
    step = max(1, int(4_000_000 // max(1, p * q)))
    for s in range(0, d, step):
        diff = np.abs(wa[:, None, s : s + step] - wb[None, :, s : s + step])
        out[s : s + step] = np.einsum("pq,pqd->d", h, diff)
    return out


def lengthscale_grad(
    spec: DeepKernelSpec,
    weights: np.ndarray,
    feats_a: np.ndarray,
    feats_b: np.ndarray | None = None,
    gram: np.ndarray | None = None,
) -> np.ndarray:
    """Contract an adjoint against d(gram)/d(log length-scales).

    ``weights`` is dL/dK for this member's P x Q gram block; the return value
    is dL/d(log l), shape (D,).  Writing ud = (a_d - b_d)/l_d for the warped
    coordinate difference of one pair:

    * RBF:      dK/d(log l_d) = K * ud^2
    * Laplacian dK/d(log l_d) = K * |ud|
    * Matern52: dK/d(log l_d) = (5/3) (1 + u) exp(-u) * ud^2,  u = sqrt(5) r

    so each reduces to a weighted sum of squared (or absolute) warped
    coordinate differences with pair weights H:
    H = W*K for RBF/Laplacian, H = W*(5/3)(1+u)exp(-u) for Matern52.
    Passing ``gram`` (the member's forward gram block) skips recomputing it.
    """
    wa = _warp(spec, feats_a)
    wb = wa if feats_b is None else _warp(spec, feats_b)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (wa.shape[0], wb.shape[0]):
        raise DimensionMismatch(
            f"adjoint shape {weights.shape} does not match gram block "
            f"({wa.shape[0]}, {wb.shape[0]})"
        )
    if weights.size == 0:
        return np.zeros(spec.dim, dtype=np.float64)
    if spec.kind is BaseKernelKind.MATERN52:
        u = _SQRT5 * cdist(wa, wb, metric="euclidean")
        h = weights * ((5.0 / 3.0) * (1.0 + u) * np.exp(-u))
        return _weighted_sq_diffs(h, wa, wb)
    if gram is None:
        gram = _base_gram(spec.kind, wa, wb)
    h = weights * gram
    if spec.kind is BaseKernelKind.RBF:
        return _weighted_sq_diffs(h, wa, wb)
    return _weighted_abs_diffs(h, wa, wb)
