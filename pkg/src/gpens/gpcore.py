"""Exact GP regression on one-hot targets, shared kernel across channels.

The C classes are treated as C independent GP regression outputs that share
one ensemble kernel and one noise level, so a single Cholesky factorization
of A = K + sigma2*I serves every channel.  Posterior mean and covariance are
the standard exact-inference expressions; the posterior (co)variance is
label-independent, which is what makes the predictive variance usable as an
OOD score on unlabeled data.

All linear algebra runs in float64.  Factorizations retry with diagonal
jitter starting at 1e-8 and doubling up to 1e-3 before giving up, and
predicted variances are clamped at zero from below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .errors import CholeskyFailure, DimensionMismatch, LengthMismatch
from .kernels import DeepKernelSpec, ensemble_gram
from .meanfn import MeanSpec, SoftmaxHeadMean, ZeroMean, mean_eval

_LOG_2PI = math.log(2.0 * math.pi)

#: first jitter tried when a factorization fails, and the give-up bound
JITTER_START = 1e-8
JITTER_MAX = 1e-3

#: noise floor applied on the optimizer path (HyperParams.sigma2)
SIGMA2_FLOOR = 1e-8


@dataclass(frozen=True)
class HyperParams:
    """Everything the optimizer tunes: noise, kernels, mean parameters.

    ``sigma2`` applies a 1e-8 floor so the optimizer can never drive the
    noise to exactly zero; code that legitimately wants sigma2 = 0 (e.g.
    interpolation checks) passes the raw value to the gpcore ops directly.
    """

    log_sigma2: float
    kernels: tuple[DeepKernelSpec, ...]
    mean: MeanSpec = field(default_factory=ZeroMean)

    def __post_init__(self):
        if not math.isfinite(self.log_sigma2):
            raise DimensionMismatch("log_sigma2 must be finite")
        if not self.kernels:
            raise DimensionMismatch("HyperParams needs at least one kernel")

    @property
    def sigma2(self) -> float:
        return max(math.exp(self.log_sigma2), SIGMA2_FLOOR)


@dataclass(frozen=True)
class FittedGp:
    """A conditioned GP: factorized train covariance plus residual weights.

    ``chol`` is the lower Cholesky factor of A = K_train + sigma2*I (after
    ``jitter`` was added, if any) and ``resid_weights`` is A^{-1}(Y - m),
    one column per class.  ``train_blocks[i]`` holds the float64 training
    features for ``specs[i]``.  N = 0 (pure prior) is legal.
    """

    specs: tuple[DeepKernelSpec, ...]
    mean: MeanSpec
    sigma2: float
    num_classes: int
    chol: np.ndarray
    resid_weights: np.ndarray
    train_blocks: tuple[np.ndarray, ...]
    jitter: float = 0.0

    @property
    def n_train(self) -> int:
        return self.chol.shape[0]

    @property
    def prior_variance(self) -> float:
        """Ensemble prior variance: one per unit-amplitude member."""
        return float(len(self.specs))


def chol_with_jitter(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``a``, retrying with diagonal jitter.

    Returns (L, jitter_used).  Jitter starts at 1e-8 and doubles while it
    stays <= 1e-3; past that the matrix is declared not factorizable.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=np.float64), 0.0
    try:
        return cholesky(a, lower=True), 0.0
    except LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(n)
    while jitter <= JITTER_MAX:
        try:
            return cholesky(a + jitter * eye, lower=True), jitter
        except LinAlgError:
            jitter *= 2.0
    raise CholeskyFailure(
        f"Cholesky failed for {n}x{n} matrix even with jitter up to {JITTER_MAX:g}"
    )


def _mean_matrix(
    mean: MeanSpec, mean_block: np.ndarray | None, rows: int, num_classes: int
) -> np.ndarray:
    if isinstance(mean, SoftmaxHeadMean):
        if mean_block is None:
            raise DimensionMismatch("the softmax mean needs mean-model features")
        out = mean_eval(mean, mean_block, num_classes)
    else:
        # Zero/Constant ignore feature values; only the row count matters.
        block = mean_block if mean_block is not None else np.zeros((rows, 1))
        out = mean_eval(mean, block, num_classes)
    if out.shape[0] != rows:
        raise LengthMismatch(
            f"mean features give {out.shape[0]} rows, expected {rows}"
        )
    return out


def gp_condition(
    specs: tuple[DeepKernelSpec, ...],
    mean: MeanSpec,
    train_blocks: list[np.ndarray],
    train_mean_block: np.ndarray | None,
    y: np.ndarray,
    sigma2: float,
) -> FittedGp:
    """Condition the ensemble GP on one-hot (or arbitrary real) targets.

    ``y`` is N x C; ``train_blocks[i]`` is the N x D_i block for ``specs[i]``.
    N = 0 conditions on nothing and yields the prior.
    """
    if sigma2 < 0.0:
        raise ValueError(f"sigma2 must be >= 0, got {sigma2}")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise DimensionMismatch(f"targets must be N x C, got shape {y.shape}")
    n, c = y.shape
    if c < 1:
        raise DimensionMismatch("targets need at least one class column")
    blocks = tuple(np.asarray(b, dtype=np.float64) for b in train_blocks)
    for spec, b in zip(specs, blocks):
        if b.shape[0] != n:
            raise LengthMismatch(
                f"block for model {spec.model_id!r} has {b.shape[0]} rows, targets have {n}"
            )
    if n == 0:
        return FittedGp(
            specs=tuple(specs),
            mean=mean,
            sigma2=float(sigma2),
            num_classes=c,
            chol=np.zeros((0, 0), dtype=np.float64),
            resid_weights=np.zeros((0, c), dtype=np.float64),
            train_blocks=blocks,
        )
    a = ensemble_gram(tuple(specs), list(blocks))
    a[np.diag_indices_from(a)] += sigma2
    chol, jitter = chol_with_jitter(a)
    resid = y - _mean_matrix(mean, train_mean_block, n, c)
    alpha = cho_solve((chol, True), resid)
    return FittedGp(
        specs=tuple(specs),
        mean=mean,
        sigma2=float(sigma2),
        num_classes=c,
        chol=chol,
        resid_weights=alpha,
        train_blocks=blocks,
        jitter=jitter,
    )


def gp_predict(
    fit: FittedGp,
    test_blocks: list[np.ndarray],
    test_mean_block: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean (M x C) and pointwise posterior variance (M,).

    The variance is per test point (shared across classes) and never
    negative; with no training data it is exactly the prior variance, i.e.
    the number of ensemble members.
    """
    blocks = [np.asarray(b, dtype=np.float64) for b in test_blocks]
    m_rows = blocks[0].shape[0] if blocks else 0
    mean_test = _mean_matrix(fit.mean, test_mean_block, m_rows, fit.num_classes)
    if fit.n_train == 0:
        var = np.full(m_rows, fit.prior_variance, dtype=np.float64)
        return mean_test, var
    k_xt = ensemble_gram(fit.specs, list(fit.train_blocks), blocks)  # N x M
    post_mean = mean_test + k_xt.T @ fit.resid_weights
    v = solve_triangular(fit.chol, k_xt, lower=True)
    var = fit.prior_variance - np.sum(v * v, axis=0)
    return post_mean, np.maximum(var, 0.0)


def log_marginal_likelihood(
    specs: tuple[DeepKernelSpec, ...],
    mean: MeanSpec,
    train_blocks: list[np.ndarray],
    train_mean_block: np.ndarray | None,
    y: np.ndarray,
    sigma2: float,
) -> float:
    """Exact log marginal likelihood of Y under the ensemble GP prior.

    Sums the C independent channel likelihoods sharing one factorization:
    -(1/2) tr(R' A^{-1} R) - (C/2) log|A| - (NC/2) log(2 pi) with
    A = K + sigma2*I and R = Y - m.  N = 0 gives 0 (no observations).
    """
    if sigma2 < 0.0:
        raise ValueError(f"sigma2 must be >= 0, got {sigma2}")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise DimensionMismatch(f"targets must be N x C, got shape {y.shape}")
    n, c = y.shape
    if n == 0:
        return 0.0
    blocks = [np.asarray(b, dtype=np.float64) for b in train_blocks]
    a = ensemble_gram(tuple(specs), blocks)
    a[np.diag_indices_from(a)] += sigma2
    chol, _ = chol_with_jitter(a)
    resid = y - _mean_matrix(mean, train_mean_block, n, c)
    alpha = cho_solve((chol, True), resid)
    quad = float(np.sum(resid * alpha))
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * quad - 0.5 * c * logdet - 0.5 * n * c * _LOG_2PI


def log_predictive_likelihood(
    fit: FittedGp,
    val_blocks: list[np.ndarray],
    val_mean_block: np.ndarray | None,
    y_val: np.ndarray,
    *,
    full_cov: bool = True,
) -> float:
    """Log density of held-out targets under the posterior plus noise.

    Evaluates N(Y_val_c; posterior mean_c, S) per class c with
    S = posterior covariance + sigma2*I (the observation noise applies to
    validation observations too).  ``full_cov=False`` scores each validation
    point under its marginal variance only (cheaper, ignores correlations);
    the default keeps the full M x M covariance.
    """
    y_val = np.asarray(y_val, dtype=np.float64)
    if y_val.ndim != 2 or y_val.shape[1] != fit.num_classes:
        raise DimensionMismatch(
            f"validation targets must be M x {fit.num_classes}, got shape {y_val.shape}"
        )
    m, c = y_val.shape
    if m == 0:
        return 0.0
    blocks = [np.asarray(b, dtype=np.float64) for b in val_blocks]
    if blocks[0].shape[0] != m:
        raise LengthMismatch(
            f"validation blocks have {blocks[0].shape[0]} rows, targets have {m}"
        )
    mean_val = _mean_matrix(fit.mean, val_mean_block, m, c)
    k_vv = ensemble_gram(fit.specs, blocks)
    if fit.n_train == 0:
        s = k_vv
        mu = mean_val
    else:
        k_tv = ensemble_gram(fit.specs, list(fit.train_blocks), blocks)  # N x M
        mu = mean_val + k_tv.T @ fit.resid_weights
        v = solve_triangular(fit.chol, k_tv, lower=True)
        s = k_vv - v.T @ v
        s = 0.5 * (s + s.T)
    e = y_val - mu
    if full_cov:
        s = s.copy()
        s[np.diag_indices_from(s)] += fit.sigma2
        chol_s, _ = chol_with_jitter(s)
        beta = cho_solve((chol_s, True), e)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol_s))))
        return -0.5 * float(np.sum(e * beta)) - 0.5 * c * logdet - 0.5 * m * c * _LOG_2PI
    diag = np.diag(s) + fit.sigma2
    if np.any(diag <= 0.0):
        raise CholeskyFailure("non-positive marginal predictive variance")
    return float(
        -0.5 * np.sum((e * e) / diag[:, None])
        - 0.5 * c * np.sum(np.log(diag))
        - 0.5 * m * c * _LOG_2PI
    )
