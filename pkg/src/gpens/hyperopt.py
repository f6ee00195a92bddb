"""Hyper-parameter optimization: objectives, gradients, Adam, and fit().

Both objectives are maximized over one flat parameter vector
``[log_sigma2, per-kernel log length-scales..., mean parameters...]``:

* marginal: log marginal likelihood of the train split;
* predictive: log density of the val split under the posterior
  conditioned on the train split (plus observation noise).

Gradients are exact closed forms, not finite differences and not autodiff.
The derivation works through matrix adjoints: for the Gaussian log density
the derivative w.r.t. the covariance A is 0.5 (alpha alpha' - C A^{-1})
with alpha = A^{-1}(Y - m), and for the predictive objective the chain rule
pushes that adjoint through the posterior-mean and Schur-complement
expressions onto the train/train, train/val and val/val blocks of the
joint gram (the block algebra is spelled out in ``_predictive`` below).
Kernel blocks then contract their adjoints via ``kernels.lengthscale_grad``
and the mean parameters via the helpers in ``meanfn``.

The optimizer is plain Adam (ascent) with a cosine-decayed step size
``lr_t = lr0 * 0.5 * (1 + cos(pi * t / steps))``, t counted from zero, so
the first step uses lr0 and the last one is nearly zero.  A non-finite
objective or gradient rolls the parameters, Adam moments, and step counter
back to the previous state and halves the base learning rate; a second
non-finite evaluation aborts with the step index in the error.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve

from .embedstore import TaskBundle, ZeroShotHead
from .errors import DimensionMismatch, EmptyInput, ManifestError, NonFiniteGradient
from .gpcore import SIGMA2_FLOOR, FittedGp, HyperParams, chol_with_jitter, gp_condition
from .kernels import BaseKernelKind, DeepKernelSpec, deep_kernel_gram, lengthscale_grad
from .meanfn import (
    ConstantMean,
    MeanSpec,
    SoftmaxHeadMean,
    ZeroMean,
    constant_mean_param_grad,
    mean_eval,
    softmax_mean_param_grads,
)

_LOG_2PI = math.log(2.0 * math.pi)

#: defaults shared with the CLI
INIT_SIGMA2 = 0.01
INIT_TAU = 100.0
INIT_GAMMA = 1.0
INIT_LOG_LENGTHSCALE_STD = 0.5


class Objective(enum.Enum):
    MARGINAL = "marginal"
    PREDICTIVE = "predictive"


class MeanVariant(enum.Enum):
    ZERO = "zero"
    CONSTANT = "constant"
    SOFTMAX = "zero-shot-softmax"


class RefitOn(enum.Enum):
    TRAIN = "train"
    TRAIN_VAL = "train+val"


@dataclass(frozen=True)
class OptimConfig:
    objective: Objective = Objective.PREDICTIVE
    steps: int = 100
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise DimensionMismatch(f"steps must be >= 1, got {self.steps}")
        if not (self.learning_rate > 0.0 and math.isfinite(self.learning_rate)):
            raise DimensionMismatch(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class OptimTrace:
    """Per-step record (pre-update objective, gradient L2 norm, step size)."""

    values: tuple[float, ...]
    grad_norms: tuple[float, ...]
    learning_rates: tuple[float, ...]
    final_value: float


@dataclass
class ObjectiveData:
    """Feature/target arrays an objective needs, already split.

    ``train_blocks[i]`` belongs to kernel i; ``*_mean_block`` carries the
    mean model's features for the same rows.
    """

    train_blocks: list[np.ndarray]
    train_mean_block: np.ndarray
    y_train: np.ndarray
    val_blocks: list[np.ndarray] | None = None
    val_mean_block: np.ndarray | None = None
    y_val: np.ndarray | None = None

    @classmethod
    def from_bundle(cls, bundle: TaskBundle) -> "ObjectiveData":
        data = cls(
            train_blocks=bundle.features_at(bundle.train_idx),
            train_mean_block=bundle.mean_features_at(bundle.train_idx),
            y_train=bundle.targets_at(bundle.train_idx),
        )
        if bundle.val_idx.size:
            data.val_blocks = bundle.features_at(bundle.val_idx)
            data.val_mean_block = bundle.mean_features_at(bundle.val_idx)
            data.y_val = bundle.targets_at(bundle.val_idx)
        return data


# ---------------------------------------------------------------------------
# Initialization and flat-vector packing
# ---------------------------------------------------------------------------


def init_hyperparams(
    model_dims: list[tuple[str, int]],
    *,
    kind: BaseKernelKind = BaseKernelKind.RBF,
    scalar_lengthscale: bool = False,
    mean_variant: MeanVariant = MeanVariant.SOFTMAX,
    head: ZeroShotHead | None = None,
    num_classes: int | None = None,
    seed: int = 0,
) -> HyperParams:
    """Seeded starting point: sigma2 = 0.01, tau = 100, gamma = 1, and
    log length-scales drawn i.i.d. Normal(0, 0.5^2) from
    ``numpy.random.default_rng(seed)``, one draw per dimension (a single
    broadcast draw per model under the scalar constraint), models in
    listed order."""
    rng = np.random.default_rng(seed)
    kernels = []
    for model_id, dim in model_dims:
        if scalar_lengthscale:
            lls = np.full(dim, rng.normal(0.0, INIT_LOG_LENGTHSCALE_STD))
        else:
            lls = rng.normal(0.0, INIT_LOG_LENGTHSCALE_STD, size=dim)
        kernels.append(
            DeepKernelSpec(
                model_id=model_id,
                kind=kind,
                log_lengthscales=lls,
                scalar_lengthscale=scalar_lengthscale,
            )
        )
    mean: MeanSpec
    if mean_variant is MeanVariant.ZERO:
        mean = ZeroMean()
    elif mean_variant is MeanVariant.CONSTANT:
        if num_classes is None:
            raise DimensionMismatch("constant mean needs num_classes")
        mean = ConstantMean(values=np.zeros(num_classes))
    else:
        if head is None:
            raise ManifestError("the zero-shot softmax mean needs a head")
        mean = SoftmaxHeadMean(head=head, log_tau=math.log(INIT_TAU), log_gamma=math.log(INIT_GAMMA))
    return HyperParams(log_sigma2=math.log(INIT_SIGMA2), kernels=tuple(kernels), mean=mean)


def pack_params(hyper: HyperParams) -> np.ndarray:
    """Flatten to [log_sigma2 | kernel log scales... | mean params...]."""
    parts = [np.array([hyper.log_sigma2])]
    for k in hyper.kernels:
        parts.append(k.log_lengthscales[:1] if k.scalar_lengthscale else k.log_lengthscales)
    if isinstance(hyper.mean, ConstantMean):
        parts.append(hyper.mean.values)
    elif isinstance(hyper.mean, SoftmaxHeadMean):
        parts.append(np.array([hyper.mean.log_tau, hyper.mean.log_gamma]))
    return np.concatenate(parts).astype(np.float64)


def unpack_params(x: np.ndarray, template: HyperParams) -> HyperParams:
    """Inverse of :func:`pack_params`; ``template`` fixes the structure."""
    x = np.asarray(x, dtype=np.float64)
    pos = 1
    kernels = []
    for k in template.kernels:
        if k.scalar_lengthscale:
            lls = np.full(k.dim, x[pos])
            pos += 1
        else:
            lls = x[pos : pos + k.dim].copy()
            pos += k.dim
        kernels.append(replace(k, log_lengthscales=lls))
    mean: MeanSpec = template.mean
    if isinstance(template.mean, ConstantMean):
        c = template.mean.values.size
        mean = ConstantMean(values=x[pos : pos + c].copy())
        pos += c
    elif isinstance(template.mean, SoftmaxHeadMean):
        mean = replace(template.mean, log_tau=float(x[pos]), log_gamma=float(x[pos + 1]))
        pos += 2
    if pos != x.size:
        raise DimensionMismatch(f"parameter vector has {x.size} entries, expected {pos}")
    return HyperParams(log_sigma2=float(x[0]), kernels=tuple(kernels), mean=mean)


def _pack_grads(
    hyper: HyperParams,
    g_log_sigma2: float,
    kernel_grads: list[np.ndarray],
    mean_grads: np.ndarray | None,
) -> np.ndarray:
    parts = [np.array([g_log_sigma2])]
    for k, g in zip(hyper.kernels, kernel_grads):
        parts.append(np.array([g.sum()]) if k.scalar_lengthscale else g)
    if mean_grads is not None:
        parts.append(mean_grads)
    return np.concatenate(parts)


def _sigma2_with_grad_factor(hyper: HyperParams) -> tuple[float, float]:
    # Below the floor the effective sigma2 is constant, so its gradient dies.
    raw = math.exp(hyper.log_sigma2)
    return (SIGMA2_FLOOR, 0.0) if raw < SIGMA2_FLOOR else (raw, raw)


def _mean_grads(mean: MeanSpec, mean_block: np.ndarray, adjoint: np.ndarray) -> np.ndarray | None:
    if isinstance(mean, ConstantMean):
        return constant_mean_param_grad(adjoint)
    if isinstance(mean, SoftmaxHeadMean):
        d_log_tau, d_log_gamma = softmax_mean_param_grads(mean, mean_block, adjoint)
        return np.array([d_log_tau, d_log_gamma])
    return None


def _require_finite_matrix(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteGradient(f"{what} contains non-finite entries")


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


def _marginal(hyper: HyperParams, data: ObjectiveData) -> tuple[float, np.ndarray]:
    y = data.y_train
    n, c = y.shape
    sigma2, ds2 = _sigma2_with_grad_factor(hyper)
    blocks = data.train_blocks
    grams = [deep_kernel_gram(k, b) for k, b in zip(hyper.kernels, blocks)]
    a = sum(grams) + sigma2 * np.eye(n)
    _require_finite_matrix(a, "train covariance")
    chol, _ = chol_with_jitter(a)
    resid = y - mean_eval(hyper.mean, data.train_mean_block, c)
    alpha = cho_solve((chol, True), resid)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    value = -0.5 * float(np.sum(resid * alpha)) - 0.5 * c * logdet - 0.5 * n * c * _LOG_2PI

    a_inv = cho_solve((chol, True), np.eye(n))
    w_a = 0.5 * (alpha @ alpha.T - c * a_inv)  # dL/dA
    kernel_grads = [
        lengthscale_grad(k, w_a, b, gram=g) for k, b, g in zip(hyper.kernels, blocks, grams)
    ]
    grad = _pack_grads(
        hyper,
        ds2 * float(np.trace(w_a)),
        kernel_grads,
        _mean_grads(hyper.mean, data.train_mean_block, alpha),
    )
    return value, grad


def _predictive(hyper: HyperParams, data: ObjectiveData) -> tuple[float, np.ndarray]:
    if data.y_val is None or data.y_val.shape[0] == 0:
        raise EmptyInput("the predictive objective needs a non-empty validation split")
    n, c = data.y_train.shape
    m = data.y_val.shape[0]
    sigma2, ds2 = _sigma2_with_grad_factor(hyper)

    # One joint gram per kernel over [train; val] rows; slices share storage.
    full_blocks = [np.vstack([t, v]) for t, v in zip(data.train_blocks, data.val_blocks)]
    grams = [deep_kernel_gram(k, b) for k, b in zip(hyper.kernels, full_blocks)]
    k_full = sum(grams)
    _require_finite_matrix(k_full, "joint covariance")
    a = k_full[:n, :n] + sigma2 * np.eye(n)
    k_tv = k_full[:n, n:]
    k_vv = k_full[n:, n:]

    mean_block_full = np.vstack([data.train_mean_block, data.val_mean_block])
    mean_full = mean_eval(hyper.mean, mean_block_full, c)
    resid = data.y_train - mean_full[:n]

    chol_a, _ = chol_with_jitter(a)
    alpha = cho_solve((chol_a, True), resid)  # A^{-1} R
    b = cho_solve((chol_a, True), k_tv)  # A^{-1} K_tv
    mu = mean_full[n:] + k_tv.T @ alpha
    s = k_vv - k_tv.T @ b + sigma2 * np.eye(m)
    s = 0.5 * (s + s.T)
    chol_s, _ = chol_with_jitter(s)
    e = data.y_val - mu
    beta = cho_solve((chol_s, True), e)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol_s))))
    value = -0.5 * float(np.sum(e * beta)) - 0.5 * c * logdet - 0.5 * m * c * _LOG_2PI

    # Adjoints. With W_S = dL/dS, the gram-block adjoints are
    #   dL/dK_vv = W_S
    #   dL/dK_tv = alpha beta' - 2 B W_S            (counted once per
    #              unordered pair: split below across the tv and vt blocks)
    #   dL/dK_tt = -(B beta) alpha' + B W_S B'
    # and dL/dsigma2 = tr(dL/dK_tt) + tr(W_S).
    s_inv = cho_solve((chol_s, True), np.eye(m))
    w_s = 0.5 * (beta @ beta.T - c * s_inv)
    b_beta = b @ beta
    w_tt = -b_beta @ alpha.T + b @ w_s @ b.T
    w_joint = np.empty((n + m, n + m), dtype=np.float64)
    w_joint[:n, :n] = w_tt
    w_joint[:n, n:] = -b @ w_s
    w_joint[n:, :n] = beta @ alpha.T - w_s @ b.T
    w_joint[n:, n:] = w_s

    kernel_grads = [
        lengthscale_grad(k, w_joint, fb, gram=g)
        for k, fb, g in zip(hyper.kernels, full_blocks, grams)
    ]
    mean_adjoint = np.vstack([-b_beta, beta])
    grad = _pack_grads(
        hyper,
        ds2 * (float(np.trace(w_tt)) + float(np.trace(w_s))),
        kernel_grads,
        _mean_grads(hyper.mean, mean_block_full, mean_adjoint),
    )
    return value, grad


def objective_and_gradient(
    config: OptimConfig, hyper: HyperParams, data: ObjectiveData
) -> tuple[float, np.ndarray]:
    """Objective value and its gradient in ``pack_params`` order.

    Raises NonFiniteGradient when the value or any gradient entry is
    NaN/Inf; the Adam loop treats that as its rollback signal.
    """
    if config.objective is Objective.MARGINAL:
        value, grad = _marginal(hyper, data)
    else:
        value, grad = _predictive(hyper, data)
    if not math.isfinite(value):
        raise NonFiniteGradient(f"objective evaluated to {value!r}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains non-finite entries")
    return value, grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def _run_adam(fn, x0: np.ndarray, config: OptimConfig):
    """Maximize ``fn`` (returning (value, grad)) with Adam + cosine decay.

    Returns (x, values, grad_norms, learning_rates); each list has exactly
    ``config.steps`` entries (the evaluation preceding each applied update).
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    t_adam = 0
    base_lr = config.learning_rate
    snapshot = None
    retried = False
    values: list[float] = []
    grad_norms: list[float] = []
    lrs: list[float] = []
    while len(values) < config.steps:
        step = len(values)
        try:
            value, grad = fn(x)
        except NonFiniteGradient as exc:
            if retried or snapshot is None:
                raise NonFiniteGradient(
                    f"non-finite objective at step {step} "
                    f"(after learning-rate halving): {exc}"
                )
            x, m, v, t_adam = snapshot
            base_lr *= 0.5
            retried = True
            continue
        lr = base_lr * 0.5 * (1.0 + math.cos(math.pi * step / config.steps))
        values.append(value)
        grad_norms.append(float(np.linalg.norm(grad)))
        lrs.append(lr)
        snapshot = (x.copy(), m.copy(), v.copy(), t_adam)
        t_adam += 1
        m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * grad
        v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * grad * grad
        m_hat = m / (1.0 - config.adam_beta1**t_adam)
        v_hat = v / (1.0 - config.adam_beta2**t_adam)
        x = x + lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return x, values, grad_norms, lrs


# ---------------------------------------------------------------------------
# End-to-end fit
# ---------------------------------------------------------------------------


def fit(
    config: OptimConfig,
    bundle: TaskBundle,
    *,
    kind: BaseKernelKind = BaseKernelKind.RBF,
    scalar_lengthscale: bool = False,
    mean_variant: MeanVariant = MeanVariant.SOFTMAX,
    refit_on: RefitOn = RefitOn.TRAIN_VAL,
    init: HyperParams | None = None,
) -> tuple[FittedGp, OptimTrace]:
    """Optimize hyper-parameters on the bundle's splits, then condition.

    The marginal objective uses the train split only and conditions on it.
    The predictive objective needs both splits; afterwards the returned GP
    is conditioned on train+val (default) or train only, per ``refit_on``.
    """
    if bundle.labels is None:
        raise EmptyInput("fitting needs labels")
    if mean_variant is MeanVariant.SOFTMAX and bundle.head is None and init is None:
        raise ManifestError(
            "the zero-shot softmax mean needs a head; the manifest provides none"
        )
    if config.objective is Objective.PREDICTIVE and bundle.val_idx.size == 0:
        raise EmptyInput(
            "the predictive objective needs a non-empty validation split "
            "(use split_train_val, or the marginal objective)"
        )
    data = ObjectiveData.from_bundle(bundle)
    if init is None:
        init = init_hyperparams(
            [(t.model_id, t.dim) for t in bundle.tables],
            kind=kind,
            scalar_lengthscale=scalar_lengthscale,
            mean_variant=mean_variant,
            head=bundle.head,
            num_classes=bundle.num_classes,
            seed=config.seed,
        )
    x0 = pack_params(init)

    def fn(x: np.ndarray) -> tuple[float, np.ndarray]:
        return objective_and_gradient(config, unpack_params(x, init), data)

    x_final, values, grad_norms, lrs = _run_adam(fn, x0, config)
    hyper = unpack_params(x_final, init)
    final_value, _ = objective_and_gradient(config, hyper, data)
    trace = OptimTrace(
        values=tuple(values),
        grad_norms=tuple(grad_norms),
        learning_rates=tuple(lrs),
        final_value=final_value,
    )

    if config.objective is Objective.PREDICTIVE and refit_on is RefitOn.TRAIN_VAL:
        cond_idx = np.concatenate([bundle.train_idx, bundle.val_idx])
    else:
        cond_idx = bundle.train_idx
    fitted = gp_condition(
        hyper.kernels,
        hyper.mean,
        bundle.features_at(cond_idx),
        bundle.mean_features_at(cond_idx),
        bundle.targets_at(cond_idx),
        hyper.sigma2,
    )
    return fitted, trace
