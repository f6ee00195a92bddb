"""Gaussian-process ensembles over frozen embedding files.

Low-shot image classification without gradient training at adaptation
time: per-backbone deep kernels over precomputed embeddings are summed
into an ensemble kernel, an optional zero-shot head drives the prior
mean, and exact GP regression on one-hot labels yields calibrated class
scores plus a label-free predictive variance usable for OOD detection.
"""

from .embedstore import (
    EmbeddingTable,
    SplitMix64,
    TaskBundle,
    ZeroShotHead,
    load_embedding_table,
    load_task_bundle,
    normalize_rows,
    sample_few_shot,
    split_train_val,
)
from .errors import GpensError
from .evalmetrics import accuracy, auroc, ece, predict_labels, tace, uncertainty_histogram
from .gpcore import (
    FittedGp,
    HyperParams,
    gp_condition,
    gp_predict,
    log_marginal_likelihood,
    log_predictive_likelihood,
)
from .hyperopt import (
    MeanVariant,
    Objective,
    ObjectiveData,
    OptimConfig,
    OptimTrace,
    RefitOn,
    fit,
    init_hyperparams,
    objective_and_gradient,
)
from .kernels import BaseKernelKind, DeepKernelSpec, deep_kernel_gram, ensemble_gram
from .meanfn import ConstantMean, MeanSpec, SoftmaxHeadMean, ZeroMean, mean_eval
from .synth import SynthConfig, make_mean_ablation_task, make_synthetic_task, write_synthetic_task

__version__ = "0.1.0"

__all__ = [
    "BaseKernelKind",
    "ConstantMean",
    "DeepKernelSpec",
    "EmbeddingTable",
    "FittedGp",
    "GpensError",
    "HyperParams",
    "MeanSpec",
    "MeanVariant",
    "Objective",
    "ObjectiveData",
    "OptimConfig",
    "OptimTrace",
    "RefitOn",
    "SoftmaxHeadMean",
    "SplitMix64",
    "SynthConfig",
    "TaskBundle",
    "ZeroMean",
    "ZeroShotHead",
    "accuracy",
    "auroc",
    "deep_kernel_gram",
    "ece",
    "ensemble_gram",
    "fit",
    "gp_condition",
    "gp_predict",
    "init_hyperparams",
    "load_embedding_table",
    "load_task_bundle",
    "log_marginal_likelihood",
    "log_predictive_likelihood",
    "make_mean_ablation_task",
    "make_synthetic_task",
    "mean_eval",
    "normalize_rows",
    "objective_and_gradient",
    "predict_labels",
    "sample_few_shot",
    "split_train_val",
    "tace",
    "uncertainty_histogram",
    "write_synthetic_task",
    "__version__",
]
