"""Classification, calibration, and OOD metrics over GP outputs.

The GP regresses one-hot targets, so its posterior mean rows are treated as
(possibly improper) per-class scores: predictions are row argmaxes, and for
calibration each score is clipped to [0, 1] and used as-is, with no
renormalization across classes.

ECE uses 15 equal-width bins over [0, 1] (a confidence lands in bin
``min(floor(conf * bins), bins - 1)``).  TACE pools every (sample, class)
probability at or above a threshold, sorts the pool (stable, ascending),
splits it into 15 near-equal-count bins, and averages |accuracy - mean
confidence| over the non-empty bins.  AUROC is the Mann-Whitney U statistic
normalized by n_pos * n_neg, with average ranks for ties.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import AllBelowThreshold, DimensionMismatch, EmptyInput, LengthMismatch

DEFAULT_BINS = 15
DEFAULT_TACE_THRESHOLD = 0.01
DEFAULT_HISTOGRAM_BINS = 50

_FLOAT_FMT = "%.10g"


@dataclass(frozen=True)
class ReliabilityBin:
    """One ECE bin: [lo, hi) bounds, occupancy, mean confidence, accuracy."""

    lo: float
    hi: float
    count: int
    mean_confidence: float | None
    accuracy: float | None


def predict_labels(scores: np.ndarray) -> np.ndarray:
    """Row argmax; ties resolve to the lowest class index."""
    scores = np.asarray(scores)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise EmptyInput(f"scores must be a non-empty N x C matrix, got shape {scores.shape}")
    return np.argmax(scores, axis=1).astype(np.int64)


def accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    if predicted.size == 0:
        raise EmptyInput("no predictions to score")
    if predicted.size != truth.size:
        raise LengthMismatch(f"{predicted.size} predictions for {truth.size} labels")
    return float(np.mean(predicted == truth))


def ece(
    confidences: np.ndarray, correct: np.ndarray, bins: int = DEFAULT_BINS
) -> tuple[float, tuple[ReliabilityBin, ...]]:
    """Expected calibration error plus the per-bin reliability table.

    ``confidences`` must already lie in [0, 1]; ``correct`` is the boolean
    hit indicator per sample.  ECE is the occupancy-weighted mean of
    |accuracy - mean confidence| over the non-empty bins.
    """
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    hit = np.asarray(correct, dtype=bool).ravel()
    if conf.size == 0:
        raise EmptyInput("no confidences to bin")
    if conf.size != hit.size:
        raise LengthMismatch(f"{conf.size} confidences for {hit.size} indicators")
    if conf.min() < 0.0 or conf.max() > 1.0:
        raise DimensionMismatch("confidences must lie in [0, 1] (clip first)")
    if bins < 1:
        raise DimensionMismatch(f"bins must be >= 1, got {bins}")
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    total = 0.0
    table = []
    for b in range(bins):
        members = idx == b
        count = int(np.sum(members))
        lo, hi = b / bins, (b + 1) / bins
        if count == 0:
            table.append(ReliabilityBin(lo, hi, 0, None, None))
            continue
        mean_conf = float(np.mean(conf[members]))
        acc = float(np.mean(hit[members]))
        total += (count / conf.size) * abs(acc - mean_conf)
        table.append(ReliabilityBin(lo, hi, count, mean_conf, acc))
    return total, tuple(table)


def tace(
    probabilities: np.ndarray,
    truth: np.ndarray,
    threshold: float = DEFAULT_TACE_THRESHOLD,
    bins: int = DEFAULT_BINS,
) -> float:
    """Thresholded adaptive calibration error over pooled (sample, class)
    probabilities.

    Entries below ``threshold`` are discarded; survivors are sorted by
    probability (stable, so ties keep row-major pool order) and split into
    ``bins`` near-equal-count bins (earlier bins take the remainder, as in
    ``np.array_split``).  The result is the unweighted mean over non-empty
    bins of |bin accuracy - bin mean probability|.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    truth = np.asarray(truth).ravel()
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise EmptyInput(f"probabilities must be non-empty N x C, got shape {probs.shape}")
    if probs.shape[0] != truth.size:
        raise LengthMismatch(f"{probs.shape[0]} rows for {truth.size} labels")
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise DimensionMismatch("probabilities must lie in [0, 1] (clip first)")
    n, c = probs.shape
    flat = probs.ravel()  # row-major: entry i is (sample i // C, class i % C)
    hit = (truth[:, None] == np.arange(c)[None, :]).ravel()
    keep = flat >= threshold
    if not np.any(keep):
        raise AllBelowThreshold(
            f"every pooled probability is below the threshold {threshold:g}"
        )
    pool_p = flat[keep]
    pool_hit = hit[keep]
    order = np.argsort(pool_p, kind="stable")
    total = 0.0
    used = 0
    for chunk in np.array_split(order, bins):
        if chunk.size == 0:
            continue
        total += abs(float(np.mean(pool_hit[chunk])) - float(np.mean(pool_p[chunk])))
        used += 1
    return total / used


def auroc(negative_scores: np.ndarray, positive_scores: np.ndarray) -> float:
    """P(score_pos > score_neg) + 0.5 P(equal): Mann-Whitney U with midranks."""
    neg = np.asarray(negative_scores, dtype=np.float64).ravel()
    pos = np.asarray(positive_scores, dtype=np.float64).ravel()
    if neg.size == 0 or pos.size == 0:
        raise EmptyInput("AUROC needs at least one score on each side")
    ranks = rankdata(np.concatenate([neg, pos]))  # average ranks for ties
    u = float(np.sum(ranks[neg.size :])) - pos.size * (pos.size + 1) / 2.0
    return u / (pos.size * neg.size)


def uncertainty_histogram(
    values: np.ndarray,
    *,
    bins: int = DEFAULT_HISTOGRAM_BINS,
    value_range: tuple[float, float] = (0.0, 1.0),
) -> tuple[np.ndarray, np.ndarray]:
    """Density-normalized histogram over a fixed shared range.

    Returns (edges, densities) with ``bins + 1`` edges.  Every dataset in a
    comparison must be binned over the same ``value_range`` (for predictive
    variances: 0 to the number of ensemble members) so the densities are
    directly comparable.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise EmptyInput("no values to histogram")
    lo, hi = value_range
    if not hi > lo:
        raise DimensionMismatch(f"empty histogram range [{lo}, {hi}]")
    densities, edges = np.histogram(vals, bins=bins, range=(lo, hi), density=True)
    return edges, densities


def write_reliability_csv(path: str | Path, table: tuple[ReliabilityBin, ...]) -> None:
    """CSV with one row per bin; empty bins leave confidence/accuracy blank."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count", "mean_confidence", "accuracy"])
        for b in table:
            writer.writerow(
                [
                    _FLOAT_FMT % b.lo,
                    _FLOAT_FMT % b.hi,
                    b.count,
                    "" if b.mean_confidence is None else _FLOAT_FMT % b.mean_confidence,
                    "" if b.accuracy is None else _FLOAT_FMT % b.accuracy,
                ]
            )


def write_histogram_csv(path: str | Path, edges: np.ndarray, densities: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "density"])
        for i, d in enumerate(densities):
            writer.writerow([_FLOAT_FMT % edges[i], _FLOAT_FMT % edges[i + 1], _FLOAT_FMT % d])
