"""Synthetic embedding tasks with two complementary models and a planted
OOD subspace.

Geometry: each model's embedding space is split into an in-distribution
half (low dimension indices) and an out-of-distribution half.  Class
centers are unit basis vectors inside the ID half; a sample is its center
plus ``noise`` times a random unit direction of the ID half, re-normalized,
then multiplied by ``scale``.  Model A resolves the first half of the
classes and collapses the rest onto one shared center; model B mirrors
this, so neither model alone can label every class but their kernel sum
can.  OOD samples are scaled random unit vectors of the OOD half: exactly
orthogonal to every ID sample in both models.

``scale`` spreads the point cloud so that length scales around 1 (where
the default initialization and a 100-step fit live) already resolve the
class structure: same-class kernel values stay well above cross-class and
OOD values, and orthogonal OOD points keep essentially the full prior
variance.  Scaled features are not unit norm, so the embedding files carry
a cleared ``normalized`` flag.

The zero-shot head is built in model A's space from the true class-center
directions, so it is perfectly informative for the classes model A
resolves and group-level only for the rest.  ``make_mean_ablation_task``
instead builds a single-model task whose head resolves *all* classes --
the right instrument for measuring what a head-driven prior mean adds.

Everything derives from one ``numpy.random.default_rng(seed)`` stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedstore import (
    EmbeddingTable,
    TaskBundle,
    ZeroShotHead,
    normalize_rows,
    write_embedding_file,
    write_head_file,
    write_labels_file,
    write_manifest,
    write_sample_ids,
)
from .errors import DimensionMismatch


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 8
    dim_a: int = 24
    dim_b: int = 16
    train_per_class: int = 24
    test_per_class: int = 40
    ood_samples: int = 160
    noise: float = 0.45
    scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise DimensionMismatch("need at least two classes")
        n_first = (self.classes + 1) // 2
        n_second = self.classes - n_first
        if self.dim_a // 2 < n_first + 1 or self.dim_b // 2 < n_second + 1:
            raise DimensionMismatch(
                "embedding halves too small for the class-center layout"
            )
        if min(self.train_per_class, self.test_per_class, self.ood_samples) < 1:
            raise DimensionMismatch("sample counts must be >= 1")
        if not 0.0 < self.noise < 1.5:
            raise DimensionMismatch("noise must lie in (0, 1.5)")
        if not self.scale > 0.0:
            raise DimensionMismatch("scale must be positive")

    @property
    def informative_a(self) -> int:
        """Model A resolves classes [0, informative_a)."""
        return (self.classes + 1) // 2


def _centers(dim: int, resolved: int, total: int, resolved_first: bool) -> np.ndarray:
    """Class-center matrix (total x dim): resolved classes get distinct unit
    basis vectors, the others share one extra basis vector."""
    centers = np.zeros((total, dim))
    shared = np.zeros(dim)
    shared[resolved] = 1.0
    for c in range(total):
        in_resolved = c < resolved if resolved_first else c >= total - resolved
        if in_resolved:
            centers[c, c if resolved_first else c - (total - resolved)] = 1.0
        else:
            centers[c] = shared
    return centers


def _id_samples(
    rng: np.random.Generator,
    centers: np.ndarray,
    labels: np.ndarray,
    dim: int,
    noise: float,
    scale: float,
) -> np.ndarray:
    half = dim // 2
    z = normalize_rows(rng.standard_normal((labels.size, half)))
    x = np.zeros((labels.size, dim))
    x[:, :half] = centers[labels, :half] + noise * z
    return scale * normalize_rows(x)


def _ood_samples(rng: np.random.Generator, count: int, dim: int, scale: float) -> np.ndarray:
    half = dim // 2
    x = np.zeros((count, dim))
    x[:, half:] = rng.standard_normal((count, dim - half))
    return scale * normalize_rows(x)


def _ids(prefix: str, count: int) -> tuple[str, ...]:
    return tuple(f"{prefix}-{i:06d}" for i in range(count))


def _bundle(tables, head, class_names) -> TaskBundle:
    n = tables[0].n_samples
    return TaskBundle(
        tables=tuple(tables),
        head=head,
        mean_model_id=tables[0].model_id,
        class_names=class_names,
        train_idx=np.arange(n, dtype=np.int64),
        val_idx=np.empty(0, dtype=np.int64),
        test_idx=np.empty(0, dtype=np.int64),
    )


def make_synthetic_task(cfg: SynthConfig) -> tuple[TaskBundle, TaskBundle, TaskBundle]:
    """Generate (train, test, ood) bundles in memory.

    The train and test bundles carry labels, both models, and model A's
    head; the OOD bundle has the same two models but no labels and no head.
    """
    rng = np.random.default_rng(cfg.seed)
    c = cfg.classes
    n_first = cfg.informative_a
    n_second = c - n_first
    centers_a = _centers(cfg.dim_a, n_first, c, resolved_first=True)
    centers_b = _centers(cfg.dim_b, n_second, c, resolved_first=False)
    class_names = tuple(f"class_{i}" for i in range(c))
    head = ZeroShotHead(weights=centers_a.T, class_names=class_names)

    unit = cfg.scale == 1.0

    def id_bundle(prefix: str, per_class: int) -> TaskBundle:
        labels = np.repeat(np.arange(c, dtype=np.int64), per_class)
        ids = _ids(prefix, labels.size)
        feats_a = _id_samples(rng, centers_a, labels, cfg.dim_a, cfg.noise, cfg.scale)
        feats_b = _id_samples(rng, centers_b, labels, cfg.dim_b, cfg.noise, cfg.scale)
        tables = [
            EmbeddingTable("model_a", feats_a, ids, labels, c, normalized=unit),
            EmbeddingTable("model_b", feats_b, ids, labels, c, normalized=unit),
        ]
        return _bundle(tables, head, class_names)

    train = id_bundle("train", cfg.train_per_class)
    test = id_bundle("test", cfg.test_per_class)

    ood_ids = _ids("ood", cfg.ood_samples)
    ood_tables = [
        EmbeddingTable(
            "model_a",
            _ood_samples(rng, cfg.ood_samples, cfg.dim_a, cfg.scale),
            ood_ids,
            normalized=unit,
        ),
        EmbeddingTable(
            "model_b",
            _ood_samples(rng, cfg.ood_samples, cfg.dim_b, cfg.scale),
            ood_ids,
            normalized=unit,
        ),
    ]
    ood = _bundle(ood_tables, None, None)
    return train, test, ood


def write_synthetic_task(cfg: SynthConfig, out_dir: str | Path) -> dict[str, str]:
    """Write the generated task as three manifest directories.

    Layout: ``<out>/{train,test,ood}/manifest.json`` plus the EMB1/LBL1/
    HED1/id files they reference.  Returns the manifest paths by split name.
    """
    out_dir = Path(out_dir)
    train, test, ood = make_synthetic_task(cfg)
    paths: dict[str, str] = {}
    for name, bundle in (("train", train), ("test", test), ("ood", ood)):
        d = out_dir / name
        d.mkdir(parents=True, exist_ok=True)
        models = []
        for t in bundle.tables:
            emb_name = f"{t.model_id}.emb"
            write_embedding_file(d / emb_name, t.features, normalized=t.normalized)
            models.append((t.model_id, emb_name))
        write_sample_ids(d / "ids.txt", bundle.sample_ids)
        kwargs = {"sample_ids_path": "ids.txt", "mean_model_id": bundle.mean_model_id}
        if bundle.labels is not None:
            write_labels_file(d / "labels.lbl", bundle.labels, bundle.num_classes)
            kwargs["labels_path"] = "labels.lbl"
        if bundle.head is not None:
            write_head_file(d / "head.hed", bundle.head.weights)
            kwargs["head_path"] = "head.hed"
        if bundle.class_names is not None:
            kwargs["class_names"] = bundle.class_names
        manifest = d / "manifest.json"
        write_manifest(manifest, models=models, **kwargs)
        paths[name] = str(manifest)
    return paths


def make_mean_ablation_task(
    *,
    classes: int = 5,
    dim: int = 16,
    pool_per_class: int = 30,
    test_per_class: int = 40,
    noise: float = 0.6,
    seed: int = 0,
) -> tuple[TaskBundle, TaskBundle]:
    """Single-model task whose head resolves every class.

    Designed for prior-mean ablations at very low shot counts: the kernel
    alone sees noisy one-shot prototypes, while the head knows the exact
    class directions.
    """
    if dim // 2 < classes:
        raise DimensionMismatch("dim too small for one center per class")
    rng = np.random.default_rng(seed)
    centers = np.zeros((classes, dim))
    centers[np.arange(classes), np.arange(classes)] = 1.0
    class_names = tuple(f"class_{i}" for i in range(classes))
    head = ZeroShotHead(weights=centers.T, class_names=class_names)

    def build(prefix: str, per_class: int) -> TaskBundle:
        labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
        feats = _id_samples(rng, centers, labels, dim, noise, scale=1.0)
        table = EmbeddingTable("probe", feats, _ids(prefix, labels.size), labels, classes)
        return _bundle([table], head, class_names)

    return build("pool", pool_per_class), build("test", test_per_class)
