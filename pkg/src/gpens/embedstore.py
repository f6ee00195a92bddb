"""Embedding-file store: binary formats, task bundles, deterministic sampling.

All multi-byte values are little-endian.  Three binary formats:

``EMB1`` (embedding matrix, 28-byte header)
    offset 0   magic ``b"EMB1"``
    offset 4   u32 format version (must be 1)
    offset 8   u64 N (rows)
    offset 16  u32 D (columns)
    offset 20  u8 dtype code (0 = float32; no other codes defined)
    offset 21  u8 normalized flag (1 = every row claims unit L2 norm)
    offset 22  6 reserved bytes (written as zero, ignored on read)
    offset 28  N*D float32, row-major

``LBL1`` (labels, 16-byte header)
    magic ``b"LBL1"``, u64 N, u32 C, then N u32 class indices in [0, C).

``HED1`` (zero-shot head, 12-byte header)
    magic ``b"HED1"``, u32 D, u32 C, then D*C float32, column-major
    (column c is the unit-norm class direction for class c).

A *manifest* is a JSON file tying one dataset together; paths are resolved
relative to the manifest's directory::

    {
      "models":          [{"id": "vit", "emb_path": "vit.emb"}, ...],
      "labels_path":     "labels.lbl",        // optional (OOD sets have none)
      "head_path":       "head.hed",          // optional
      "mean_model_id":   "vit",               // optional, default first model
      "class_names":     ["cat", "dog"],      // optional
      "sample_ids_path": "ids.txt"            // optional, one id per line
    }

Sampling must reproduce bit-for-bit across platforms, so it uses an explicit
SplitMix64 generator (documented below) rather than any library RNG.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    EmptyInput,
    InsufficientSamples,
    LengthMismatch,
    ManifestError,
    NormViolation,
    TooFewShots,
    TruncatedFile,
    VersionMismatch,
)

_EMB_HEADER = struct.Struct("<4sIQIBB6s")
_LBL_HEADER = struct.Struct("<4sQI")
_HED_HEADER = struct.Struct("<4sII")

EMB_MAGIC = b"EMB1"
LBL_MAGIC = b"LBL1"
HED_MAGIC = b"HED1"

#: loaders reject rows/columns whose L2 norm strays further than this from 1
NORM_READ_TOL = 1e-4
#: writers guarantee norms at least this tight (float64 normalize, then cast)
NORM_WRITE_TOL = 1e-5


# ---------------------------------------------------------------------------
# Deterministic PRNG
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # golden-ratio increment


def _mix64(z: int) -> int:
    """SplitMix64 finalizer: two xor-shift-multiply rounds, then xor-shift."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """SplitMix64 generator with numbered sub-streams.

    State update: ``state += 0x9E3779B97F4A7C15 (mod 2^64)``; output is
    ``_mix64(state)`` with the multipliers 0xBF58476D1CE4E5B9 and
    0x94D049BB133111EB (Steele, Lea & Flood 2014).  The initial state is
    ``_mix64(seed XOR _mix64((stream + 1) * 0x9E3779B97F4A7C15))`` so that
    distinct ``(seed, stream)`` pairs give decorrelated sequences.  Everything
    here is exact 64-bit integer arithmetic, identical on every platform.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self._state = _mix64((seed & _MASK64) ^ _mix64(((stream + 1) * _GAMMA) & _MASK64))

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix64(self._state)

    def below(self, n: int) -> int:
        """Uniform draw from [0, n) by rejection sampling (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle, iterating from the back."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


# Sub-stream roles for per-class generators; a class-c operation with role r
# uses ``SplitMix64(seed, stream=2*c + r)``.
_STREAM_SAMPLE = 0
_STREAM_SPLIT = 1


# ---------------------------------------------------------------------------
# Core types
# ---------------------------------------------------------------------------


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EmbeddingTable:
    """One model's embeddings for one dataset, plus per-row bookkeeping.

    ``features`` is N x D float32 with N, D >= 1.  ``labels`` (when present)
    holds class indices in [0, num_classes).  When ``normalized`` is set the
    rows are unit L2 norm (writers guarantee 1e-5; loaders enforce 1e-4 to
    tolerate third-party float32 rounding).
    """

    model_id: str
    features: np.ndarray
    sample_ids: tuple[str, ...]
    labels: np.ndarray | None = None
    num_classes: int | None = None
    normalized: bool = True

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 2:
            raise DimensionMismatch(f"features must be 2-D, got shape {feats.shape}")
        n, d = feats.shape
        if n < 1 or d < 1:
            raise EmptyInput(f"embedding table needs N>=1 and D>=1, got {n}x{d}")
        object.__setattr__(self, "features", _frozen(feats.astype(np.float32, copy=False)))
        if len(self.sample_ids) != n:
            raise LengthMismatch(
                f"{len(self.sample_ids)} sample ids for {n} rows", model_id=self.model_id
            )
        if len(set(self.sample_ids)) != n:
            raise LengthMismatch("sample ids must be unique", model_id=self.model_id)
        if (self.labels is None) != (self.num_classes is None):
            raise LengthMismatch("labels and num_classes must be given together")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise LengthMismatch(f"{labels.shape[0]} labels for {n} rows")
            if self.num_classes < 1:
                raise EmptyInput("num_classes must be >= 1")
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise DimensionMismatch(
                    f"label outside [0, {self.num_classes})", model_id=self.model_id
                )
            object.__setattr__(self, "labels", _frozen(labels))
        if self.normalized:
            norms = np.linalg.norm(self.features.astype(np.float64), axis=1)
            worst = int(np.argmax(np.abs(norms - 1.0)))
            if abs(norms[worst] - 1.0) > NORM_READ_TOL:
                raise NormViolation(
                    f"row {worst} has L2 norm {norms[worst]:.6g}, "
                    f"more than {NORM_READ_TOL:g} from 1.0",
                    model_id=self.model_id,
                )

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ZeroShotHead:
    """Linear zero-shot head: D x C weight matrix with unit-norm columns."""

    weights: np.ndarray
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionMismatch(f"head weights must be D x C, got shape {w.shape}")
        object.__setattr__(self, "weights", _frozen(w.astype(np.float32, copy=False)))
        norms = np.linalg.norm(self.weights.astype(np.float64), axis=0)
        worst = int(np.argmax(np.abs(norms - 1.0)))
        if abs(norms[worst] - 1.0) > NORM_READ_TOL:
            raise NormViolation(
                f"head column {worst} has L2 norm {norms[worst]:.6g}, "
                f"more than {NORM_READ_TOL:g} from 1.0"
            )
        if self.class_names is not None and len(self.class_names) != w.shape[1]:
            raise LengthMismatch(
                f"{len(self.class_names)} class names for {w.shape[1]} head columns"
            )

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TaskBundle:
    """Aligned embedding tables for one dataset plus split bookkeeping.

    Every table covers the same N samples in the same order (ids and labels
    must agree across tables).  ``train_idx`` / ``val_idx`` / ``test_idx`` are
    disjoint row-index arrays; a freshly loaded manifest puts every row in
    ``train_idx`` and the samplers below carve that pool up.
    """

    tables: tuple[EmbeddingTable, ...]
    head: ZeroShotHead | None = None
    mean_model_id: str | None = None
    class_names: tuple[str, ...] | None = None
    train_idx: np.ndarray = None  # type: ignore[assignment]
    val_idx: np.ndarray = None  # type: ignore[assignment]
    test_idx: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if not self.tables:
            raise EmptyInput("a task bundle needs at least one embedding table")
        ids = [t.model_id for t in self.tables]
        if len(set(ids)) != len(ids):
            raise ManifestError(f"duplicate model ids: {ids}")
        first = self.tables[0]
        for t in self.tables[1:]:
            if t.n_samples != first.n_samples:
                raise LengthMismatch(
                    f"table {t.model_id!r} has {t.n_samples} rows, "
                    f"{first.model_id!r} has {first.n_samples}"
                )
            if t.sample_ids != first.sample_ids:
                raise LengthMismatch(
                    f"sample ids of table {t.model_id!r} disagree with {first.model_id!r}"
                )
            if (t.labels is None) != (first.labels is None):
                raise LengthMismatch("all tables must agree on having labels")
            if t.labels is not None and (
                t.num_classes != first.num_classes or not np.array_equal(t.labels, first.labels)
            ):
                raise LengthMismatch(
                    f"labels of table {t.model_id!r} disagree with {first.model_id!r}"
                )
        if self.mean_model_id is None:
            object.__setattr__(self, "mean_model_id", first.model_id)
        if self.mean_model_id not in ids:
            raise ManifestError(f"mean_model_id {self.mean_model_id!r} not among models {ids}")
        if self.head is not None:
            mean_table = self.table(self.mean_model_id)
            if self.head.dim != mean_table.dim:
                raise DimensionMismatch(
                    f"head is {self.head.dim}-dimensional but mean model "
                    f"{self.mean_model_id!r} has dim {mean_table.dim}"
                )
            if first.num_classes is not None and self.head.num_classes != first.num_classes:
                raise DimensionMismatch(
                    f"head has {self.head.num_classes} columns for "
                    f"{first.num_classes} classes"
                )
        if self.class_names is not None and first.num_classes is not None:
            if len(self.class_names) != first.num_classes:
                raise LengthMismatch(
                    f"{len(self.class_names)} class names for {first.num_classes} classes"
                )
        n = first.n_samples
        for name in ("train_idx", "val_idx", "test_idx"):
            raw = getattr(self, name)
            idx = (
                np.empty(0, dtype=np.int64)
                if raw is None
                else np.asarray(raw, dtype=np.int64).ravel()
            )
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise LengthMismatch(f"{name} contains indices outside [0, {n})")
            if idx.size != np.unique(idx).size:
                raise LengthMismatch(f"{name} contains duplicate indices")
            object.__setattr__(self, name, _frozen(idx))
        combined = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if combined.size != np.unique(combined).size:
            raise LengthMismatch("train/val/test splits overlap")

    # -- convenience accessors -------------------------------------------

    @property
    def n_samples(self) -> int:
        return self.tables[0].n_samples

    @property
    def num_classes(self) -> int | None:
        return self.tables[0].num_classes

    @property
    def labels(self) -> np.ndarray | None:
        return self.tables[0].labels

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(t.model_id for t in self.tables)

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return self.tables[0].sample_ids

    def table(self, model_id: str) -> EmbeddingTable:
        for t in self.tables:
            if t.model_id == model_id:
                return t
        raise ManifestError(f"no table for model id {model_id!r}")

    @property
    def mean_table(self) -> EmbeddingTable:
        return self.table(self.mean_model_id)

    def features_at(self, idx: np.ndarray) -> list[np.ndarray]:
        """Per-model float64 feature blocks for the given row indices."""
        return [t.features[idx].astype(np.float64) for t in self.tables]

    def mean_features_at(self, idx: np.ndarray) -> np.ndarray:
        return self.mean_table.features[idx].astype(np.float64)

    def targets_at(self, idx: np.ndarray) -> np.ndarray:
        """One-hot float64 targets (len(idx) x C) for the given rows."""
        if self.labels is None:
            raise EmptyInput("bundle has no labels; cannot build targets")
        out = np.zeros((idx.size, self.num_classes), dtype=np.float64)
        out[np.arange(idx.size), self.labels[idx]] = 1.0
        return out


# ---------------------------------------------------------------------------
# Binary readers / writers
# ---------------------------------------------------------------------------


def _read_exact(path: Path) -> bytes:
    if not path.is_file():
        raise TruncatedFile(f"file not found: {path}", path=str(path))
    return path.read_bytes()


def _check_magic(buf: bytes, magic: bytes, path: Path) -> None:
    if len(buf) < 4 or buf[:4] != magic:
        raise BadMagic(
            f"expected magic {magic!r}, got {buf[:4]!r}", path=str(path)
        )


def read_embedding_file(path: str | Path) -> tuple[np.ndarray, bool]:
    """Read an EMB1 file; returns (float32 N x D matrix, normalized flag)."""
    path = Path(path)
    buf = _read_exact(path)
    _check_magic(buf, EMB_MAGIC, path)
    if len(buf) < _EMB_HEADER.size:
        raise TruncatedFile(f"EMB1 header needs {_EMB_HEADER.size} bytes", path=str(path))
    _, version, n, d, dtype_code, norm_flag, _ = _EMB_HEADER.unpack_from(buf)
    if version != 1:
        raise VersionMismatch(f"EMB1 version {version} unsupported (expected 1)", path=str(path))
    if dtype_code != 0:
        raise VersionMismatch(f"EMB1 dtype code {dtype_code} unsupported", path=str(path))
    expected = _EMB_HEADER.size + n * d * 4
    if len(buf) != expected:
        raise TruncatedFile(
            f"EMB1 file is {len(buf)} bytes, header promises {expected}", path=str(path)
        )
    if n < 1 or d < 1:
        raise EmptyInput(f"EMB1 declares empty matrix {n}x{d}", path=str(path))
    feats = np.frombuffer(buf, dtype="<f4", count=n * d, offset=_EMB_HEADER.size)
    return feats.reshape(n, d).copy(), bool(norm_flag)


def write_embedding_file(path: str | Path, features: np.ndarray, *, normalized: bool = True) -> None:
    """Write an EMB1 file.  When ``normalized`` the rows must already be unit
    norm (use :func:`normalize_rows`); norms are re-checked after the float32
    cast so readers on any platform accept the file."""
    feats = np.ascontiguousarray(np.asarray(features, dtype=np.float64), dtype="<f4")
    if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
        raise DimensionMismatch(f"features must be non-empty 2-D, got shape {feats.shape}")
    if normalized:
        norms = np.linalg.norm(feats.astype(np.float64), axis=1)
        if np.max(np.abs(norms - 1.0)) > NORM_WRITE_TOL:
            raise NormViolation("rows must be unit norm before writing with normalized=1")
    n, d = feats.shape
    header = _EMB_HEADER.pack(EMB_MAGIC, 1, n, d, 0, 1 if normalized else 0, b"\x00" * 6)
    Path(path).write_bytes(header + feats.tobytes())


def read_labels_file(path: str | Path) -> tuple[np.ndarray, int]:
    """Read an LBL1 file; returns (int64 label vector, class count)."""
    path = Path(path)
    buf = _read_exact(path)
    _check_magic(buf, LBL_MAGIC, path)
    if len(buf) < _LBL_HEADER.size:
        raise TruncatedFile(f"LBL1 header needs {_LBL_HEADER.size} bytes", path=str(path))
    _, n, c = _LBL_HEADER.unpack_from(buf)
    expected = _LBL_HEADER.size + n * 4
    if len(buf) != expected:
        raise TruncatedFile(
            f"LBL1 file is {len(buf)} bytes, header promises {expected}", path=str(path)
        )
    if n < 1 or c < 1:
        raise EmptyInput(f"LBL1 declares {n} labels over {c} classes", path=str(path))
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=_LBL_HEADER.size).astype(np.int64)
    if labels.max() >= c:
        raise DimensionMismatch(
            f"label {int(labels.max())} outside [0, {c})", path=str(path)
        )
    return labels, int(c)


def write_labels_file(path: str | Path, labels: Sequence[int], num_classes: int) -> None:
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 1 or arr.size < 1:
        raise EmptyInput("labels must be a non-empty 1-D sequence")
    if num_classes < 1 or arr.min() < 0 or arr.max() >= num_classes:
        raise DimensionMismatch(f"labels must lie in [0, {num_classes})")
    header = _LBL_HEADER.pack(LBL_MAGIC, arr.size, num_classes)
    Path(path).write_bytes(header + arr.astype("<u4").tobytes())


def read_head_file(path: str | Path) -> np.ndarray:
    """Read a HED1 file; returns the float32 D x C weight matrix."""
    path = Path(path)
    buf = _read_exact(path)
    _check_magic(buf, HED_MAGIC, path)
    if len(buf) < _HED_HEADER.size:
        raise TruncatedFile(f"HED1 header needs {_HED_HEADER.size} bytes", path=str(path))
    _, d, c = _HED_HEADER.unpack_from(buf)
    expected = _HED_HEADER.size + d * c * 4
    if len(buf) != expected:
        raise TruncatedFile(
            f"HED1 file is {len(buf)} bytes, header promises {expected}", path=str(path)
        )
    if d < 1 or c < 1:
        raise EmptyInput(f"HED1 declares empty head {d}x{c}", path=str(path))
    flat = np.frombuffer(buf, dtype="<f4", count=d * c, offset=_HED_HEADER.size)
    return flat.reshape(c, d).T.copy()  # stored column-major


def write_head_file(path: str | Path, weights: np.ndarray) -> None:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise DimensionMismatch(f"head weights must be D x C, got shape {w.shape}")
    w32 = w.astype("<f4")
    norms = np.linalg.norm(w32.astype(np.float64), axis=0)
    if np.max(np.abs(norms - 1.0)) > NORM_WRITE_TOL:
        raise NormViolation("head columns must be unit norm before writing")
    d, c = w32.shape
    header = _HED_HEADER.pack(HED_MAGIC, d, c)
    Path(path).write_bytes(header + np.ascontiguousarray(w32.T).tobytes())


def read_sample_ids(path: str | Path) -> tuple[str, ...]:
    path = Path(path)
    if not path.is_file():
        raise TruncatedFile(f"file not found: {path}", path=str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    ids = tuple(line.strip() for line in lines if line.strip())
    if not ids:
        raise EmptyInput("sample id file is empty", path=str(path))
    return ids


def write_sample_ids(path: str | Path, ids: Sequence[str]) -> None:
    Path(path).write_text("\n".join(ids) + "\n", encoding="utf-8")


def default_sample_ids(n: int) -> tuple[str, ...]:
    """Zero-padded row indices, used when a manifest names no id file."""
    width = max(6, len(str(n - 1)))
    return tuple(str(i).zfill(width) for i in range(n))


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Unit-normalize rows in float64 (zero rows raise)."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise NormViolation("cannot normalize a zero row")
    return x / norms


# ---------------------------------------------------------------------------
# Manifest loading / writing
# ---------------------------------------------------------------------------


def load_embedding_table(
    emb_path: str | Path,
    *,
    model_id: str | None = None,
    labels_path: str | Path | None = None,
    sample_ids: Sequence[str] | None = None,
) -> EmbeddingTable:
    """Load one EMB1 file (plus optional LBL1 labels) into a table."""
    emb_path = Path(emb_path)
    feats, normalized = read_embedding_file(emb_path)
    labels, c = (None, None)
    if labels_path is not None:
        labels, c = read_labels_file(labels_path)
        if labels.shape[0] != feats.shape[0]:
            raise LengthMismatch(
                f"{labels.shape[0]} labels for {feats.shape[0]} embedding rows",
                path=str(labels_path),
            )
    ids = tuple(sample_ids) if sample_ids is not None else default_sample_ids(feats.shape[0])
    return EmbeddingTable(
        model_id=model_id if model_id is not None else emb_path.stem,
        features=feats,
        sample_ids=ids,
        labels=labels,
        num_classes=c,
        normalized=normalized,
    )


def load_task_bundle(manifest_path: str | Path) -> TaskBundle:
    """Load a manifest and every file it references into a TaskBundle.

    All rows start in ``train_idx``; use :func:`sample_few_shot` /
    :func:`split_train_val` to carve out the working splits.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise TruncatedFile(f"file not found: {manifest_path}", path=str(manifest_path))
    try:
        spec = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}", path=str(manifest_path))
    if not isinstance(spec, dict) or not isinstance(spec.get("models"), list) or not spec["models"]:
        raise ManifestError('manifest needs a non-empty "models" list', path=str(manifest_path))
    base = manifest_path.parent

    def resolve(rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else base / p

    sample_ids = None
    if spec.get("sample_ids_path"):
        sample_ids = read_sample_ids(resolve(spec["sample_ids_path"]))
    labels_path = resolve(spec["labels_path"]) if spec.get("labels_path") else None

    tables = []
    for entry in spec["models"]:
        if not isinstance(entry, dict) or "id" not in entry or "emb_path" not in entry:
            raise ManifestError(
                'each model entry needs "id" and "emb_path"', path=str(manifest_path)
            )
        tables.append(
            load_embedding_table(
                resolve(entry["emb_path"]),
                model_id=str(entry["id"]),
                labels_path=labels_path,
                sample_ids=sample_ids,
            )
        )

    head = None
    if spec.get("head_path"):
        weights = read_head_file(resolve(spec["head_path"]))
        names = tuple(spec["class_names"]) if spec.get("class_names") else None
        head = ZeroShotHead(weights=weights, class_names=names)

    return TaskBundle(
        tables=tuple(tables),
        head=head,
        mean_model_id=spec.get("mean_model_id"),
        class_names=tuple(spec["class_names"]) if spec.get("class_names") else None,
        train_idx=np.arange(tables[0].n_samples, dtype=np.int64),
        val_idx=np.empty(0, dtype=np.int64),
        test_idx=np.empty(0, dtype=np.int64),
    )


def write_manifest(
    manifest_path: str | Path,
    *,
    models: Sequence[tuple[str, str]],
    labels_path: str | None = None,
    head_path: str | None = None,
    mean_model_id: str | None = None,
    class_names: Sequence[str] | None = None,
    sample_ids_path: str | None = None,
) -> None:
    """Write a manifest JSON; paths must already be relative to its directory."""
    spec: dict = {"models": [{"id": mid, "emb_path": rel} for mid, rel in models]}
    if labels_path:
        spec["labels_path"] = labels_path
    if head_path:
        spec["head_path"] = head_path
    if mean_model_id:
        spec["mean_model_id"] = mean_model_id
    if class_names:
        spec["class_names"] = list(class_names)
    if sample_ids_path:
        spec["sample_ids_path"] = sample_ids_path
    Path(manifest_path).write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n", "utf-8")


# ---------------------------------------------------------------------------
# Deterministic sampling
# ---------------------------------------------------------------------------


def _class_pools(bundle: TaskBundle, pool: np.ndarray) -> list[np.ndarray]:
    labels = bundle.labels
    if labels is None:
        raise EmptyInput("bundle has no labels; cannot sample per class")
    return [pool[labels[pool] == c] for c in range(bundle.num_classes)]


def sample_few_shot(bundle: TaskBundle, shots: int, seed: int) -> TaskBundle:
    """Draw ``shots`` support samples per class from the train pool.

    Each class c shuffles its pool with ``SplitMix64(seed, stream=2*c)`` and
    keeps the first ``shots`` entries, so the draw for one class never depends
    on the others or on the order tables were listed.  The result's train
    split is the support set; the val split is emptied; test is untouched.
    """
    if shots < 1:
        raise InsufficientSamples(f"shots must be >= 1, got {shots}")
    chosen: list[int] = []
    for c, pool in enumerate(_class_pools(bundle, bundle.train_idx)):
        if pool.size < shots:
            raise InsufficientSamples(
                f"class {c} has {pool.size} candidate samples, need {shots}",
                class_id=c,
            )
        items = [int(i) for i in np.sort(pool)]
        SplitMix64(seed, stream=2 * c + _STREAM_SAMPLE).shuffle(items)
        chosen.extend(items[:shots])
    return replace(
        bundle,
        train_idx=np.asarray(chosen, dtype=np.int64),
        val_idx=np.empty(0, dtype=np.int64),
    )


def split_train_val(bundle: TaskBundle, seed: int) -> TaskBundle:
    """Split the train pool 1:1 per class into train and validation halves.

    Each class shuffles with ``SplitMix64(seed, stream=2*c + 1)``; the first
    floor(n_c/2) samples train, the remainder validate, so odd classes give
    the extra sample to validation.  A class with fewer than two samples
    cannot appear on both sides and raises TooFewShots.
    """
    train: list[int] = []
    val: list[int] = []
    for c, pool in enumerate(_class_pools(bundle, bundle.train_idx)):
        if pool.size < 2:
            raise TooFewShots(
                f"class {c} has {pool.size} sample(s); need >= 2 to split train/val",
                class_id=c,
            )
        items = [int(i) for i in np.sort(pool)]
        SplitMix64(seed, stream=2 * c + _STREAM_SPLIT).shuffle(items)
        half = pool.size // 2
        train.extend(items[:half])
        val.extend(items[half:])
    return replace(
        bundle,
        train_idx=np.asarray(train, dtype=np.int64),
        val_idx=np.asarray(val, dtype=np.int64),
    )
