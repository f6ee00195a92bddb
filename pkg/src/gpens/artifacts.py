"""Fitted-model artifact: a small binary container with a JSON header.

Layout (little-endian):

    offset 0   magic ``b"GPM1"``
    offset 4   u32 format version (must be 1)
    offset 8   u32 header length in bytes
    offset 12  UTF-8 JSON header (sorted keys, 2-space indent)
    ...        u64 train count, then that many u64 row indices
    ...        u64 val count, then that many u64 row indices

The header carries the tuned hyper-parameters at full precision (floats
serialize via shortest round-trip repr), the run configuration echo, and
dataset bookkeeping -- but never timestamps or absolute machine paths, so
re-running the same fit produces a byte-identical file.  The head matrix is
not stored; evaluation reloads it (and the training features) from the
training manifest recorded in the header.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedstore import ZeroShotHead
from .errors import BadMagic, ManifestError, TruncatedFile, VersionMismatch
from .gpcore import HyperParams
from .kernels import BaseKernelKind, DeepKernelSpec
from .meanfn import ConstantMean, MeanSpec, SoftmaxHeadMean, ZeroMean

MODEL_MAGIC = b"GPM1"
MODEL_FORMAT_VERSION = 1

_PREFIX = struct.Struct("<4sII")


def _hyper_to_json(hyper: HyperParams) -> dict:
    kernels = [
        {
            "kind": k.kind.value,
            "log_lengthscales": [float(v) for v in k.log_lengthscales],
            "model_id": k.model_id,
            "scalar_lengthscale": k.scalar_lengthscale,
        }
        for k in hyper.kernels
    ]
    mean: dict = {"variant": "zero"}
    if isinstance(hyper.mean, ConstantMean):
        mean = {"variant": "constant", "values": [float(v) for v in hyper.mean.values]}
    elif isinstance(hyper.mean, SoftmaxHeadMean):
        mean = {
            "variant": "zero-shot-softmax",
            "log_tau": float(hyper.mean.log_tau),
            "log_gamma": float(hyper.mean.log_gamma),
        }
    return {"kernels": kernels, "log_sigma2": float(hyper.log_sigma2), "mean": mean}


def _hyper_from_json(spec: dict, head: ZeroShotHead | None) -> HyperParams:
    try:
        kernels = tuple(
            DeepKernelSpec(
                model_id=k["model_id"],
                kind=BaseKernelKind(k["kind"]),
                log_lengthscales=np.asarray(k["log_lengthscales"], dtype=np.float64),
                scalar_lengthscale=bool(k["scalar_lengthscale"]),
            )
            for k in spec["kernels"]
        )
        mean_spec = spec["mean"]
        variant = mean_spec["variant"]
        mean: MeanSpec
        if variant == "zero":
            mean = ZeroMean()
        elif variant == "constant":
            mean = ConstantMean(values=np.asarray(mean_spec["values"], dtype=np.float64))
        elif variant == "zero-shot-softmax":
            if head is None:
                raise ManifestError(
                    "model uses the zero-shot softmax mean but no head is available"
                )
            mean = SoftmaxHeadMean(
                head=head,
                log_tau=float(mean_spec["log_tau"]),
                log_gamma=float(mean_spec["log_gamma"]),
            )
        else:
            raise ManifestError(f"unknown mean variant {variant!r}")
        return HyperParams(
            log_sigma2=float(spec["log_sigma2"]), kernels=kernels, mean=mean
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"model header hyper block is malformed: {exc}")


@dataclass(frozen=True)
class ModelArtifact:
    """Parsed model file: JSON header plus the stored split index lists."""

    header: dict
    train_idx: np.ndarray
    val_idx: np.ndarray

    @property
    def conditioning_idx(self) -> np.ndarray:
        """Row indices the final GP was conditioned on, in stored order."""
        if self.header.get("conditioning") == "train+val":
            return np.concatenate([self.train_idx, self.val_idx])
        return self.train_idx

    def hyper_params(self, head: ZeroShotHead | None = None) -> HyperParams:
        return _hyper_from_json(self.header["hyper"], head)

    def kernel_specs(self) -> tuple[DeepKernelSpec, ...]:
        """Just the tuned kernels (no mean), e.g. for gram visualization."""
        try:
            return tuple(
                DeepKernelSpec(
                    model_id=k["model_id"],
                    kind=BaseKernelKind(k["kind"]),
                    log_lengthscales=np.asarray(k["log_lengthscales"], dtype=np.float64),
                    scalar_lengthscale=bool(k["scalar_lengthscale"]),
                )
                for k in self.header["hyper"]["kernels"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"model header kernel block is malformed: {exc}")

    @property
    def uses_softmax_mean(self) -> bool:
        return self.header["hyper"]["mean"]["variant"] == "zero-shot-softmax"


def write_model(
    path: str | Path,
    *,
    hyper: HyperParams,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    train_manifest: str,
    conditioning: str,
    class_count: int,
    model_ids: list[str],
    mean_model_id: str,
    class_names: list[str] | None,
    objective_requested: str,
    objective_used: str,
    fallback_reason: str | None,
    config: dict,
) -> None:
    if not math.isfinite(hyper.log_sigma2):
        raise ManifestError("refusing to store non-finite hyper-parameters")
    header = {
        "class_count": class_count,
        "class_names": list(class_names) if class_names else None,
        "conditioning": conditioning,
        "config": config,
        "fallback_reason": fallback_reason,
        "format_version": MODEL_FORMAT_VERSION,
        "hyper": _hyper_to_json(hyper),
        "mean_model_id": mean_model_id,
        "model_ids": list(model_ids),
        "objective_requested": objective_requested,
        "objective_used": objective_used,
        "train_manifest": train_manifest,
    }
    blob = json.dumps(header, indent=2, sort_keys=True).encode("utf-8")
    train = np.asarray(train_idx, dtype="<u8")
    val = np.asarray(val_idx, dtype="<u8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MODEL_MAGIC, MODEL_FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", train.size))
        fh.write(train.tobytes())
        fh.write(struct.pack("<Q", val.size))
        fh.write(val.tobytes())


def read_model(path: str | Path) -> ModelArtifact:
    path = Path(path)
    if not path.is_file():
        raise TruncatedFile(f"file not found: {path}", path=str(path))
    buf = path.read_bytes()
    if len(buf) < 4 or buf[:4] != MODEL_MAGIC:
        raise BadMagic(f"expected magic {MODEL_MAGIC!r}, got {buf[:4]!r}", path=str(path))
    if len(buf) < _PREFIX.size:
        raise TruncatedFile("model file shorter than its fixed prefix", path=str(path))
    _, version, header_len = _PREFIX.unpack_from(buf)
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(
            f"model format version {version} unsupported "
            f"(expected {MODEL_FORMAT_VERSION})",
            path=str(path),
        )
    pos = _PREFIX.size
    if len(buf) < pos + header_len:
        raise TruncatedFile("model header extends past end of file", path=str(path))
    try:
        header = json.loads(buf[pos : pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"model header is not valid JSON: {exc}", path=str(path))
    pos += header_len

    def read_idx(pos: int) -> tuple[np.ndarray, int]:
        if len(buf) < pos + 8:
            raise TruncatedFile("model index section truncated", path=str(path))
        (count,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        end = pos + count * 8
        if len(buf) < end:
            raise TruncatedFile("model index list truncated", path=str(path))
        idx = np.frombuffer(buf, dtype="<u8", count=count, offset=pos).astype(np.int64)
        return idx, end

    train_idx, pos = read_idx(pos)
    val_idx, pos = read_idx(pos)
    if pos != len(buf):
        raise TruncatedFile(
            f"{len(buf) - pos} trailing bytes after model payload", path=str(path)
        )
    return ModelArtifact(header=header, train_idx=train_idx, val_idx=val_idx)
