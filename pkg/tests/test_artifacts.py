"""Model-artifact container: round-trips, determinism, corruption handling."""

from __future__ import annotations

import json
import math
import struct

import numpy as np
import pytest

from gpens.artifacts import MODEL_MAGIC, ModelArtifact, read_model, write_model
from gpens.embedstore import ZeroShotHead, normalize_rows
from gpens.errors import BadMagic, ManifestError, TruncatedFile, VersionMismatch
from gpens.gpcore import HyperParams
from gpens.kernels import BaseKernelKind, DeepKernelSpec
from gpens.meanfn import ConstantMean, SoftmaxHeadMean, ZeroMean


def make_head(rng, d=4, c=3):
    return ZeroShotHead(weights=normalize_rows(rng.standard_normal((c, d))).T)


def sample_hyper(mean="softmax", rng=None):
    rng = rng or np.random.default_rng(42)
    kernels = (
        DeepKernelSpec("alpha", BaseKernelKind.RBF, rng.normal(0, 0.5, 4)),
        DeepKernelSpec("beta", BaseKernelKind.MATERN52, np.full(3, 0.21), scalar_lengthscale=True),
    )
    means = {
        "zero": ZeroMean(),
        "constant": ConstantMean(np.array([0.1, -0.2, 0.3])),
        "softmax": SoftmaxHeadMean(make_head(rng), log_tau=math.log(7.5), log_gamma=0.125),
    }
    return HyperParams(log_sigma2=math.log(0.031), kernels=kernels, mean=means[mean])


def write_sample(path, hyper, **overrides):
    kwargs = dict(
        hyper=hyper,
        train_idx=np.array([4, 1, 9]),
        val_idx=np.array([2, 7]),
        train_manifest="train/manifest.json",
        conditioning="train+val",
        class_count=3,
        model_ids=["alpha", "beta"],
        mean_model_id="alpha",
        class_names=["a", "b", "c"],
        objective_requested="predictive",
        objective_used="predictive",
        fallback_reason=None,
        config={"shots": 5, "seed": 0},
    )
    kwargs.update(overrides)
    write_model(path, **kwargs)


class TestRoundTrip:
    @pytest.mark.parametrize("mean", ["zero", "constant", "softmax"])
    def test_hyper_parameters_survive(self, tmp_path, mean):
        rng = np.random.default_rng(7)
        hyper = sample_hyper(mean, rng)
        path = tmp_path / "model.gpm"
        write_sample(path, hyper)
        art = read_model(path)
        head = make_head(np.random.default_rng(7)) if mean == "softmax" else None
        back = art.hyper_params(head)
        assert back.log_sigma2 == hyper.log_sigma2  # full precision, not rounded
        for a, b in zip(back.kernels, hyper.kernels):
            assert a.model_id == b.model_id and a.kind == b.kind
            assert a.scalar_lengthscale == b.scalar_lengthscale
            np.testing.assert_array_equal(a.log_lengthscales, b.log_lengthscales)
        if mean == "constant":
            np.testing.assert_array_equal(back.mean.values, hyper.mean.values)
        if mean == "softmax":
            assert back.mean.log_tau == hyper.mean.log_tau
            assert back.mean.log_gamma == hyper.mean.log_gamma
            assert art.uses_softmax_mean
        else:
            assert not art.uses_softmax_mean

    def test_indices_and_conditioning(self, tmp_path):
        path = tmp_path / "model.gpm"
        write_sample(path, sample_hyper("zero"))
        art = read_model(path)
        np.testing.assert_array_equal(art.train_idx, [4, 1, 9])
        np.testing.assert_array_equal(art.val_idx, [2, 7])
        np.testing.assert_array_equal(art.conditioning_idx, [4, 1, 9, 2, 7])
        assert art.header["train_manifest"] == "train/manifest.json"
        assert art.header["config"] == {"shots": 5, "seed": 0}

    def test_conditioning_train_only(self, tmp_path):
        path = tmp_path / "model.gpm"
        write_sample(path, sample_hyper("zero"), conditioning="train")
        np.testing.assert_array_equal(read_model(path).conditioning_idx, [4, 1, 9])

    def test_kernel_specs_need_no_head(self, tmp_path):
        path = tmp_path / "model.gpm"
        write_sample(path, sample_hyper("softmax"))
        specs = read_model(path).kernel_specs()
        assert [s.model_id for s in specs] == ["alpha", "beta"]
        assert specs[1].scalar_lengthscale

    def test_softmax_mean_requires_head_to_rebuild(self, tmp_path):
        path = tmp_path / "model.gpm"
        write_sample(path, sample_hyper("softmax"))
        with pytest.raises(ManifestError):
            read_model(path).hyper_params(None)

    def test_empty_val_indices(self, tmp_path):
        path = tmp_path / "model.gpm"
        write_sample(path, sample_hyper("zero"), val_idx=np.empty(0, dtype=np.int64),
                     conditioning="train")
        art = read_model(path)
        assert art.val_idx.size == 0


class TestDeterminism:
    def test_byte_identical_rewrites(self, tmp_path):
        hyper = sample_hyper("softmax")
        a, b = tmp_path / "a.gpm", tmp_path / "b.gpm"
        write_sample(a, hyper)
        write_sample(b, hyper)
        assert a.read_bytes() == b.read_bytes()

    def test_header_is_canonical_json(self, tmp_path):
        path = tmp_path / "model.gpm"
        write_sample(path, sample_hyper("constant"))
        buf = path.read_bytes()
        (_, _, header_len) = struct.unpack_from("<4sII", buf)
        raw = buf[12 : 12 + header_len].decode("utf-8")
        header = json.loads(raw)
        assert raw == json.dumps(header, indent=2, sort_keys=True)
        assert "timestamp" not in raw.lower()


class TestCorruption:
    def _valid(self, tmp_path):
        path = tmp_path / "model.gpm"
        write_sample(path, sample_hyper("zero"))
        return path

    def test_missing_file(self, tmp_path):
        with pytest.raises(TruncatedFile):
            read_model(tmp_path / "absent.gpm")

    def test_bad_magic(self, tmp_path):
        path = self._valid(tmp_path)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(BadMagic):
            read_model(path)

    def test_bad_version(self, tmp_path):
        path = self._valid(tmp_path)
        buf = bytearray(path.read_bytes())
        buf[4:8] = struct.pack("<I", 2)
        path.write_bytes(bytes(buf))
        with pytest.raises(VersionMismatch):
            read_model(path)

    def test_truncated_header(self, tmp_path):
        path = self._valid(tmp_path)
        path.write_bytes(path.read_bytes()[:20])
        with pytest.raises(TruncatedFile):
            read_model(path)

    def test_truncated_index_list(self, tmp_path):
        path = self._valid(tmp_path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(TruncatedFile):
            read_model(path)

    def test_trailing_garbage(self, tmp_path):
        path = self._valid(tmp_path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(TruncatedFile):
            read_model(path)

    def test_header_not_json(self, tmp_path):
        path = self._valid(tmp_path)
        buf = bytearray(path.read_bytes())
        (_, _, header_len) = struct.unpack_from("<4sII", buf)
        buf[12 : 12 + 2] = b"{{"
        path.write_bytes(bytes(buf))
        with pytest.raises(ManifestError):
            read_model(path)

    def test_malformed_hyper_block(self, tmp_path):
        path = tmp_path / "model.gpm"
        write_sample(path, sample_hyper("zero"))
        art = read_model(path)
        broken = dict(art.header)
        broken["hyper"] = {"kernels": [{"model_id": "x"}], "mean": {"variant": "zero"}}
        with pytest.raises(ManifestError):
            ModelArtifact(broken, art.train_idx, art.val_idx).hyper_params()

    def test_nonfinite_hyper_rejected_on_write(self, tmp_path):
        hyper = sample_hyper("zero")
        bad = HyperParams.__new__(HyperParams)
        object.__setattr__(bad, "log_sigma2", float("inf"))
        object.__setattr__(bad, "kernels", hyper.kernels)
        object.__setattr__(bad, "mean", hyper.mean)
        with pytest.raises(ManifestError):
            write_sample(tmp_path / "model.gpm", bad)

    def test_magic_constant(self):
        assert MODEL_MAGIC == b"GPM1"
