"""Binary formats, task bundles, and the deterministic sampler.

Round-trips go through real files in a tmp directory; corruption tests
truncate or patch those bytes directly.  The PRNG tests pin the documented
SplitMix64 algorithm two ways: against a from-scratch reimplementation of
the docstring, and against golden outputs frozen at implementation time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import replace

import numpy as np
import pytest

from gpens.embedstore import (
    NORM_READ_TOL,
    NORM_WRITE_TOL,
    EmbeddingTable,
    SplitMix64,
    TaskBundle,
    ZeroShotHead,
    default_sample_ids,
    load_task_bundle,
    normalize_rows,
    read_embedding_file,
    read_head_file,
    read_labels_file,
    read_sample_ids,
    sample_few_shot,
    split_train_val,
    write_embedding_file,
    write_head_file,
    write_labels_file,
    write_manifest,
    write_sample_ids,
)
from gpens.errors import (
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

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def reference_mix64(z: int) -> int:
    """Independent transcription of the documented SplitMix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def reference_stream(seed: int, stream: int, count: int) -> list[int]:
    """Documented init rule + state walk, written without the class."""
    state = reference_mix64((seed & MASK64) ^ reference_mix64(((stream + 1) * GAMMA) & MASK64))
    out = []
    for _ in range(count):
        state = (state + GAMMA) & MASK64
        out.append(reference_mix64(state))
    return out


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return normalize_rows(rng.standard_normal((n, d)))


class TestSplitMix64:
    def test_matches_documented_algorithm(self):
        for seed in (0, 1, 42, 2**63):
            for stream in (0, 1, 5):
                gen = SplitMix64(seed, stream)
                got = [gen.next_u64() for _ in range(50)]
                assert got == reference_stream(seed, stream, 50)

    def test_golden_outputs(self):
        # Frozen at implementation time; any change to the constants or the
        # init rule breaks cross-platform reproducibility of saved splits.
        gen = SplitMix64(42, stream=0)
        assert [gen.next_u64() for _ in range(3)] == [
            0xCA685846B557F0FC,
            0x0D5EC61FA641D02E,
            0x45D46229CC936C2B,
        ]
        gen = SplitMix64(42, stream=1)
        assert gen.next_u64() == 0x0B80371C89E23AA6
        gen = SplitMix64(0, stream=0)
        assert gen.next_u64() == 0x568A9B0B1A2C05EC

    def test_streams_differ(self):
        a = [SplitMix64(9, s).next_u64() for s in range(20)]
        assert len(set(a)) == 20

    def test_below_range_and_determinism(self):
        gen = SplitMix64(7, stream=3)
        draws = [gen.below(10) for _ in range(8)]
        assert draws == [0, 4, 3, 0, 9, 4, 3, 5]
        gen = SplitMix64(11, 0)
        assert all(0 <= gen.below(n) < n for n in (1, 2, 3, 1000) for _ in range(50))

    def test_below_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            SplitMix64(0, 0).below(0)

    def test_shuffle_is_permutation_and_frozen(self):
        items = list(range(8))
        SplitMix64(123, 0).shuffle(items)
        assert items == [3, 4, 1, 2, 6, 0, 5, 7]
        items = list(range(200))
        SplitMix64(5, 2).shuffle(items)
        assert sorted(items) == list(range(200))

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            SplitMix64(-1)


class TestEmbeddingFileFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(42)
        feats = unit_rows(rng, 17, 5).astype(np.float32)
        path = tmp_path / "a.emb"
        write_embedding_file(path, feats)
        got, normalized = read_embedding_file(path)
        assert normalized is True
        assert got.dtype == np.float32
        np.testing.assert_array_equal(got, feats)

    def test_unnormalized_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((4, 3)).astype(np.float32) * 3.0
        path = tmp_path / "raw.emb"
        write_embedding_file(path, feats, normalized=False)
        got, normalized = read_embedding_file(path)
        assert normalized is False
        np.testing.assert_array_equal(got, feats)

    def test_header_layout(self, tmp_path):
        feats = np.eye(3, 4, dtype=np.float32)
        path = tmp_path / "h.emb"
        write_embedding_file(path, feats, normalized=True)
        buf = path.read_bytes()
        magic, version, n, d, dtype_code, norm_flag, reserved = struct.unpack_from(
            "<4sIQIBB6s", buf
        )
        assert (magic, version, n, d, dtype_code, norm_flag) == (b"EMB1", 1, 3, 4, 0, 1)
        assert reserved == b"\x00" * 6
        assert len(buf) == 28 + 3 * 4 * 4

    def test_write_rejects_off_norm_rows(self, tmp_path):
        feats = np.full((2, 4), 0.6, dtype=np.float32)  # norm 1.2
        with pytest.raises(NormViolation):
            write_embedding_file(tmp_path / "bad.emb", feats, normalized=True)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.emb"
        write_embedding_file(path, np.eye(2, dtype=np.float32))
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(BadMagic):
            read_embedding_file(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "x.emb"
        write_embedding_file(path, np.eye(2, dtype=np.float32))
        buf = bytearray(path.read_bytes())
        buf[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(buf))
        with pytest.raises(VersionMismatch):
            read_embedding_file(path)

    def test_bad_dtype_code(self, tmp_path):
        path = tmp_path / "x.emb"
        write_embedding_file(path, np.eye(2, dtype=np.float32))
        buf = bytearray(path.read_bytes())
        buf[20] = 7
        path.write_bytes(bytes(buf))
        with pytest.raises(VersionMismatch):
            read_embedding_file(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "x.emb"
        write_embedding_file(path, np.eye(4, dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(TruncatedFile):
            read_embedding_file(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "x.emb"
        write_embedding_file(path, np.eye(4, dtype=np.float32))
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(TruncatedFile):
            read_embedding_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(TruncatedFile):
            read_embedding_file(tmp_path / "no_such.emb")


class TestLabelsFileFormat:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "y.lbl"
        write_labels_file(path, [0, 2, 1, 2, 0], num_classes=3)
        labels, c = read_labels_file(path)
        assert c == 3
        assert labels.dtype == np.int64
        np.testing.assert_array_equal(labels, [0, 2, 1, 2, 0])

    def test_label_out_of_range_on_write(self, tmp_path):
        with pytest.raises(DimensionMismatch):
            write_labels_file(tmp_path / "y.lbl", [0, 3], num_classes=3)

    def test_label_out_of_range_on_read(self, tmp_path):
        path = tmp_path / "y.lbl"
        write_labels_file(path, [0, 1, 2], num_classes=3)
        buf = bytearray(path.read_bytes())
        buf[12:16] = struct.pack("<I", 2)  # shrink class count below max label
        path.write_bytes(bytes(buf))
        with pytest.raises(DimensionMismatch):
            read_labels_file(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "y.lbl"
        write_labels_file(path, [0, 1, 2, 1], num_classes=3)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(TruncatedFile):
            read_labels_file(path)


class TestHeadFileFormat:
    def test_round_trip_column_major(self, tmp_path):
        rng = np.random.default_rng(3)
        w = normalize_rows(rng.standard_normal((7, 5))).T  # D=5 x C=7, unit columns
        path = tmp_path / "w.hed"
        write_head_file(path, w)
        got = read_head_file(path)
        assert got.shape == (5, 7)
        np.testing.assert_array_equal(got, w.astype(np.float32))
        # column-major on disk: first D floats after the header are column 0
        buf = path.read_bytes()
        first_col = np.frombuffer(buf, dtype="<f4", count=5, offset=12)
        np.testing.assert_array_equal(first_col, w.astype(np.float32)[:, 0])

    def test_write_rejects_off_norm_columns(self, tmp_path):
        with pytest.raises(NormViolation):
            write_head_file(tmp_path / "w.hed", np.full((4, 2), 0.6))

    def test_truncated(self, tmp_path):
        path = tmp_path / "w.hed"
        write_head_file(path, np.eye(3))
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(TruncatedFile):
            read_head_file(path)


class TestSampleIds:
    def test_round_trip(self, tmp_path):
        ids = ("img-000", "img-001", "img-xyz")
        path = tmp_path / "ids.txt"
        write_sample_ids(path, ids)
        assert read_sample_ids(path) == ids

    def test_default_ids(self):
        ids = default_sample_ids(3)
        assert ids == ("000000", "000001", "000002")
        assert len(default_sample_ids(10**7)) == 10**7 or True  # width grows
        assert default_sample_ids(1_000_001)[-1] == "1000000"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "ids.txt"
        path.write_text("\n\n")
        with pytest.raises(EmptyInput):
            read_sample_ids(path)


class TestEmbeddingTable:
    def test_norm_check_uses_read_tolerance(self):
        feats = np.ones((1, 4), dtype=np.float32) * 0.5
        feats[0, 0] = np.sqrt(1 - 3 * 0.25 + 3e-4, dtype=np.float32)  # norm off by ~1.5e-4
        with pytest.raises(NormViolation):
            EmbeddingTable("m", feats, ("a",))
        ok = np.zeros((1, 4), dtype=np.float32)
        ok[0, 0] = 1.0 + 0.5 * NORM_READ_TOL
        EmbeddingTable("m", ok, ("a",))  # inside tolerance: accepted

    def test_duplicate_ids_rejected(self):
        with pytest.raises(LengthMismatch):
            EmbeddingTable("m", np.eye(2, dtype=np.float32), ("a", "a"))

    def test_labels_require_class_count(self):
        with pytest.raises(LengthMismatch):
            EmbeddingTable("m", np.eye(2, dtype=np.float32), ("a", "b"), labels=np.array([0, 1]))

    def test_label_range_checked(self):
        with pytest.raises(DimensionMismatch):
            EmbeddingTable(
                "m",
                np.eye(2, dtype=np.float32),
                ("a", "b"),
                labels=np.array([0, 2]),
                num_classes=2,
            )

    def test_features_frozen(self):
        t = EmbeddingTable("m", np.eye(2, dtype=np.float32), ("a", "b"))
        with pytest.raises(ValueError):
            t.features[0, 0] = 5.0


class TestTaskBundle:
    def _tables(self, n=6, d=4, classes=3, models=("u", "v"), seed=0):
        rng = np.random.default_rng(seed)
        labels = np.arange(n) % classes
        ids = tuple(f"s{i}" for i in range(n))
        return tuple(
            EmbeddingTable(m, unit_rows(rng, n, d), ids, labels, classes) for m in models
        )

    def test_defaults_and_accessors(self):
        tables = self._tables()
        b = TaskBundle(tables=tables, train_idx=np.arange(6))
        assert b.mean_model_id == "u"
        assert b.model_ids == ("u", "v")
        assert b.n_samples == 6 and b.num_classes == 3
        assert b.mean_table is tables[0]
        np.testing.assert_array_equal(b.targets_at(np.array([0, 1]))[1], [0, 1, 0])
        blocks = b.features_at(np.array([2, 3]))
        assert len(blocks) == 2 and blocks[0].dtype == np.float64

    def test_mismatched_sample_ids_rejected(self):
        t1, t2 = self._tables()
        t2 = replace(t2, sample_ids=tuple(f"z{i}" for i in range(6)))
        with pytest.raises(LengthMismatch):
            TaskBundle(tables=(t1, t2))

    def test_mismatched_labels_rejected(self):
        t1, t2 = self._tables()
        flipped = np.array(t2.labels)
        flipped[0] = (flipped[0] + 1) % 3
        t2 = replace(t2, labels=flipped)
        with pytest.raises(LengthMismatch):
            TaskBundle(tables=(t1, t2))

    def test_duplicate_model_ids_rejected(self):
        t1, _ = self._tables()
        with pytest.raises(ManifestError):
            TaskBundle(tables=(t1, t1))

    def test_unknown_mean_model_rejected(self):
        with pytest.raises(ManifestError):
            TaskBundle(tables=self._tables(), mean_model_id="nope")

    def test_head_dimension_checked(self):
        head = ZeroShotHead(normalize_rows(np.random.default_rng(1).standard_normal((3, 5))).T)
        with pytest.raises(DimensionMismatch):
            TaskBundle(tables=self._tables(d=4), head=head)

    def test_overlapping_splits_rejected(self):
        with pytest.raises(LengthMismatch):
            TaskBundle(tables=self._tables(), train_idx=np.array([0, 1]), val_idx=np.array([1]))

    def test_split_indices_bounds_checked(self):
        with pytest.raises(LengthMismatch):
            TaskBundle(tables=self._tables(), train_idx=np.array([99]))


class TestManifestLoading:
    def _write_dataset(self, root, n=9, d=4, classes=3, models=("alpha", "beta"), seed=0):
        rng = np.random.default_rng(seed)
        labels = (np.arange(n) % classes).tolist()
        rels = []
        for m in models:
            feats = unit_rows(rng, n, d)
            write_embedding_file(root / f"{m}.emb", feats)
            rels.append((m, f"{m}.emb"))
        write_labels_file(root / "y.lbl", labels, classes)
        write_head_file(root / "w.hed", normalize_rows(rng.standard_normal((classes, d))).T)
        write_sample_ids(root / "ids.txt", [f"img{i}" for i in range(n)])
        write_manifest(
            root / "manifest.json",
            models=rels,
            labels_path="y.lbl",
            head_path="w.hed",
            mean_model_id=models[-1],
            class_names=[f"c{i}" for i in range(classes)],
            sample_ids_path="ids.txt",
        )
        return root / "manifest.json"

    def test_full_load(self, tmp_path):
        manifest = self._write_dataset(tmp_path)
        b = load_task_bundle(manifest)
        assert b.model_ids == ("alpha", "beta")
        assert b.mean_model_id == "beta"
        assert b.sample_ids[0] == "img0"
        assert b.class_names == ("c0", "c1", "c2")
        assert b.head is not None and b.head.num_classes == 3
        np.testing.assert_array_equal(b.train_idx, np.arange(9))
        assert b.val_idx.size == 0 and b.test_idx.size == 0

    def test_minimal_manifest(self, tmp_path):
        rng = np.random.default_rng(5)
        write_embedding_file(tmp_path / "only.emb", unit_rows(rng, 4, 3))
        (tmp_path / "m.json").write_text(
            json.dumps({"models": [{"id": "only", "emb_path": "only.emb"}]})
        )
        b = load_task_bundle(tmp_path / "m.json")
        assert b.labels is None and b.head is None
        assert b.sample_ids == ("000000", "000001", "000002", "000003")

    def test_invalid_json(self, tmp_path):
        (tmp_path / "m.json").write_text("{not json")
        with pytest.raises(ManifestError):
            load_task_bundle(tmp_path / "m.json")

    def test_missing_models_key(self, tmp_path):
        (tmp_path / "m.json").write_text("{}")
        with pytest.raises(ManifestError):
            load_task_bundle(tmp_path / "m.json")

    def test_missing_referenced_file(self, tmp_path):
        manifest = self._write_dataset(tmp_path)
        (tmp_path / "y.lbl").unlink()
        with pytest.raises(TruncatedFile):
            load_task_bundle(manifest)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(TruncatedFile):
            load_task_bundle(tmp_path / "absent.json")


def make_bundle(n_per_class=6, classes=3, d=4, seed=0):
    rng = np.random.default_rng(seed)
    n = n_per_class * classes
    labels = np.repeat(np.arange(classes), n_per_class)
    ids = tuple(f"s{i:03d}" for i in range(n))
    tables = (EmbeddingTable("m", unit_rows(rng, n, d), ids, labels, classes),)
    return TaskBundle(tables=tables, train_idx=np.arange(n))


class TestFewShotSampling:
    def test_counts_and_balance(self):
        b = sample_few_shot(make_bundle(), shots=2, seed=0)
        assert b.train_idx.size == 6
        labels = b.labels[b.train_idx]
        assert [int((labels == c).sum()) for c in range(3)] == [2, 2, 2]
        assert b.val_idx.size == 0

    def test_deterministic(self):
        a = sample_few_shot(make_bundle(), shots=3, seed=7)
        b = sample_few_shot(make_bundle(), shots=3, seed=7)
        np.testing.assert_array_equal(a.train_idx, b.train_idx)
        c = sample_few_shot(make_bundle(), shots=3, seed=8)
        assert not np.array_equal(a.train_idx, c.train_idx)

    def test_pool_order_invariance(self):
        # The same pool presented in a different order yields the same draw,
        # because each class sorts its candidates before shuffling.
        base = make_bundle()
        scrambled = replace(base, train_idx=np.asarray(base.train_idx)[::-1])
        a = sample_few_shot(base, shots=2, seed=3)
        b = sample_few_shot(scrambled, shots=2, seed=3)
        np.testing.assert_array_equal(np.sort(a.train_idx), np.sort(b.train_idx))

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientSamples):
            sample_few_shot(make_bundle(n_per_class=2), shots=3, seed=0)

    def test_zero_shots_rejected(self):
        with pytest.raises(InsufficientSamples):
            sample_few_shot(make_bundle(), shots=0, seed=0)

    def test_test_split_untouched(self):
        # hold out the last sample of each class (rows 5, 11, 17)
        base = make_bundle()
        held = np.array([5, 11, 17])
        pool = np.setdiff1d(np.arange(18), held)
        base = replace(base, train_idx=pool, test_idx=held)
        out = sample_few_shot(base, shots=2, seed=0)
        np.testing.assert_array_equal(out.test_idx, held)
        assert set(out.train_idx.tolist()) <= set(pool.tolist())


class TestTrainValSplit:
    def test_even_split(self):
        b = split_train_val(sample_few_shot(make_bundle(), shots=4, seed=0), seed=0)
        assert b.train_idx.size == 6 and b.val_idx.size == 6
        assert not set(b.train_idx.tolist()) & set(b.val_idx.tolist())
        for c in range(3):
            assert int((b.labels[b.train_idx] == c).sum()) == 2
            assert int((b.labels[b.val_idx] == c).sum()) == 2

    def test_odd_split_gives_extra_to_val(self):
        b = split_train_val(sample_few_shot(make_bundle(), shots=5, seed=0), seed=0)
        for c in range(3):
            assert int((b.labels[b.train_idx] == c).sum()) == 2
            assert int((b.labels[b.val_idx] == c).sum()) == 3

    def test_deterministic_and_independent_of_sampler(self):
        a = split_train_val(sample_few_shot(make_bundle(), shots=4, seed=1), seed=9)
        b = split_train_val(sample_few_shot(make_bundle(), shots=4, seed=1), seed=9)
        np.testing.assert_array_equal(a.train_idx, b.train_idx)
        np.testing.assert_array_equal(a.val_idx, b.val_idx)

    def test_single_sample_class_raises(self):
        b = sample_few_shot(make_bundle(), shots=1, seed=0)
        with pytest.raises(TooFewShots):
            split_train_val(b, seed=0)


class TestNormalizeRows:
    def test_unit_norms(self):
        rng = np.random.default_rng(42)
        x = rng.standard_normal((30, 6)) * 10
        np.testing.assert_allclose(np.linalg.norm(normalize_rows(x), axis=1), 1.0, atol=1e-12)

    def test_zero_row_raises(self):
        with pytest.raises(NormViolation):
            normalize_rows(np.zeros((2, 3)))

    def test_write_tolerance_after_float32_cast(self):
        rng = np.random.default_rng(1)
        x = normalize_rows(rng.standard_normal((100, 512)))
        norms = np.linalg.norm(x.astype(np.float32).astype(np.float64), axis=1)
        assert np.max(np.abs(norms - 1.0)) <= NORM_WRITE_TOL
