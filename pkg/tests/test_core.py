"""Interchange format, domain type validation, and row normalization."""

from __future__ import annotations

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftguard.core import (
    FeatureMatrix,
    FeatureSetMetadata,
    Normalization,
    SampleLabel,
    ScoreOrientation,
    ScoreSet,
    l2_normalize,
    read_features,
    read_features_csv,
    write_features,
)
from driftguard.errors import (
    DataError,
    DegenerateInputError,
    FormatError,
    IoError,
    ShapeError,
)


def make_vfmf(n: int, d: int, values) -> bytes:
    """Independent encoder used as the test oracle for the file layout."""
    head = b"VFMF" + bytes([1]) + struct.pack("<II", n, d)
    body = b"".join(struct.pack("<f", float(v)) for v in values)
    return head + body


def random_f32_matrix(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    # f32-valued entries: the representable set after one ingest.
    return rng.normal(size=(n, d)).astype(np.float32).astype(np.float64)


class TestFeatureMatrix:
    def test_basic_construction(self):
        m = FeatureMatrix(np.arange(6.0).reshape(2, 3))
        assert (m.n, m.d) == (2, 3)
        assert m.data.dtype == np.float64

    def test_immutable(self):
        m = FeatureMatrix(np.ones((2, 2)))
        with pytest.raises(ValueError):
            m.data[0, 0] = 5.0

    def test_source_array_detached(self):
        src = np.ones((2, 2))
        m = FeatureMatrix(src)
        src[0, 0] = 99.0
        assert m.data[0, 0] == 1.0

    def test_rejects_1d(self):
        with pytest.raises(ShapeError):
            FeatureMatrix(np.ones(3))

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            FeatureMatrix(np.empty((0, 3)))

    def test_rejects_nan_and_inf(self):
        with pytest.raises(DataError):
            FeatureMatrix(np.array([[1.0, np.nan]]))
        with pytest.raises(DataError):
            FeatureMatrix(np.array([[np.inf, 1.0]]))


class TestScoreSet:
    def test_labels_length_checked(self):
        with pytest.raises(ShapeError):
            ScoreSet(
                np.ones(3),
                ScoreOrientation.HIGHER_IS_ID,
                labels=(SampleLabel.ID,),
            )

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            ScoreSet(np.array([1.0, np.nan]), ScoreOrientation.HIGHER_IS_ID)

    def test_oriented_flips_higher_is_ood(self):
        s = ScoreSet(np.array([1.0, -2.0]), ScoreOrientation.HIGHER_IS_OOD)
        assert np.array_equal(s.oriented(), np.array([-1.0, 2.0]))

    def test_oriented_identity_for_higher_is_id(self):
        s = ScoreSet(np.array([1.0, -2.0]), ScoreOrientation.HIGHER_IS_ID)
        assert np.array_equal(s.oriented(), s.scores)


class TestReadFeatures:
    def test_decodes_known_bytes(self, tmp_path):
        p = tmp_path / "f.vfmf"
        p.write_bytes(make_vfmf(2, 3, [1, 2, 3, 4, 5, 6]))
        matrix, meta = read_features(p)
        assert np.array_equal(matrix.data, [[1, 2, 3], [4, 5, 6]])
        assert meta.dimension == 3
        assert meta.name == "f"

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "f.vfmf"
        p.write_bytes(make_vfmf(2, 3, [1, 2, 3, 4, 5]))
        with pytest.raises(DataError, match="truncated"):
            read_features(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "f.vfmf"
        p.write_bytes(b"XXXX" + bytes([1]) + struct.pack("<II", 1, 1) + b"\0" * 4)
        with pytest.raises(FormatError, match="magic"):
            read_features(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "f.vfmf"
        p.write_bytes(b"VFMF" + bytes([2]) + struct.pack("<II", 1, 1) + b"\0" * 4)
        with pytest.raises(FormatError, match="version"):
            read_features(p)

    def test_short_header(self, tmp_path):
        p = tmp_path / "f.vfmf"
        p.write_bytes(b"VFMF")
        with pytest.raises(FormatError):
            read_features(p)

    def test_empty_declared_shape(self, tmp_path):
        p = tmp_path / "f.vfmf"
        p.write_bytes(b"VFMF" + bytes([1]) + struct.pack("<II", 0, 3))
        with pytest.raises(DataError):
            read_features(p)

    def test_non_finite_payload(self, tmp_path):
        p = tmp_path / "f.vfmf"
        p.write_bytes(make_vfmf(1, 1, [float("nan")]))
        with pytest.raises(DataError, match="non-finite"):
            read_features(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            read_features(tmp_path / "absent.vfmf")

    def test_sidecar_loaded_and_validated(self, tmp_path):
        p = tmp_path / "f.vfmf"
        p.write_bytes(make_vfmf(1, 2, [1, 2]))
        (tmp_path / "f.vfmf.meta.json").write_text(
            json.dumps(
                {
                    "name": "probe",
                    "dimension": 2,
                    "normalization": "l2",
                    "source": "unit-test",
                }
            )
        )
        _, meta = read_features(p)
        assert meta.name == "probe"
        assert meta.normalization is Normalization.L2
        assert meta.source == "unit-test"

    def test_sidecar_dimension_mismatch(self, tmp_path):
        p = tmp_path / "f.vfmf"
        p.write_bytes(make_vfmf(1, 2, [1, 2]))
        (tmp_path / "f.vfmf.meta.json").write_text(
            json.dumps(
                {
                    "name": "probe",
                    "dimension": 5,
                    "normalization": "none",
                    "source": "unit-test",
                }
            )
        )
        with pytest.raises(DataError, match="dimension"):
            read_features(p)


class TestWriteFeatures:
    def test_1x1_payload_size(self, tmp_path):
        # header = 4 magic + 1 version + 8 dims, payload = 4 bytes
        p = tmp_path / "one.vfmf"
        m = FeatureMatrix(np.array([[0.0]]))
        write_features(m, FeatureSetMetadata(name="one", dimension=1), p)
        assert p.stat().st_size == 13 + 4

    def test_metadata_dimension_must_match(self, tmp_path):
        m = FeatureMatrix(np.ones((2, 3)))
        with pytest.raises(DataError):
            write_features(m, FeatureSetMetadata(dimension=4), tmp_path / "x.vfmf")

    def test_unwritable_path(self, tmp_path):
        m = FeatureMatrix(np.ones((1, 1)))
        with pytest.raises(IoError):
            write_features(
                m,
                FeatureSetMetadata(dimension=1),
                tmp_path / "no" / "such" / "dir" / "x.vfmf",
            )

    def test_round_trip_17x5(self, tmp_path):
        rng = np.random.default_rng(7)
        values = random_f32_matrix(rng, 17, 5)
        p = tmp_path / "r.vfmf"
        meta = FeatureSetMetadata(name="r", dimension=5, source="rng")
        write_features(FeatureMatrix(values), meta, p)
        back, meta_back = read_features(p)
        assert np.array_equal(back.data, values)
        assert meta_back == meta

    def test_round_trip_is_identity_after_ingest(self, tmp_path):
        # arbitrary f64 data: one write/read quantizes, the next is exact
        rng = np.random.default_rng(11)
        first = FeatureMatrix(rng.normal(size=(6, 4)) * 1e3)
        meta = FeatureSetMetadata(dimension=4)
        p = tmp_path / "q.vfmf"
        write_features(first, meta, p)
        ingested, _ = read_features(p)
        write_features(ingested, meta, p)
        again, _ = read_features(p)
        assert np.array_equal(again.data, ingested.data)


class TestCsvIngestion:
    def test_reads_rows(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("1.0,2.0\n3.5,-4.25\n")
        matrix, meta = read_features_csv(p)
        assert np.array_equal(matrix.data, [[1.0, 2.0], [3.5, -4.25]])
        assert meta.dimension == 2

    def test_ragged_rows_rejected(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("1.0,2.0\n3.5\n")
        with pytest.raises(FormatError, match="columns"):
            read_features_csv(p)

    def test_non_numeric_rejected(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("1.0,apple\n")
        with pytest.raises(FormatError):
            read_features_csv(p)

    def test_empty_rejected(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("\n\n")
        with pytest.raises(DataError):
            read_features_csv(p)


class TestL2Normalize:
    def test_three_four_five(self):
        out = l2_normalize(FeatureMatrix(np.array([[3.0, 4.0]])))
        assert np.allclose(out.data, [[0.6, 0.8]], atol=1e-15)

    def test_unit_row_unchanged(self):
        row = np.array([[1.0, 0.0, 0.0]])
        out = l2_normalize(FeatureMatrix(row))
        assert np.allclose(out.data, row, atol=1e-12)

    def test_zero_row_rejected(self):
        with pytest.raises(DegenerateInputError, match="row 1"):
            l2_normalize(FeatureMatrix(np.array([[1.0, 2.0], [0.0, 0.0]])))

    def test_all_norms_one(self):
        rng = np.random.default_rng(3)
        out = l2_normalize(FeatureMatrix(rng.normal(size=(10, 8))))
        assert np.allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        m = FeatureMatrix(rng.normal(size=(12, 6)) * 50)
        once = l2_normalize(m)
        twice = l2_normalize(once)
        assert np.allclose(once.data, twice.data, atol=1e-12)

    def test_preserves_cosine(self):
        rng = np.random.default_rng(5)
        m = FeatureMatrix(rng.normal(size=(8, 5)))
        out = l2_normalize(m)

        def cos(a, b):
            return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))

        for i in range(4):
            a, b = m.data[2 * i], m.data[2 * i + 1]
            na, nb = out.data[2 * i], out.data[2 * i + 1]
            assert abs(cos(a, b) - cos(na, nb)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(1, 20),
    d=st.integers(1, 16),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip_property(tmp_path_factory, n, d, seed):
    rng = np.random.default_rng(seed)
    values = random_f32_matrix(rng, n, d)
    p = tmp_path_factory.mktemp("vfmf") / "m.vfmf"
    write_features(
        FeatureMatrix(values), FeatureSetMetadata(name="m", dimension=d), p
    )
    back, _ = read_features(p)
    assert np.array_equal(back.data, values)
