"""Synthetic data generators, IDX files, and dataset CSV round trips."""

import struct

import numpy as np
import pytest

from persofed.core import DataPoint, Dataset, substream
from persofed.data import (
    IDX_MAGIC_IMAGES,
    IDX_MAGIC_LABELS,
    IdxDimensionError,
    IdxMagicError,
    IdxTruncatedError,
    dataset_from_csv,
    dataset_to_csv,
    generate_binary_logistic_dataset,
    generate_linear_dataset,
    generate_multiclass_dataset,
    load_idx_images,
    load_idx_labels,
    make_queries,
    relabel_shift,
    write_idx_images,
    write_idx_labels,
)
from persofed.losses import LossModel


class TestQueries:
    def test_shapes_and_scale(self):
        Q = make_queries(3, 10, substream(80, "q"), scale=2.5)
        assert Q.shape == (10, 3)

    def test_sphere_unit_norm(self):
        Q = make_queries(4, 25, substream(81, "q"), dist="sphere", scale=3.0)
        np.testing.assert_allclose(np.linalg.norm(Q, axis=1), 3.0, rtol=1e-12)

    def test_pm_entries(self):
        Q = make_queries(2, 40, substream(82, "q"), dist="pm")
        assert set(np.unique(Q)) <= {-1.0, 1.0}

    def test_validation(self):
        with pytest.raises(ValueError, match="distribution"):
            make_queries(2, 3, substream(83, "q"), dist="cauchy")
        with pytest.raises(ValueError, match="count"):
            make_queries(2, -1, substream(83, "q"))

    def test_deterministic(self):
        a = make_queries(3, 5, substream(84, "q"))
        b = make_queries(3, 5, substream(84, "q"))
        np.testing.assert_array_equal(a, b)


class TestGenerators:
    def test_linear_noise_free_answers_exact(self):
        theta = np.array([2.0, -1.0])
        D = generate_linear_dataset(theta, 15, substream(85, "lin"), weight=3.0)
        assert len(D) == 15 and D.dim == 2
        np.testing.assert_array_equal(D.answers(), D.queries() @ theta)
        assert all(p.weight == 3.0 for p in D)

    def test_linear_noise_perturbs(self):
        theta = np.array([1.0])
        a = generate_linear_dataset(theta, 10, substream(86, "lin"), noise_sigma=0.5)
        assert not np.allclose(a.answers(), a.queries() @ theta)

    def test_binary_labels_follow_sign_when_saturated(self):
        theta = np.array([1000.0, 0.0])
        D = generate_binary_logistic_dataset(theta, 50, substream(87, "log"))
        assert set(D.labels().tolist()) <= {-1, 1}
        np.testing.assert_array_equal(D.labels(), np.sign(D.queries() @ theta))

    def test_multiclass_argmax_mode(self):
        loss = LossModel(kind="multiclass_logistic", num_classes=3, feature_dim=4)
        theta = substream(88, "mc").standard_normal(loss.model_dim())
        D = generate_multiclass_dataset(loss, theta, 20, substream(88, "mc-q"),
                                        label_mode="argmax")
        P = loss.softmax_probs(theta, D.queries())
        np.testing.assert_array_equal(D.labels(), np.argmax(P, axis=1))

    def test_multiclass_validation(self):
        loss = LossModel(kind="multiclass_logistic", num_classes=3, feature_dim=2)
        with pytest.raises(ValueError, match="multiclass"):
            generate_multiclass_dataset(
                LossModel(kind="least_squares"), np.zeros(2), 3, substream(89, "x")
            )
        with pytest.raises(ValueError, match="label_mode"):
            generate_multiclass_dataset(
                loss, np.zeros(loss.model_dim()), 3, substream(89, "x"), label_mode="soft"
            )

    def test_relabel_shift(self):
        D = Dataset.from_points(
            [DataPoint(query=[0.0], label=k) for k in (0, 1, 2)]
        )
        np.testing.assert_array_equal(relabel_shift(D, 3).labels(), [1, 2, 0])
        np.testing.assert_array_equal(relabel_shift(D, 3, shift=2).labels(), [2, 0, 1])
        soft = Dataset.from_points([DataPoint(query=[0.0], probs=[0.5, 0.5])])
        with pytest.raises(ValueError, match="hard"):
            relabel_shift(soft, 2)


class TestIdx:
    def test_handcrafted_images(self, tmp_path):
        p = tmp_path / "img.idx"
        payload = bytes(range(12))  # 2 images of 2x3 pixels
        p.write_bytes(struct.pack(">iiii", IDX_MAGIC_IMAGES, 2, 2, 3) + payload)
        X = load_idx_images(p)
        assert X.shape == (2, 6)
        np.testing.assert_allclose(X, np.arange(12).reshape(2, 6) / 255.0)

    def test_handcrafted_labels(self, tmp_path):
        p = tmp_path / "lab.idx"
        p.write_bytes(struct.pack(">ii", IDX_MAGIC_LABELS, 4) + bytes([7, 0, 9, 2]))
        np.testing.assert_array_equal(load_idx_labels(p), [7, 0, 9, 2])
        assert load_idx_labels(p).dtype == np.int64

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(struct.pack(">iiii", 0x00000804, 1, 1, 1) + b"\x00")
        with pytest.raises(IdxMagicError, match="0x00000804"):
            load_idx_images(p)
        with pytest.raises(IdxMagicError):
            load_idx_labels(tmp_path / "bad.idx")

    def test_truncated_header_and_payload(self, tmp_path):
        p = tmp_path / "t.idx"
        p.write_bytes(struct.pack(">i", IDX_MAGIC_IMAGES) + b"\x00\x00")
        with pytest.raises(IdxTruncatedError, match="header"):
            load_idx_images(p)
        p.write_bytes(struct.pack(">iiii", IDX_MAGIC_IMAGES, 2, 2, 3) + bytes(5))
        with pytest.raises(IdxTruncatedError, match="payload"):
            load_idx_images(p)
        p.write_bytes(b"\x00\x00")
        with pytest.raises(IdxTruncatedError, match="magic"):
            load_idx_labels(p)

    def test_dimension_guards(self, tmp_path):
        p = tmp_path / "d.idx"
        p.write_bytes(struct.pack(">iiii", IDX_MAGIC_IMAGES, -1, 2, 3))
        with pytest.raises(IdxDimensionError, match="negative"):
            load_idx_images(p)
        p.write_bytes(struct.pack(">iiii", IDX_MAGIC_IMAGES, 100000, 100000, 100))
        with pytest.raises(IdxDimensionError, match="cap"):
            load_idx_images(p)

    def test_write_load_roundtrip(self, tmp_path):
        rng = substream(90, "idx")
        X = rng.integers(0, 256, size=(5, 12)).astype(np.float64) / 255.0
        y = rng.integers(0, 10, size=5)
        write_idx_images(tmp_path / "x.idx", X, rows=3, cols=4)
        write_idx_labels(tmp_path / "y.idx", y)
        np.testing.assert_array_equal(load_idx_images(tmp_path / "x.idx"), X)
        np.testing.assert_array_equal(load_idx_labels(tmp_path / "y.idx"), y)
        with pytest.raises(ValueError, match="shape"):
            write_idx_images(tmp_path / "x.idx", X, rows=3, cols=5)


class TestCsvRoundTrip:
    def roundtrip(self, dataset, tmp_path):
        p = tmp_path / "d.csv"
        dataset_to_csv(dataset, p)
        return dataset_from_csv(p), p

    def test_answers_bit_exact(self, tmp_path):
        rng = substream(91, "csv")
        D = generate_linear_dataset(rng.standard_normal(3), 7, rng, noise_sigma=0.3,
                                    weight=0.125)
        back, _ = self.roundtrip(D, tmp_path)
        assert back.dim == 3
        np.testing.assert_array_equal(back.queries(), D.queries())
        np.testing.assert_array_equal(back.answers(), D.answers())
        np.testing.assert_array_equal(back.weights(), D.weights())

    def test_labels_roundtrip(self, tmp_path):
        D = generate_binary_logistic_dataset(
            np.array([0.3, -0.7]), 9, substream(92, "csv")
        )
        back, p = self.roundtrip(D, tmp_path)
        np.testing.assert_array_equal(back.labels(), D.labels())
        header = p.read_text().splitlines()[0]
        assert header == "q_0,q_1,label,weight"

    def test_probs_roundtrip(self, tmp_path):
        rng = substream(93, "csv")
        pts = [DataPoint(query=rng.standard_normal(2), probs=[0.25, 0.25, 0.5])
               for _ in range(4)]
        D = Dataset.from_points(pts)
        back, p = self.roundtrip(D, tmp_path)
        np.testing.assert_array_equal(back.prob_matrix(3), D.prob_matrix(3))
        assert p.read_text().splitlines()[0] == "q_0,q_1,p_0,p_1,p_2,weight"

    def test_mixed_kinds_rejected(self, tmp_path):
        D = Dataset.from_points(
            [DataPoint(query=[1.0], answer=1.0), DataPoint(query=[1.0], label=1)]
        )
        with pytest.raises(ValueError, match="mixes"):
            dataset_to_csv(D, tmp_path / "m.csv")

    def test_header_errors(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("")
        with pytest.raises(ValueError, match="header"):
            dataset_from_csv(p)
        p.write_text("q_0,q_2,answer,weight\n0.0,0.0,1.0,1.0\n")
        with pytest.raises(ValueError, match="query columns"):
            dataset_from_csv(p)
        p.write_text("q_0,answer\n0.0,1.0\n")
        with pytest.raises(ValueError, match="weight"):
            dataset_from_csv(p)
        p.write_text("q_0,verdict,weight\n0.0,1.0,1.0\n")
        with pytest.raises(ValueError, match="unrecognized"):
            dataset_from_csv(p)
        p.write_text("q_0,answer,weight\n0.0,1.0\n")
        with pytest.raises(ValueError, match="cells"):
            dataset_from_csv(p)
