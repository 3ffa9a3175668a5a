"""Primitives: vectors, datasets, deterministic substreams."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from persofed.core import (
    DataPoint,
    Dataset,
    as_vector,
    finite_difference_gradient,
    substream,
)


class TestAsVector:
    def test_scalar_becomes_1d(self):
        v = as_vector(3.0)
        assert v.shape == (1,) and v[0] == 3.0

    def test_list_roundtrip(self):
        np.testing.assert_array_equal(as_vector([1, 2, 3]), [1.0, 2.0, 3.0])

    def test_dim_check(self):
        with pytest.raises(ValueError, match="dimension 2"):
            as_vector([1.0, 2.0, 3.0], dim=2)

    def test_rejects_matrix(self):
        with pytest.raises(ValueError, match="1-D"):
            as_vector([[1.0, 2.0]])

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="finite"):
            as_vector([1.0, float("nan")])


class TestDataPoint:
    def test_regression_point(self):
        p = DataPoint(query=[1.0, 2.0], answer=3)
        assert p.answer == 3.0 and p.label is None and p.weight == 1.0

    def test_exactly_one_label_kind(self):
        with pytest.raises(ValueError, match="exactly one"):
            DataPoint(query=[1.0], answer=1.0, label=1)
        with pytest.raises(ValueError, match="exactly one"):
            DataPoint(query=[1.0])

    def test_probs_must_normalize(self):
        with pytest.raises(ValueError, match="probability"):
            DataPoint(query=[1.0], probs=[0.5, 0.6])
        p = DataPoint(query=[1.0], probs=[0.25, 0.75])
        np.testing.assert_array_equal(p.probs, [0.25, 0.75])

    def test_weight_must_be_positive(self):
        with pytest.raises(ValueError, match="weight"):
            DataPoint(query=[1.0], answer=0.0, weight=0.0)
        with pytest.raises(ValueError, match="weight"):
            DataPoint(query=[1.0], answer=0.0, weight=-1.0)


class TestDataset:
    def test_from_points_infers_dim(self):
        D = Dataset.from_points([DataPoint(query=[1.0, 0.0], answer=1.0)])
        assert D.dim == 2 and len(D) == 1

    def test_empty_needs_dim(self):
        with pytest.raises(ValueError, match="dim"):
            Dataset.from_points([])
        assert len(Dataset.empty(3)) == 0 and Dataset.empty(3).dim == 3

    def test_mixed_dims_rejected(self):
        with pytest.raises(ValueError, match="inconsistent"):
            Dataset.from_points(
                [DataPoint(query=[1.0], answer=0.0), DataPoint(query=[1.0, 2.0], answer=0.0)]
            )

    def test_concat_checks_dim(self):
        D1 = Dataset.empty(2)
        D2 = Dataset.empty(3)
        with pytest.raises(ValueError, match="concat"):
            D1.concat(D2)

    def test_column_views(self):
        D = Dataset.from_points(
            [
                DataPoint(query=[1.0, 2.0], answer=5.0, weight=2.0),
                DataPoint(query=[3.0, 4.0], answer=6.0),
            ]
        )
        np.testing.assert_array_equal(D.queries(), [[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(D.answers(), [5.0, 6.0])
        np.testing.assert_array_equal(D.weights(), [2.0, 1.0])
        assert D.total_weight() == 3.0

    def test_answers_rejects_classification(self):
        D = Dataset.from_points([DataPoint(query=[1.0], label=1)])
        with pytest.raises(ValueError):
            D.answers()
        np.testing.assert_array_equal(D.labels(), [1])

    def test_prob_matrix_one_hot_and_soft(self):
        D = Dataset.from_points(
            [DataPoint(query=[1.0], label=2), DataPoint(query=[2.0], probs=[0.5, 0.25, 0.25])]
        )
        P = D.prob_matrix(3)
        np.testing.assert_allclose(P, [[0.0, 0.0, 1.0], [0.5, 0.25, 0.25]])

    def test_prob_matrix_label_out_of_range(self):
        D = Dataset.from_points([DataPoint(query=[1.0], label=5)])
        with pytest.raises(ValueError, match="label 5"):
            D.prob_matrix(3)


class TestSubstream:
    def test_same_key_same_stream(self):
        a = substream(7, "x", 1).standard_normal(8)
        b = substream(7, "x", 1).standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_different_labels_differ(self):
        a = substream(7, "x", 1).standard_normal(8)
        b = substream(7, "x", 2).standard_normal(8)
        c = substream(7, "y", 1).standard_normal(8)
        assert not np.array_equal(a, b) and not np.array_equal(a, c)

    def test_different_seeds_differ(self):
        a = substream(1).standard_normal(8)
        b = substream(2).standard_normal(8)
        assert not np.array_equal(a, b)

    def test_known_stream_is_stable(self):
        # Frozen output of the keyed Philox stream; a change here means old
        # manifests no longer reproduce their runs.
        v = substream(0, "probe").random(3)
        np.testing.assert_allclose(
            v,
            [0.23582260567054392, 0.9923922544669321, 0.3218642012901308],
            rtol=0,
            atol=0,
        )

    @given(st.integers(min_value=0, max_value=2**63 - 1))
    @settings(max_examples=25, deadline=None)
    def test_streams_reproducible_for_any_seed(self, seed):
        a = substream(seed, "p").random(4)
        b = substream(seed, "p").random(4)
        np.testing.assert_array_equal(a, b)


class TestFiniteDifference:
    def test_quadratic_gradient(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])

        def f(x):
            return 0.5 * float(x @ A @ x)

        x = np.array([0.3, -0.7])
        np.testing.assert_allclose(finite_difference_gradient(f, x), A @ x, atol=1e-8)
