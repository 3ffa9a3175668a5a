"""Loss models and local objectives.

A user's local objective is

    local_loss(theta, D) = mu * ||theta||^2 + agg_{x in D} w_x * l(theta, x)

where `agg` is a weighted sum by default (`aggregation="sum"`) or a weighted
mean (`aggregation="mean"`; the mu term is never averaged). Three per-input
losses are supported:

- least_squares:        l = 1/2 (theta^T q - a)^2
- binary_logistic:      l = -ln sigmoid(a * theta^T q), labels a in {-1, +1}
- multiclass_logistic:  cross-entropy with soft labels; the model is a flat
  row-major (C, 1+d) matrix, row a = [bias_a, weights_a], acting on the
  augmented query q_plus = (1, q).

Gradients are hand-derived and verified against central finite differences
in the tests; no autodiff is involved anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import DataPoint, Dataset, as_vector

LossKind = Literal["least_squares", "binary_logistic", "multiclass_logistic"]

_KINDS = ("least_squares", "binary_logistic", "multiclass_logistic")


@dataclass(frozen=True)
class LossModel:
    """Per-input loss family plus the local-objective knobs.

    `feature_dim` is required for multiclass (the model dimension is
    num_classes * (1 + feature_dim)); other kinds take the model dimension
    directly from the query dimension.
    """

    kind: LossKind
    mu: float = 1e-3
    num_classes: int | None = None
    feature_dim: int | None = None
    aggregation: Literal["sum", "mean"] = "sum"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not (self.mu >= 0.0 and np.isfinite(self.mu)):
            raise ValueError("mu must be a finite nonnegative real")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.kind == "multiclass_logistic":
            if self.num_classes is None or self.num_classes < 2:
                raise ValueError("multiclass_logistic needs num_classes >= 2")
            if self.feature_dim is None or self.feature_dim < 1:
                raise ValueError("multiclass_logistic needs feature_dim >= 1")

    def model_dim(self, query_dim: int | None = None) -> int:
        if self.kind == "multiclass_logistic":
            return self.num_classes * (1 + self.feature_dim)
        if query_dim is None:
            raise ValueError(f"{self.kind} model dimension equals the query dimension")
        return int(query_dim)

    # ---- multiclass helpers ----

    def as_class_matrix(self, theta: np.ndarray) -> np.ndarray:
        """View a flat multiclass model as its (C, 1+d) matrix."""
        C, K = self.num_classes, 1 + self.feature_dim
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (C * K,):
            raise ValueError(f"expected flat model of length {C * K}, got {theta.shape}")
        return theta.reshape(C, K)

    def augment(self, queries: np.ndarray) -> np.ndarray:
        """Prepend the bias coordinate: q -> (1, q). Accepts (d,) or (I, d)."""
        queries = np.asarray(queries, dtype=np.float64)
        if queries.ndim == 1:
            return np.concatenate(([1.0], queries))
        ones = np.ones((queries.shape[0], 1))
        return np.hstack([ones, queries])

    def logits(self, theta: np.ndarray, queries: np.ndarray) -> np.ndarray:
        return self.augment(queries) @ self.as_class_matrix(theta).T

    def softmax_probs(self, theta: np.ndarray, queries: np.ndarray) -> np.ndarray:
        """Class probabilities under a multiclass model; rows sum to 1."""
        Z = self.logits(theta, queries)
        Z = Z - Z.max(axis=-1, keepdims=True)
        E = np.exp(Z)
        return E / E.sum(axis=-1, keepdims=True)

    def predict_labels(self, theta: np.ndarray, queries: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(theta, queries), axis=-1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_query(loss: LossModel, query: np.ndarray) -> None:
    if loss.kind == "multiclass_logistic" and query.shape[-1] != loss.feature_dim:
        raise ValueError(
            f"query dim {query.shape[-1]} disagrees with feature_dim {loss.feature_dim}"
        )


def per_input_loss(loss: LossModel, theta: np.ndarray, point: DataPoint) -> float:
    """Unweighted per-input loss l(theta, x); always >= 0."""
    theta = np.asarray(theta, dtype=np.float64)
    _check_query(loss, point.query)
    if loss.kind == "least_squares":
        if point.answer is None:
            raise ValueError("least_squares needs an answer")
        r = float(theta @ point.query) - point.answer
        return 0.5 * r * r
    if loss.kind == "binary_logistic":
        if point.label not in (-1, 1):
            raise ValueError("binary_logistic needs a label in {-1, +1}")
        z = float(theta @ point.query)
        return float(np.logaddexp(0.0, -point.label * z))
    # multiclass cross-entropy with a (possibly soft) label
    p = _point_probs(loss, point)
    z = loss.logits(theta, point.query)
    lse = float(np.logaddexp.reduce(z))
    return lse - float(p @ z)


def per_input_grad(loss: LossModel, theta: np.ndarray, point: DataPoint) -> np.ndarray:
    """Gradient of the unweighted per-input loss in theta."""
    theta = np.asarray(theta, dtype=np.float64)
    _check_query(loss, point.query)
    if loss.kind == "least_squares":
        r = float(theta @ point.query) - point.answer
        return r * point.query
    if loss.kind == "binary_logistic":
        if point.label not in (-1, 1):
            raise ValueError("binary_logistic needs a label in {-1, +1}")
        z = float(theta @ point.query)
        s = float(_sigmoid(np.atleast_1d(z))[0])
        indicator = 1.0 if point.label == 1 else 0.0
        return (s - indicator) * point.query
    p = _point_probs(loss, point)
    s = loss.softmax_probs(theta, point.query)
    qp = loss.augment(point.query)
    return np.outer(s - p, qp).reshape(-1)


def _point_probs(loss: LossModel, point: DataPoint) -> np.ndarray:
    if point.probs is not None:
        if point.probs.shape[0] != loss.num_classes:
            raise ValueError("probs length disagrees with num_classes")
        return point.probs
    if point.label is None:
        raise ValueError("multiclass_logistic needs a label or probs")
    if not 0 <= point.label < loss.num_classes:
        raise ValueError(f"label {point.label} outside [0, {loss.num_classes})")
    p = np.zeros(loss.num_classes)
    p[point.label] = 1.0
    return p


# ---------------------------------------------------------------------------
# Vectorized dataset-level kernels
# ---------------------------------------------------------------------------


def _agg_scale(loss: LossModel, dataset: Dataset) -> float:
    if loss.aggregation == "sum":
        return 1.0
    W = dataset.total_weight()
    return 1.0 / W if W > 0 else 0.0


def data_term(loss: LossModel, theta: np.ndarray, dataset: Dataset) -> float:
    """Aggregated weighted per-input losses, without the mu ridge term."""
    if len(dataset) == 0:
        return 0.0
    theta = np.asarray(theta, dtype=np.float64)
    Q, w = dataset.queries(), dataset.weights()
    _check_query(loss, Q)
    if loss.kind == "least_squares":
        r = Q @ theta - dataset.answers()
        val = 0.5 * float(w @ (r * r))
    elif loss.kind == "binary_logistic":
        y = dataset.labels().astype(np.float64)
        if not np.all(np.abs(y) == 1):
            raise ValueError("binary_logistic needs labels in {-1, +1}")
        val = float(w @ np.logaddexp(0.0, -y * (Q @ theta)))
    else:
        P = dataset.prob_matrix(loss.num_classes)
        Z = loss.logits(theta, Q)
        lse = np.logaddexp.reduce(Z, axis=1)
        val = float(w @ (lse - np.sum(P * Z, axis=1)))
    return _agg_scale(loss, dataset) * val


def data_term_grad(loss: LossModel, theta: np.ndarray, dataset: Dataset) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if len(dataset) == 0:
        return np.zeros_like(theta)
    Q, w = dataset.queries(), dataset.weights()
    _check_query(loss, Q)
    if loss.kind == "least_squares":
        r = Q @ theta - dataset.answers()
        g = Q.T @ (w * r)
    elif loss.kind == "binary_logistic":
        y = dataset.labels().astype(np.float64)
        s = _sigmoid(Q @ theta)
        g = Q.T @ (w * (s - (y > 0)))
    else:
        P = dataset.prob_matrix(loss.num_classes)
        S = loss.softmax_probs(theta, Q)
        Qp = loss.augment(Q)
        g = ((w[:, None] * (S - P)).T @ Qp).reshape(-1)
    return _agg_scale(loss, dataset) * g


def data_term_hessian(loss: LossModel, theta: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Hessian of the aggregated data term; used by the Newton solvers."""
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.shape[0]
    if len(dataset) == 0:
        return np.zeros((d, d))
    Q, w = dataset.queries(), dataset.weights()
    _check_query(loss, Q)
    if loss.kind == "least_squares":
        H = (Q.T * w) @ Q
    elif loss.kind == "binary_logistic":
        s = _sigmoid(Q @ theta)
        H = (Q.T * (w * s * (1.0 - s))) @ Q
    else:
        S = loss.softmax_probs(theta, Q)
        Qp = loss.augment(Q)
        C, K = loss.num_classes, 1 + loss.feature_dim
        # sum_i w_i [diag(s_i) - s_i s_i^T] (x) (qp_i qp_i^T), as block matrices
        H4 = np.zeros((C, K, C, K))
        for a in range(C):
            H4[a, :, a, :] = (Qp.T * (w * S[:, a])) @ Qp
        V = (S[:, :, None] * Qp[:, None, :]).reshape(len(dataset), C * K)
        H = H4.reshape(C * K, C * K) - (V.T * w) @ V
    return _agg_scale(loss, dataset) * H


def local_loss(loss: LossModel, theta: np.ndarray, dataset: Dataset) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    return loss.mu * float(theta @ theta) + data_term(loss, theta, dataset)


def local_loss_grad(loss: LossModel, theta: np.ndarray, dataset: Dataset) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    return 2.0 * loss.mu * theta + data_term_grad(loss, theta, dataset)


def local_loss_hessian(loss: LossModel, theta: np.ndarray, dataset: Dataset) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.shape[0]
    return 2.0 * loss.mu * np.eye(d) + data_term_hessian(loss, theta, dataset)


def check_model_dim(loss: LossModel, theta: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Validate that theta matches the loss family and the dataset's queries."""
    theta = as_vector(theta)
    expected = loss.model_dim(dataset.dim if loss.kind != "multiclass_logistic" else None)
    if theta.shape[0] != expected:
        raise ValueError(f"model dim {theta.shape[0]}, expected {expected}")
    if loss.kind == "multiclass_logistic" and len(dataset) and dataset.dim != loss.feature_dim:
        raise ValueError("dataset query dim disagrees with feature_dim")
    return theta
