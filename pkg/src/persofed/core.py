"""Shared primitives: model vectors, datasets, deterministic RNG streams.

Model vectors are plain 1-D float64 numpy arrays. Classification models over
C classes and feature dimension d are stored flat, row-major, as a (C, 1+d)
matrix whose row a is [bias_a, weights_a]; see losses.py for the reshaping
helpers. All randomness flows through counter-based Philox generators keyed
by hashing (seed, labels...) so that streams are reproducible bit-for-bit
across platforms and processes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

ModelVector = np.ndarray


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Coerce to a contiguous 1-D float64 array, checking finiteness."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite coordinates")
    return v


def dot(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.dot(x, y))


def norm2(x: np.ndarray) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(x))


def scale(x: np.ndarray, c: float) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * float(c)


def axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """a*x + y."""
    return float(a) * np.asarray(x, dtype=np.float64) + np.asarray(y, dtype=np.float64)


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """Central-difference gradient estimate, the oracle used by the tests."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataPoint:
    """One labeled query.

    Exactly one of `answer` (regression), `label` (classification) or
    `probs` (soft multiclass label, a probability vector) must be set.
    Binary classification labels are -1/+1; multiclass labels are 0..C-1.
    """

    query: np.ndarray
    answer: float | None = None
    label: int | None = None
    probs: np.ndarray | None = None
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "query", as_vector(self.query))
        if self.probs is not None:
            p = as_vector(self.probs)
            if abs(float(p.sum()) - 1.0) > 1e-9 or np.any(p < -1e-12):
                raise ValueError("probs must be a probability vector")
            object.__setattr__(self, "probs", p)
        n_set = sum(v is not None for v in (self.answer, self.label, self.probs))
        if n_set != 1:
            raise ValueError("exactly one of answer/label/probs must be set")
        if self.answer is not None:
            object.__setattr__(self, "answer", float(self.answer))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))
        if not (self.weight > 0.0 and np.isfinite(self.weight)):
            raise ValueError(f"weight must be positive, got {self.weight}")
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of datapoints sharing one query dimension.

    May be empty, in which case `dim` pins the query dimension explicitly.
    """

    points: tuple[DataPoint, ...]
    dim: int

    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @staticmethod
    def from_points(points: Sequence[DataPoint], dim: int | None = None) -> "Dataset":
        pts = tuple(points)
        if pts:
            d = pts[0].query.shape[0]
            if dim is not None and dim != d:
                raise ValueError(f"dim {dim} disagrees with queries of dim {d}")
            dim = d
            for p in pts:
                if p.query.shape[0] != dim:
                    raise ValueError("datapoints have inconsistent query dimensions")
        elif dim is None:
            raise ValueError("empty dataset needs an explicit dim")
        return Dataset(points=pts, dim=int(dim))

    @staticmethod
    def empty(dim: int) -> "Dataset":
        return Dataset(points=(), dim=int(dim))

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[DataPoint]:
        return iter(self.points)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.dim != self.dim:
            raise ValueError("cannot concat datasets of different dims")
        return Dataset(points=self.points + other.points, dim=self.dim)

    # Cached column views used by the vectorized loss kernels.

    def queries(self) -> np.ndarray:
        if "Q" not in self._cache:
            if self.points:
                self._cache["Q"] = np.stack([p.query for p in self.points])
            else:
                self._cache["Q"] = np.zeros((0, self.dim))
        return self._cache["Q"]

    def weights(self) -> np.ndarray:
        if "w" not in self._cache:
            self._cache["w"] = np.array([p.weight for p in self.points], dtype=np.float64)
        return self._cache["w"]

    def total_weight(self) -> float:
        return float(self.weights().sum())

    def answers(self) -> np.ndarray:
        if "a" not in self._cache:
            if any(p.answer is None for p in self.points):
                raise ValueError("dataset has non-regression points")
            self._cache["a"] = np.array([p.answer for p in self.points], dtype=np.float64)
        return self._cache["a"]

    def labels(self) -> np.ndarray:
        if "y" not in self._cache:
            if any(p.label is None for p in self.points):
                raise ValueError("dataset has unlabeled points")
            self._cache["y"] = np.array([p.label for p in self.points], dtype=np.int64)
        return self._cache["y"]

    def prob_matrix(self, num_classes: int) -> np.ndarray:
        """Soft-label matrix; hard labels become one-hot rows."""
        key = ("P", num_classes)
        if key not in self._cache:
            P = np.zeros((len(self.points), num_classes))
            for i, p in enumerate(self.points):
                if p.probs is not None:
                    if p.probs.shape[0] != num_classes:
                        raise ValueError("probs length disagrees with num_classes")
                    P[i] = p.probs
                elif p.label is not None:
                    if not 0 <= p.label < num_classes:
                        raise ValueError(f"label {p.label} outside [0, {num_classes})")
                    P[i, p.label] = 1.0
                else:
                    raise ValueError("regression point in a classification dataset")
            self._cache[key] = P
        return self._cache[key]


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------


def substream(seed: int, *labels) -> np.random.Generator:
    """Independent generator keyed by (seed, labels...).

    Philox is counter-based, so the emitted bit stream depends only on the
    128-bit key derived here (blake2b of the canonicalized labels), never on
    global state or platform word size.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for lab in labels:
        h.update(b"\x1f")
        h.update(repr(lab).encode())
    key = int.from_bytes(h.digest(), "big")
    return np.random.Generator(np.random.Philox(key=key))


def make_rng(seed: int) -> np.random.Generator:
    return substream(seed)
