"""Dataset generation, IDX image loading, and CSV (de)serialization.

Generators draw queries from a configurable distribution and label them with
a reference model (exact answers plus optional gaussian noise for regression;
sampled labels for the logistic families). IDX is the classic big-endian
image/label container: magic 0x00000803 for images (count x rows x cols
ubyte, returned flattened and scaled to [0,1]) and 0x00000801 for labels.

Dataset CSV schema (header required):

    q_0,...,q_{d-1},<label columns>,weight

where the label columns are `answer` (regression), `label` (classification)
or `p_0..p_{C-1}` (soft multiclass labels). Floats are written with repr and
parse back bit-identically.
"""

from __future__ import annotations

import csv
import struct

import numpy as np
from scipy.special import expit

from .core import DataPoint, Dataset
from .losses import LossModel

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801
_MAX_IDX_ELEMENTS = 1_000_000_000


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def make_queries(
    dim: int,
    count: int,
    rng: np.random.Generator,
    dist: str = "gaussian",
    scale: float = 1.0,
) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be >= 0")
    if dist == "gaussian":
        Q = rng.standard_normal((count, dim))
    elif dist == "sphere":
        Q = rng.standard_normal((count, dim))
        norms = np.linalg.norm(Q, axis=1, keepdims=True)
        Q = Q / np.where(norms > 0, norms, 1.0)
    elif dist == "pm":  # independent +-1 coordinates (bounded, spans R^dim)
        Q = rng.choice([-1.0, 1.0], size=(count, dim))
    else:
        raise ValueError(f"unknown query distribution {dist!r}")
    return scale * Q


def generate_linear_dataset(
    theta_dagger: np.ndarray,
    count: int,
    rng: np.random.Generator,
    noise_sigma: float = 0.0,
    query_dist: str = "gaussian",
    query_scale: float = 1.0,
    weight: float = 1.0,
) -> Dataset:
    """Regression data: a = q^T theta_dagger + noise."""
    theta_dagger = np.asarray(theta_dagger, dtype=np.float64)
    Q = make_queries(theta_dagger.shape[0], count, rng, query_dist, query_scale)
    a = Q @ theta_dagger
    if noise_sigma > 0:
        a = a + noise_sigma * rng.standard_normal(count)
    pts = [DataPoint(query=Q[i], answer=float(a[i]), weight=weight) for i in range(count)]
    return Dataset.from_points(pts, dim=theta_dagger.shape[0])


def generate_binary_logistic_dataset(
    theta_dagger: np.ndarray,
    count: int,
    rng: np.random.Generator,
    query_dist: str = "gaussian",
    query_scale: float = 1.0,
    weight: float = 1.0,
) -> Dataset:
    """Labels in {-1, +1}, +1 with probability sigmoid(q^T theta_dagger)."""
    theta_dagger = np.asarray(theta_dagger, dtype=np.float64)
    Q = make_queries(theta_dagger.shape[0], count, rng, query_dist, query_scale)
    z = Q @ theta_dagger
    p = expit(z)
    labels = np.where(rng.random(count) < p, 1, -1)
    pts = [DataPoint(query=Q[i], label=int(labels[i]), weight=weight) for i in range(count)]
    return Dataset.from_points(pts, dim=theta_dagger.shape[0])


def generate_multiclass_dataset(
    loss: LossModel,
    theta_dagger: np.ndarray,
    count: int,
    rng: np.random.Generator,
    query_dist: str = "gaussian",
    query_scale: float = 1.0,
    weight: float = 1.0,
    label_mode: str = "sample",
) -> Dataset:
    """Multiclass labels drawn from (or argmaxed over) the model's softmax."""
    if loss.kind != "multiclass_logistic":
        raise ValueError("generate_multiclass_dataset needs a multiclass loss")
    if label_mode not in ("sample", "argmax"):
        raise ValueError(f"unknown label_mode {label_mode!r}")
    Q = make_queries(loss.feature_dim, count, rng, query_dist, query_scale)
    P = loss.softmax_probs(theta_dagger, Q)
    pts = []
    for i in range(count):
        if label_mode == "sample":
            lab = int(rng.choice(loss.num_classes, p=P[i] / P[i].sum()))
        else:
            lab = int(np.argmax(P[i]))
        pts.append(DataPoint(query=Q[i], label=lab, weight=weight))
    return Dataset.from_points(pts, dim=loss.feature_dim)


def relabel_shift(dataset: Dataset, num_classes: int, shift: int = 1) -> Dataset:
    """Cyclically shift hard labels: y -> (y + shift) mod C."""
    pts = []
    for p in dataset:
        if p.label is None:
            raise ValueError("relabel_shift needs hard-labeled points")
        pts.append(
            DataPoint(query=p.query, label=(p.label + shift) % num_classes, weight=p.weight)
        )
    return Dataset.from_points(pts, dim=dataset.dim)


# ---------------------------------------------------------------------------
# IDX format
# ---------------------------------------------------------------------------


class IdxFormatError(Exception):
    """Base class for IDX parsing failures."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxDimensionError(IdxFormatError):
    pass


def _read_header(raw: bytes, expected_magic: int, ndim: int, what: str) -> tuple[list[int], int]:
    need = 4 + 4 * ndim
    if len(raw) < 4:
        raise IdxTruncatedError(f"{what}: file shorter than the 4-byte magic")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{what}: bad magic 0x{magic & 0xFFFFFFFF:08x}, expected 0x{expected_magic:08x}")
    if len(raw) < need:
        raise IdxTruncatedError(f"{what}: header truncated ({len(raw)} bytes, need {need})")
    dims = list(struct.unpack(f">{ndim}i", raw[4:need]))
    total = 1
    for d in dims:
        if d < 0:
            raise IdxDimensionError(f"{what}: negative dimension {d}")
        total *= d
    if total > _MAX_IDX_ELEMENTS:
        raise IdxDimensionError(f"{what}: dimensions {dims} overflow the element cap")
    return dims, need


def load_idx_images(path) -> np.ndarray:
    """(count, rows*cols) float64 images scaled to [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    dims, offset = _read_header(raw, IDX_MAGIC_IMAGES, 3, "images")
    count, rows, cols = dims
    need = count * rows * cols
    if len(raw) - offset < need:
        raise IdxTruncatedError(f"images: payload has {len(raw) - offset} bytes, need {need}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=need, offset=offset)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    """(count,) int64 labels."""
    with open(path, "rb") as fh:
        raw = fh.read()
    dims, offset = _read_header(raw, IDX_MAGIC_LABELS, 1, "labels")
    (count,) = dims
    if len(raw) - offset < count:
        raise IdxTruncatedError(f"labels: payload has {len(raw) - offset} bytes, need {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset).astype(np.int64)


def write_idx_images(path, images: np.ndarray, rows: int, cols: int) -> None:
    """Inverse of load_idx_images for fixtures; expects values in [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    count = images.shape[0]
    if images.shape != (count, rows * cols):
        raise ValueError(f"expected shape ({count}, {rows * cols})")
    payload = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_MAGIC_IMAGES, count, rows, cols))
        fh.write(payload.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_MAGIC_LABELS, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Dataset CSV round trip
# ---------------------------------------------------------------------------


def dataset_to_csv(dataset: Dataset, path) -> None:
    kinds = {
        "answer" if p.answer is not None else "label" if p.label is not None else "probs"
        for p in dataset
    }
    if len(kinds) > 1:
        raise ValueError(f"dataset mixes label kinds: {sorted(kinds)}")
    kind = kinds.pop() if kinds else "answer"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        qcols = [f"q_{i}" for i in range(dataset.dim)]
        if kind == "answer":
            mid = ["answer"]
        elif kind == "label":
            mid = ["label"]
        else:
            C = dataset.points[0].probs.shape[0]
            mid = [f"p_{i}" for i in range(C)]
        w.writerow(qcols + mid + ["weight"])
        for p in dataset:
            row = [repr(float(x)) for x in p.query]
            if kind == "answer":
                row.append(repr(p.answer))
            elif kind == "label":
                row.append(str(p.label))
            else:
                if p.probs.shape[0] != len(mid):
                    raise ValueError("inconsistent probs lengths")
                row += [repr(float(x)) for x in p.probs]
            row.append(repr(p.weight))
            w.writerow(row)


def dataset_from_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header") from None
        rows = list(reader)
    qcols = [c for c in header if c.startswith("q_")]
    pcols = [c for c in header if c.startswith("p_")]
    dim = len(qcols)
    expected_q = [f"q_{i}" for i in range(dim)]
    if qcols != expected_q or header[:dim] != expected_q:
        raise ValueError(f"{path}: query columns must lead as q_0..q_{{d-1}}, got {header}")
    if header[-1] != "weight":
        raise ValueError(f"{path}: last column must be 'weight'")
    mid = header[dim:-1]
    if mid == ["answer"]:
        kind = "answer"
    elif mid == ["label"]:
        kind = "label"
    elif mid and mid == [f"p_{i}" for i in range(len(mid))]:
        kind = "probs"
    else:
        raise ValueError(f"{path}: unrecognized label columns {mid}")
    pts = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        q = [float(x) for x in row[:dim]]
        weight = float(row[-1])
        if kind == "answer":
            pts.append(DataPoint(query=q, answer=float(row[dim]), weight=weight))
        elif kind == "label":
            pts.append(DataPoint(query=q, label=int(row[dim]), weight=weight))
        else:
            probs = [float(x) for x in row[dim:-1]]
            pts.append(DataPoint(query=q, probs=probs, weight=weight))
    if not pts and dim == 0:
        raise ValueError(f"{path}: no query columns")
    return Dataset.from_points(pts, dim=dim)
