"""Dataset ingestion, synthetic instances, and feature partitioning."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    """Dense features (N, M) with per-sample labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("label count does not match sample count")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain NaN/Inf")
        if not np.all(np.isfinite(self.labels.astype(float))):
            raise ValueError("labels contain NaN/Inf")

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class Partition:
    """Contiguous disjoint feature blocks covering 0..M-1."""

    n_features: int
    block_ranges: tuple  # tuple of (start, stop) pairs

    def __post_init__(self):
        pos = 0
        for (start, stop) in self.block_ranges:
            if start != pos or stop <= start:
                raise ValueError("block ranges must be contiguous, nonempty, in order")
            pos = stop
        if pos != self.n_features:
            raise ValueError("block ranges must cover all features")

    @property
    def n_agents(self):
        return len(self.block_ranges)

    @property
    def sizes(self):
        return [stop - start for (start, stop) in self.block_ranges]


@dataclass(frozen=True)
class FeatureShard:
    """Agent k's columns of every sample, with replicated labels."""

    agent: int
    features: np.ndarray  # (N, M_k)
    labels: np.ndarray
    full_norms_sq: np.ndarray  # ||h_n||^2 of the full feature vectors

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def block_size(self):
        return self.features.shape[1]


def partition_features(M, K, scheme="even"):
    """Split M feature indices into K contiguous blocks.

    "even" gives ceil(M/K) columns to the first M mod K agents and
    floor(M/K) to the rest; an explicit list of sizes is also accepted.
    """
    if scheme == "even":
        if M < K:
            raise ValueError(f"need M >= K for even partitioning (M={M}, K={K})")
        base, extra = divmod(M, K)
        sizes = [base + 1] * extra + [base] * (K - extra)
    else:
        sizes = [int(s) for s in scheme]
        if len(sizes) != K:
            raise ValueError(f"expected {K} sizes, got {len(sizes)}")
        if sum(sizes) != M:
            raise ValueError(f"sizes sum to {sum(sizes)}, expected {M}")
        if any(s < 1 for s in sizes):
            raise ValueError("every block needs at least one feature")
    ranges = []
    pos = 0
    for s in sizes:
        ranges.append((pos, pos + s))
        pos += s
    return Partition(n_features=M, block_ranges=tuple(ranges))


def shard(dataset: Dataset, partition: Partition):
    """Column-split the dataset into one FeatureShard per agent."""
    if partition.n_features != dataset.n_features:
        raise ValueError("partition feature count does not match dataset")
    norms = np.einsum("nm,nm->n", dataset.features, dataset.features)
    return [
        FeatureShard(
            agent=k,
            features=dataset.features[:, start:stop].copy(),
            labels=dataset.labels,
            full_norms_sq=norms,
        )
        for k, (start, stop) in enumerate(partition.block_ranges)
    ]


def make_synthetic(
    N,
    M,
    seed,
    model="logistic",
    n_classes=2,
    flip_prob=0.0,
    noise=0.0,
    margin=0.0,
    row_normalize=True,
    condition=1.0,
):
    """Seeded synthetic dataset with labels from a planted weight vector.

    `condition` stretches per-feature scales linearly from 1 down to
    1/condition, controlling the data covariance conditioning. For
    "logistic" the planted scores may be flipped with probability
    `flip_prob`; `margin` rejects samples whose planted |score| is below
    it. "ridge" adds Gaussian label noise with standard deviation `noise`.
    """
    if N < 1 or M < 1:
        raise ValueError("need N, M >= 1")
    rng = np.random.default_rng(seed)
    scales = np.linspace(1.0, 1.0 / condition, M)

    def draw(count):
        h = rng.standard_normal((count, M)) * scales
        if row_normalize:
            nrm = np.linalg.norm(h, axis=1, keepdims=True)
            nrm[nrm == 0] = 1.0
            h = h / nrm
        return h

    if model == "logistic":
        w_star = rng.standard_normal(M) / np.sqrt(M)
        feats = np.empty((0, M))
        while feats.shape[0] < N:
            cand = draw(max(N, 4 * N))
            score = cand @ w_star
            keep = cand[np.abs(score) >= margin]
            feats = np.vstack([feats, keep])
        feats = feats[:N]
        labels = np.sign(feats @ w_star)
        labels[labels == 0] = 1.0
        flips = rng.random(N) < flip_prob
        labels[flips] *= -1.0
        return Dataset(features=feats, labels=labels)

    if model == "ridge":
        w_star = rng.standard_normal(M) / np.sqrt(M)
        feats = draw(N)
        labels = feats @ w_star + noise * rng.standard_normal(N)
        return Dataset(features=feats, labels=labels)

    if model == "softmax":
        W_star = rng.standard_normal((M, n_classes)) / np.sqrt(M)
        feats = draw(N)
        labels = np.argmax(feats @ W_star, axis=1).astype(np.int64)
        flips = rng.random(N) < flip_prob
        labels[flips] = rng.integers(0, n_classes, size=int(flips.sum()))
        return Dataset(features=feats, labels=labels)

    raise ValueError(f"unknown synthetic model {model!r}")


def load_csv(path, label_col=-1, header=False, scale01=False):
    """Dense CSV with one sample per row and a label column."""
    rows = []
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if header:
        lines = lines[1:]
    width = None
    for idx, line in enumerate(lines, start=2 if header else 1):
        line = line.strip()
        if not line:
            continue
        try:
            vals = [float(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise ValueError(f"{path}:{idx}: {exc}") from exc
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ValueError(f"{path}:{idx}: expected {width} columns, got {len(vals)}")
        rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    mat = np.array(rows, dtype=float)
    col = label_col if label_col >= 0 else mat.shape[1] + label_col
    labels = mat[:, col]
    feats = np.delete(mat, col, axis=1)
    if scale01:
        feats = _scale01(feats)
    if np.allclose(labels, np.round(labels)):
        labels = labels.astype(np.int64) if np.any(labels > 1) or np.any(labels < -1) else labels
    return Dataset(features=feats, labels=labels)


def load_idx(images_path, labels_path, scale01=True, digits=None):
    """MNIST-style IDX image/label pair, big-endian magic numbers."""
    with open(images_path, "rb") as fh:
        magic, count, nrows, ncols = struct.unpack(">iiii", fh.read(16))
        if magic != 0x00000803:
            raise ValueError(f"{images_path}: bad image magic {magic:#x}")
        pixels = np.frombuffer(fh.read(count * nrows * ncols), dtype=np.uint8)
    with open(labels_path, "rb") as fh:
        magic, lcount = struct.unpack(">ii", fh.read(8))
        if magic != 0x00000801:
            raise ValueError(f"{labels_path}: bad label magic {magic:#x}")
        labels = np.frombuffer(fh.read(lcount), dtype=np.uint8)
    if count != lcount:
        raise ValueError(f"image count {count} != label count {lcount}")
    feats = pixels.reshape(count, nrows * ncols).astype(float)
    labels = labels.astype(np.int64)
    if digits is not None:
        mask = np.isin(labels, list(digits))
        feats, labels = feats[mask], labels[mask]
    if scale01:
        feats = feats / 255.0
    return Dataset(features=feats, labels=labels)


def load_dataset(path, format="csv", **options):
    """Ingest a dataset file; format 'csv' or 'idx-images+labels'."""
    if format == "csv":
        return load_csv(path, **options)
    if format == "idx-images+labels":
        return load_idx(path, **options)
    raise ValueError(f"unknown dataset format {format!r}")


def _scale01(feats):
    lo = feats.min(axis=0)
    hi = feats.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (feats - lo) / span


def binarize_labels(labels, positive):
    """Map integer class labels onto {-1, +1} with `positive` as +1."""
    out = np.where(labels == positive, 1.0, -1.0)
    return out


def split_weights(w, partition: Partition):
    """Split a stacked (M, C) weight matrix into per-agent blocks."""
    w = np.asarray(w)
    return [w[start:stop] for (start, stop) in partition.block_ranges]


def stack_weights(blocks):
    """Concatenate per-agent blocks back into the stacked weight matrix."""
    return np.concatenate([np.asarray(b) for b in blocks], axis=0)
