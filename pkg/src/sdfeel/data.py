"""Datasets, IDX ingestion and non-IID client partitioning.

A :class:`Partition` maps every sample to exactly one client and every client
to one edge cluster, and exposes the three weight vectors used throughout the
package: ``m`` (client share of all data), ``m_hat`` (client share of its
cluster) and ``m_tilde`` (cluster share of all data).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, ParseError
from .rng import stream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MAX_ATTEMPTS = 100
PARTITION_SCHEMES = ("label_skew", "dirichlet", "iid")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, integer labels and the class count."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ConfigurationError(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ConfigurationError(f"{x.shape[0]} samples but {y.shape} labels")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ConfigurationError(f"labels must lie in [0, {self.num_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return self.features[idx], self.labels[idx]


@dataclass(frozen=True)
class Partition:
    """Sample-to-client assignment plus the client-to-cluster map.

    Parameters
    ----------
    assignment : tuple of ndarray
        Sorted sample indices held by each client.
    client_to_cluster : ndarray of int
        Cluster id of each client; defaults to a single cluster.
    """

    assignment: tuple
    client_to_cluster: np.ndarray = field(default=None)

    def __post_init__(self):
        shards = tuple(np.sort(np.asarray(a, dtype=np.int64)) for a in self.assignment)
        if not shards:
            raise ConfigurationError("partition needs at least one client")
        if any(s.size == 0 for s in shards):
            empty = [i for i, s in enumerate(shards) if s.size == 0]
            raise ConfigurationError(f"clients {empty} hold no samples")
        pooled = np.concatenate(shards)
        if np.unique(pooled).size != pooled.size:
            raise ConfigurationError("client shards overlap")
        cmap = self.client_to_cluster
        cmap = np.zeros(len(shards), dtype=np.int64) if cmap is None else np.asarray(cmap, dtype=np.int64)
        if cmap.shape != (len(shards),):
            raise ConfigurationError(f"cluster map has {cmap.size} entries for {len(shards)} clients")
        if cmap.min() < 0:
            raise ConfigurationError("cluster ids must be non-negative")
        empty = sorted(set(range(int(cmap.max()) + 1)) - set(cmap.tolist()))
        if empty:
            raise ConfigurationError(f"clusters {empty} have no clients")
        for s in shards:
            s.setflags(write=False)
        cmap.setflags(write=False)
        object.__setattr__(self, "assignment", shards)
        object.__setattr__(self, "client_to_cluster", cmap)

    @property
    def clients(self) -> int:
        return len(self.assignment)

    @property
    def clusters(self) -> int:
        return int(self.client_to_cluster.max()) + 1

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.assignment], dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.sizes.sum())

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.client_to_cluster, weights=self.sizes, minlength=self.clusters).astype(np.int64)

    def members(self, d: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.client_to_cluster == d)]

    @property
    def m(self) -> np.ndarray:
        return self.sizes / self.total

    @property
    def m_hat(self) -> np.ndarray:
        return self.sizes / self.cluster_sizes()[self.client_to_cluster]

    @property
    def m_tilde(self) -> np.ndarray:
        return self.cluster_sizes() / self.total

    def with_clusters(self, client_to_cluster) -> "Partition":
        return Partition(self.assignment, client_to_cluster)

    def label_histogram(self, labels: np.ndarray, num_classes: int) -> np.ndarray:
        """``clients x classes`` count matrix."""
        return np.stack([np.bincount(labels[s], minlength=num_classes) for s in self.assignment])


def synth_dataset(
    num_classes: int,
    per_class: int,
    feature_dim: int,
    seed: int,
    class_sep: float = 3.0,
    draw: int = 0,
) -> Dataset:
    """Gaussian class clusters with unit-variance noise.

    Class means depend only on ``seed``; ``draw`` selects an independent set
    of samples around the same means, so ``draw=1`` gives a matching test set.
    """
    if min(num_classes, per_class, feature_dim) < 1:
        raise ConfigurationError("synth_dataset counts must be positive")
    means = stream(seed, "synth-means").normal(0.0, class_sep, size=(num_classes, feature_dim))
    rng = stream(seed, "synth-samples", draw)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + rng.standard_normal((labels.size, feature_dim))
    return Dataset(features, labels, num_classes)


# IDX files ---------------------------------------------------------------


def _read_header(buf: bytes, fields: int, what: str) -> tuple[int, ...]:
    need = 4 * fields
    if len(buf) < need:
        raise ParseError(f"{what}: truncated header, need {need} bytes, have {len(buf)}", offset=len(buf))
    return struct.unpack(f">{fields}I", buf[:need])


def parse_idx_images(buf: bytes) -> np.ndarray:
    """Decode an IDX3 ubyte image file into an ``(n, rows*cols)`` uint8 array."""
    (magic,) = _read_header(buf, 1, "images")
    if magic != IMAGE_MAGIC:
        raise ParseError(f"images: wrong magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}", offset=0)
    _, count, rows, cols = _read_header(buf, 4, "images")
    body = count * rows * cols
    if len(buf) < 16 + body:
        raise ParseError(f"images: truncated pixel data, need {body} bytes after header", offset=len(buf))
    if len(buf) > 16 + body:
        raise ParseError("images: trailing bytes after pixel data", offset=16 + body)
    return np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(count, rows * cols)


def parse_idx_labels(buf: bytes) -> np.ndarray:
    """Decode an IDX1 ubyte label file."""
    (magic,) = _read_header(buf, 1, "labels")
    if magic != LABEL_MAGIC:
        raise ParseError(f"labels: wrong magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}", offset=0)
    _, count = _read_header(buf, 2, "labels")
    if len(buf) < 8 + count:
        raise ParseError(f"labels: truncated, need {count} label bytes after header", offset=len(buf))
    if len(buf) > 8 + count:
        raise ParseError("labels: trailing bytes after label data", offset=8 + count)
    return np.frombuffer(buf, dtype=np.uint8, offset=8).copy()


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label file pair; pixels are scaled to ``[0, 1]``."""
    images = parse_idx_images(Path(images_path).read_bytes())
    labels = parse_idx_labels(Path(labels_path).read_bytes())
    if images.shape[0] != labels.shape[0]:
        raise ParseError(
            f"count mismatch: {images.shape[0]} images but {labels.shape[0]} labels", offset=4
        )
    if labels.size == 0:
        raise ParseError("IDX files hold no samples", offset=4)
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), int(labels.max()) + 1)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write ``(n, rows, cols)`` uint8 images and uint8 labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ConfigurationError("images must have shape (n, rows, cols)")
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", LABEL_MAGIC, labels.size) + labels.tobytes())


# Partitioners ------------------------------------------------------------


def _class_indices(ds: Dataset, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.permutation(np.flatnonzero(ds.labels == k)) for k in range(ds.num_classes)]


def partition_iid(ds: Dataset, clients: int, seed: int) -> Partition:
    """Uniformly shuffled, near-equal shards."""
    if not 1 <= clients <= len(ds):
        raise ConfigurationError(f"cannot split {len(ds)} samples among {clients} clients")
    order = stream(seed, "partition-iid").permutation(len(ds))
    return Partition(tuple(np.array_split(order, clients)))


def _choose_classes(clients: int, num_classes: int, c: int, rng: np.random.Generator) -> list[np.ndarray]:
    # when clients >= classes, seed every class with one holder first so none is left out
    chosen = []
    first = rng.permutation(num_classes) if clients >= num_classes else None
    for i in range(clients):
        if first is not None:
            head = int(first[i % num_classes])
            rest = rng.choice(np.delete(np.arange(num_classes), head), size=c - 1, replace=False)
            chosen.append(np.sort(np.concatenate([[head], rest])).astype(np.int64))
        else:
            chosen.append(np.sort(rng.choice(num_classes, size=c, replace=False)))
    return chosen


def partition_label_skew(ds: Dataset, clients: int, c: int = 2, seed: int = 0) -> Partition:
    """Each client holds exactly ``c`` classes; each class is split evenly among its holders.

    Raises
    ------
    ConfigurationError
        If ``c`` is out of range or no feasible assignment is found in 100 attempts.
    """
    k = ds.num_classes
    if not 1 <= c <= k:
        raise ConfigurationError(f"classes per client c={c} must lie in [1, {k}]")
    if clients < 1 or clients * c < k:
        raise ConfigurationError(f"{clients} clients with c={c} cannot cover {k} classes")
    counts = np.bincount(ds.labels, minlength=k)
    if np.any(counts == 0):
        empty = np.flatnonzero(counts == 0).tolist()
        raise ConfigurationError(f"label skew needs every class present; classes {empty} are empty")
    for attempt in range(MAX_ATTEMPTS):
        rng = stream(seed, "partition-label-skew", attempt)
        chosen = _choose_classes(clients, k, c, rng)
        holders = [[i for i in range(clients) if cls in chosen[i]] for cls in range(k)]
        if any(not h or len(h) > counts[cls] for cls, h in enumerate(holders)):
            continue
        shards = [[] for _ in range(clients)]
        for cls, idx in enumerate(_class_indices(ds, rng)):
            for holder, part in zip(holders[cls], np.array_split(idx, len(holders[cls]))):
                shards[holder].append(part)
        return Partition(tuple(np.concatenate(s) for s in shards))
    raise ConfigurationError(f"no feasible label-skew assignment after {MAX_ATTEMPTS} attempts")


def sample_dirichlet(beta: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric ``Dir(beta)`` draw from normalized ``Gamma(beta, 1)`` variates."""
    for _ in range(MAX_ATTEMPTS):
        g = rng.standard_gamma(beta, size=size)
        total = float(g.sum())
        if total > 0 and np.isfinite(total):
            return g / total
    raise ConfigurationError(f"Gamma({beta}) draws underflowed repeatedly")


def partition_dirichlet(ds: Dataset, clients: int, beta: float = 0.5, seed: int = 0) -> Partition:
    """Split every class across clients with ``Dir(beta)`` proportions.

    Every client is guaranteed at least one sample; draws that leave a client
    empty are discarded and redrawn, up to 100 times.
    """
    if beta <= 0:
        raise ConfigurationError("Dirichlet concentration must be positive")
    if not 1 <= clients <= len(ds):
        raise ConfigurationError(f"cannot split {len(ds)} samples among {clients} clients")
    for attempt in range(MAX_ATTEMPTS):
        rng = stream(seed, "partition-dirichlet", attempt)
        shards = [[] for _ in range(clients)]
        for idx in _class_indices(ds, rng):
            props = sample_dirichlet(beta, clients, rng)
            cuts = np.floor(np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for i, part in enumerate(np.split(idx, cuts)):
                shards[i].append(part)
        merged = [np.concatenate(s) for s in shards]
        if all(s.size for s in merged):
            return Partition(tuple(merged))
    raise ConfigurationError(f"Dirichlet partition left a client empty in {MAX_ATTEMPTS} attempts")


def partition(ds: Dataset, scheme: str, clients: int, seed: int, c: int = 2, beta: float = 0.5) -> Partition:
    if scheme == "label_skew":
        return partition_label_skew(ds, clients, c, seed)
    if scheme == "dirichlet":
        return partition_dirichlet(ds, clients, beta, seed)
    if scheme == "iid":
        return partition_iid(ds, clients, seed)
    raise ConfigurationError(f"unknown partition scheme {scheme!r}; expected one of {PARTITION_SCHEMES}")


def assign_clusters(clients: int, servers: int, gamma: int = 0, seed: int = 0) -> np.ndarray:
    """Map clients to edge clusters.

    With 50 clients and 10 servers the cluster sizes are four of 5, three of
    ``5 - gamma`` and three of ``5 + gamma``, with clients shuffled by
    ``seed``.  Any other shape uses round-robin and requires ``gamma == 0``.
    """
    if servers < 1 or clients < servers:
        raise ConfigurationError(f"{clients} clients cannot populate {servers} clusters")
    if clients == 50 and servers == 10:
        if not 0 <= gamma < 5:
            raise ConfigurationError(f"cluster imbalance gamma={gamma} must lie in [0, 5)")
        sizes = [5] * 4 + [5 - gamma] * 3 + [5 + gamma] * 3
        order = stream(seed, "assign-clusters").permutation(clients)
        out = np.empty(clients, dtype=np.int64)
        out[order] = np.repeat(np.arange(servers), sizes)
        return out
    if gamma:
        raise ConfigurationError("cluster imbalance is defined only for 50 clients on 10 servers")
    return np.arange(clients, dtype=np.int64) % servers
