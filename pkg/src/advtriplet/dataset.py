"""Synthetic identity clusters, feature-file I/O, and identity-level splits."""

from __future__ import annotations

import gzip
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DataParseError, UsageError
from .linalg import Rng

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Row i of ``features`` belongs to ``identities[i]`` seen by ``cameras[i]``."""

    features: np.ndarray
    identities: np.ndarray
    cameras: np.ndarray
    n_cameras: int = 1

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.identities = np.asarray(self.identities, dtype=np.int64)
        self.cameras = np.asarray(self.cameras, dtype=np.int64)
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.identities.shape != (n,) or self.cameras.shape != (n,):
            raise UsageError("features must be (N, D) with N identities and N cameras")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if n and (self.identities.min() < 0 or self.cameras.min() < 0
                  or self.cameras.max() >= self.n_cameras):
            raise DataError("identity/camera out of range")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def identity_ids(self) -> list[int]:
        return sorted(int(i) for i in np.unique(self.identities))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.identities[rows], self.cameras[rows], self.n_cameras)

    def equal(self, other: "Dataset") -> bool:
        return (self.n_cameras == other.n_cameras
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.identities, other.identities)
                and np.array_equal(self.cameras, other.cameras))


@dataclass(frozen=True)
class SyntheticSpec:
    n_identities: int = 20
    samples_per_identity: int = 10
    dim: int = 16
    cluster_std: float = 0.6
    center_scale: float = 1.0
    n_cameras: int = 2
    seed: int = 0

    def __post_init__(self):
        if min(self.n_identities, self.samples_per_identity, self.dim, self.n_cameras) < 1:
            raise ConfigError("synthetic spec counts must be positive")
        if self.cluster_std < 0 or self.center_scale <= 0:
            raise ConfigError("cluster_std must be >= 0 and center_scale > 0")


def generate_synthetic(spec: SyntheticSpec, rng: Rng | None = None) -> Dataset:
    """Gaussian blobs: center ~ center_scale * N(0, I), sample ~ center + std * N(0, I).

    Sample j of every identity is seen by camera j mod n_cameras.
    """
    rng = rng or Rng(spec.seed)
    centers = spec.center_scale * rng.gaussian((spec.n_identities, spec.dim))
    noise = rng.gaussian((spec.n_identities, spec.samples_per_identity, spec.dim))
    feats = centers[:, None, :] + spec.cluster_std * noise
    ids = np.repeat(np.arange(spec.n_identities), spec.samples_per_identity)
    cams = np.tile(np.arange(spec.samples_per_identity) % spec.n_cameras, spec.n_identities)
    return Dataset(feats.reshape(-1, spec.dim), ids, cams, spec.n_cameras)


def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def save_features(ds: Dataset, path) -> None:
    """Text format: header ``N D C`` then ``identity camera f_1 ... f_D`` per line.

    Floats use repr(), the shortest string that round-trips exactly.
    """
    path = Path(path)
    with _open(path, "w") as fh:
        fh.write(f"{len(ds)} {ds.dim} {ds.n_cameras}\n")
        for f, i, c in zip(ds.features, ds.identities, ds.cameras):
            fh.write(" ".join([str(int(i)), str(int(c))] + [repr(float(v)) for v in f]) + "\n")


def load_features(path) -> Dataset:
    path = Path(path)
    with _open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataParseError("missing header", 1)
    head = lines[0].split()
    try:
        if len(head) != 3:
            raise ValueError
        n, d, c = (int(x) for x in head)
    except ValueError:
        raise DataParseError(f"header must be 'N D C', got {lines[0]!r}", 1) from None
    if n < 0 or d < 1 or c < 1:
        raise DataParseError("header values out of range", 1)
    body = [(no, ln) for no, ln in enumerate(lines[1:], start=2) if ln.strip()]
    if len(body) != n:
        raise DataParseError(f"header declares {n} samples, found {len(body)}",
                             body[n][0] if len(body) > n else len(lines) + 1)
    feats = np.empty((n, d))
    ids = np.empty(n, dtype=np.int64)
    cams = np.empty(n, dtype=np.int64)
    for row, (no, ln) in enumerate(body):
        parts = ln.split()
        if len(parts) != d + 2:
            raise DataParseError(f"expected {d + 2} fields, got {len(parts)}", no)
        try:
            ids[row], cams[row] = int(parts[0]), int(parts[1])
            vals = [float(x) for x in parts[2:]]
        except ValueError as exc:
            raise DataParseError(str(exc), no) from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"line {no}: non-finite feature value")
        if ids[row] < 0 or not 0 <= cams[row] < c:
            raise DataError(f"line {no}: identity/camera out of range")
        feats[row] = vals
    return Dataset(feats, ids, cams, c)


def split_identities(ds: Dataset, train_fraction: float, rng: Rng) -> tuple[Dataset, Dataset]:
    """Identity-disjoint train/test split; round(fraction * n_ids) train identities."""
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must be in (0, 1)")
    ids = ds.identity_ids()
    n_train = int(round(train_fraction * len(ids)))
    if n_train < 1 or n_train >= len(ids):
        raise ConfigError(f"{len(ids)} identities cannot be split with fraction {train_fraction}")
    order = rng.shuffle(ids)
    train_ids = set(order[:n_train])
    in_train = np.array([int(i) in train_ids for i in ds.identities], dtype=bool)
    train, test = ds.subset(np.flatnonzero(in_train)), ds.subset(np.flatnonzero(~in_train))
    assert not set(train.identities.tolist()) & set(test.identities.tolist())
    return train, test


@dataclass
class QueryGallerySplit:
    """Indices into one dataset plus the evaluation protocol flags."""

    query: np.ndarray
    gallery: np.ndarray
    exclude_same_camera_same_id: bool = True
    drop_empty_queries: bool = True


def make_query_gallery(test: Dataset, rng: Rng, exclude_same_camera_same_id: bool = True,
                       drop_empty_queries: bool = True) -> QueryGallerySplit:
    """For each identity and each camera it appears in, one random sample is a query.

    Everything else goes to the gallery. Identities with a single sample
    contribute no query.
    """
    if len(test) == 0:
        raise UsageError("test set is empty")
    queries = []
    for ident in test.identity_ids():
        rows = np.flatnonzero(test.identities == ident)
        if rows.size < 2:
            log.info("identity %d has a single sample; no query", ident)
            continue
        for cam in sorted(set(test.cameras[rows].tolist())):
            cand = rows[test.cameras[rows] == cam]
            queries.append(int(cand[rng.integers(cand.size)]))
    query = np.array(sorted(queries), dtype=np.int64)
    gallery = np.setdiff1d(np.arange(len(test)), query)
    return QueryGallerySplit(query, gallery, exclude_same_camera_same_id, drop_empty_queries)
