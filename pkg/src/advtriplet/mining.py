"""PK batch construction and in-batch triplet selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .linalg import Rng, pairwise_sq_dists

STRATEGIES = ("batch-hard", "stochastic-soft")


@dataclass(frozen=True)
class BatchSpec:
    p_identities: int = 64
    k_samples: int = 4

    def __post_init__(self):
        if self.p_identities < 1 or self.k_samples < 1:
            raise ConfigError("P and K must be positive")

    @property
    def size(self) -> int:
        return self.p_identities * self.k_samples


@dataclass(frozen=True)
class MiningConfig:
    strategy: str = "stochastic-soft"
    temperature: float = 1.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown mining strategy {self.strategy!r}")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")


@dataclass
class BatchIndices:
    """Dataset indices of one PK batch, K consecutive entries per identity."""

    indices: np.ndarray
    identities: list[int]
    turn: int  # the identity whose turn produced this batch


@dataclass
class Batch:
    labels: np.ndarray
    embeddings: np.ndarray
    dist: np.ndarray

    @classmethod
    def from_embeddings(cls, embeddings, labels) -> "Batch":
        emb = np.asarray(embeddings, dtype=np.float64)
        labels = np.asarray(labels)
        if emb.ndim != 2 or labels.shape != (emb.shape[0],):
            raise UsageError("embeddings must be (B, d) with one label per row")
        return cls(labels, emb, pairwise_sq_dists(emb))

    @classmethod
    def from_distances(cls, dist, labels) -> "Batch":
        dist = np.asarray(dist, dtype=np.float64)
        labels = np.asarray(labels)
        if dist.shape != (labels.size, labels.size):
            raise UsageError("distance matrix must be (B, B)")
        return cls(labels, np.empty((labels.size, 0)), dist)


def epoch_batches(labels, spec: BatchSpec, rng: Rng) -> list[BatchIndices]:
    """One batch per identity, in shuffled order.

    Batch i holds its turn identity plus P-1 other identities drawn uniformly
    without replacement; each identity contributes K samples, drawn without
    replacement when it has at least K and with replacement otherwise.
    """
    labels = np.asarray(labels)
    by_id: dict[int, np.ndarray] = {}
    for ident in np.unique(labels):
        by_id[int(ident)] = np.flatnonzero(labels == ident)
    ids = sorted(by_id)
    if len(ids) < spec.p_identities:
        raise ConfigError(f"need at least P={spec.p_identities} identities, dataset has {len(ids)}")

    batches = []
    for turn in rng.shuffle(ids):
        others = [i for i in ids if i != turn]
        chosen = [turn] + rng.sample_without_replacement(others, spec.p_identities - 1)
        idx = []
        for ident in chosen:
            pool = by_id[ident]
            if pool.size >= spec.k_samples:
                pick = rng.sample_without_replacement(pool, spec.k_samples)
            else:
                pick = [pool[j] for j in rng.integers(pool.size, spec.k_samples)]
            idx.extend(int(j) for j in pick)
        batches.append(BatchIndices(np.array(idx, dtype=np.int64), chosen, turn))
    return batches


def _masks(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(labels.size, dtype=bool)
    return pos, ~same


def batch_hard_triplets(b: Batch) -> list[tuple[int, int, int]]:
    """Per anchor: farthest same-identity sample, nearest other-identity sample.

    Ties go to the lowest batch position.
    """
    pos, neg = _masks(b.labels)
    if not pos.any(axis=1).all():
        raise ConfigError("batch-hard mining needs K >= 2 samples per identity")
    if not neg.any(axis=1).all():
        raise ConfigError("batch-hard mining needs at least two identities")
    hardest_pos = np.argmax(np.where(pos, b.dist, -np.inf), axis=1)
    hardest_neg = np.argmin(np.where(neg, b.dist, np.inf), axis=1)
    return [(i, int(hardest_pos[i]), int(hardest_neg[i])) for i in range(b.labels.size)]


def softmax_weights(d, sign: float, temperature: float, mask=None) -> np.ndarray:
    """Row-wise softmax of sign * d / T over the entries where ``mask`` is set.

    Rows are shifted by their max so nothing overflows; masked-out entries
    get weight exactly zero.
    """
    logits = sign * np.asarray(d, dtype=np.float64) / temperature
    if mask is None:
        mask = np.ones(logits.shape, dtype=bool)
    logits = np.where(mask, logits, -np.inf)
    w = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return w / w.sum(axis=-1, keepdims=True)


def stochastic_soft_triplets(b: Batch, c: MiningConfig, rng: Rng) -> list[tuple[int, int, int]]:
    """Sample one positive and one negative per anchor from softmax weights.

    Positives are weighted by exp(+d/T) and negatives by exp(-d/T), so harder
    candidates are likelier on both sides.
    """
    pos, neg = _masks(b.labels)
    if not pos.any(axis=1).all():
        raise ConfigError("stochastic mining needs K >= 2 samples per identity")
    if not neg.any(axis=1).all():
        raise ConfigError("stochastic mining needs at least two identities")
    jp = rng.choice_weighted_rows(softmax_weights(b.dist, 1.0, c.temperature, pos))
    jn = rng.choice_weighted_rows(softmax_weights(b.dist, -1.0, c.temperature, neg))
    return [(i, int(jp[i]), int(jn[i])) for i in range(b.labels.size)]


def mine_triplets(b: Batch, c: MiningConfig, rng: Rng) -> list[tuple[int, int, int]]:
    if c.strategy == "batch-hard":
        triplets = batch_hard_triplets(b)
    else:
        triplets = stochastic_soft_triplets(b, c, rng)
    for ia, ip, ineg in triplets:
        if not (b.labels[ia] == b.labels[ip] != b.labels[ineg]):
            raise AssertionError(f"mined triplet {(ia, ip, ineg)} violates label constraint")
    return triplets
