"""Retrieval metrics: gallery ranking, CMC curve and mean average precision."""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, QueryGallerySplit
from .embedder import EmbedderParams, embed
from .errors import EvaluationError, UsageError
from .linalg import lr_sum


@dataclass
class EvalReport:
    cmc: np.ndarray
    map: float
    per_query_ap: np.ndarray
    n_queries: int = 0
    n_dropped: int = 0

    def rank(self, r: int) -> float:
        """CMC accuracy at rank r (1-based); saturates past the curve's end."""
        return float(self.cmc[min(r, len(self.cmc)) - 1])

    def summary(self) -> dict:
        return {"rank1": self.rank(1), "rank5": self.rank(5), "rank10": self.rank(10),
                "map": self.map, "n_queries": self.n_queries, "n_dropped": self.n_dropped}

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.summary().items())

    def to_dict(self) -> dict:
        return {"cmc": [float(x) for x in self.cmc], "map": float(self.map),
                "per_query_ap": [float(x) for x in self.per_query_ap],
                "n_queries": self.n_queries, "n_dropped": self.n_dropped}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(np.asarray(d["cmc"], dtype=np.float64), float(d["map"]),
                   np.asarray(d["per_query_ap"], dtype=np.float64),
                   int(d.get("n_queries", 0)), int(d.get("n_dropped", 0)))

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        (out / "report.txt").write_text(self.to_text())


def rank_gallery(query, gallery) -> np.ndarray:
    """Gallery row indices by ascending squared distance; ties keep index order."""
    q = np.asarray(query, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] == 0:
        raise UsageError("gallery must be a non-empty (M, d) array")
    if q.shape != (g.shape[1],):
        raise UsageError(f"query dim {q.shape} does not match gallery dim {g.shape[1]}")
    diff = g - q
    d = lr_sum(diff * diff)
    return np.argsort(d, kind="stable")


def _check_matches(matches: Sequence[np.ndarray]) -> list[np.ndarray]:
    rows = [np.asarray(m, dtype=bool) for m in matches]
    if not rows:
        raise EvaluationError("no queries to evaluate")
    for i, m in enumerate(rows):
        if not m.any():
            raise EvaluationError(f"query {i} has no ground-truth match in its gallery")
    return rows


def cmc_curve(matches: Sequence[np.ndarray], max_rank: int | None = None) -> np.ndarray:
    """cmc[r] = fraction of queries whose first correct match is at rank <= r + 1.

    ``matches[q]`` is the boolean match vector of query q in ranked order.
    """
    rows = _check_matches(matches)
    length = max_rank or max(m.size for m in rows)
    hits = np.zeros(length)
    for m in rows:
        first = int(np.argmax(m))
        if first < length:
            hits[first:] += 1.0
    return hits / len(rows)


def _ap_exact(match) -> Fraction:
    m = np.asarray(match, dtype=bool)
    pos = np.flatnonzero(m)
    if pos.size == 0:
        raise EvaluationError("average precision undefined without a match")
    return sum((Fraction(k + 1, int(r) + 1) for k, r in enumerate(pos)), Fraction(0)) / pos.size


def average_precision(match) -> float:
    """Mean over ground-truth positions k of precision@k.

    Accumulated in exact rationals and rounded once, so the result does not
    depend on summation order (two hits at ranks 1 and 3 give exactly 5/6).
    """
    return float(_ap_exact(match))


def mean_average_precision(matches: Sequence[np.ndarray]) -> tuple[float, np.ndarray]:
    rows = _check_matches(matches)
    exact = [_ap_exact(m) for m in rows]
    ap = np.array([float(a) for a in exact])
    return float(sum(exact, Fraction(0)) / len(exact)), ap


def ranked_matches(embeddings: np.ndarray, ds: Dataset,
                   split: QueryGallerySplit) -> tuple[list[np.ndarray], int]:
    """Match vectors per retained query, after per-query exclusions.

    Returns the vectors and how many queries were dropped for lacking a
    ground-truth match.
    """
    if split.gallery.size == 0:
        raise UsageError("gallery is empty")
    gal = split.gallery
    out, dropped = [], 0
    for q in split.query:
        keep = gal != q
        if split.exclude_same_camera_same_id:
            keep &= ~((ds.identities[gal] == ds.identities[q]) & (ds.cameras[gal] == ds.cameras[q]))
        g = gal[keep]
        if g.size == 0:
            match = np.zeros(0, dtype=bool)
        else:
            order = rank_gallery(embeddings[q], embeddings[g])
            match = ds.identities[g[order]] == ds.identities[q]
        if not match.any():
            if split.drop_empty_queries:
                dropped += 1
                continue
            raise EvaluationError(f"query sample {int(q)} has no valid match in the gallery")
        out.append(match)
    return out, dropped


def evaluate_embeddings(embeddings: np.ndarray, ds: Dataset, split: QueryGallerySplit) -> EvalReport:
    matches, dropped = ranked_matches(embeddings, ds, split)
    max_rank = split.gallery.size
    cmc = cmc_curve(matches, max_rank)
    m_ap, ap = mean_average_precision(matches)
    return EvalReport(cmc, m_ap, ap, len(matches), dropped)


def evaluate(params: EmbedderParams | None, ds: Dataset, split: QueryGallerySplit) -> EvalReport:
    """Embed every sample once (``params=None`` means raw features) and score the split."""
    if params is not None and params.in_dim != ds.dim:
        raise UsageError(f"model input dim {params.in_dim} != dataset dim {ds.dim}")
    emb = ds.features if params is None else embed(params, ds.features)
    return evaluate_embeddings(emb, ds, split)
