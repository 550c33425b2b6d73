"""Cosine ranking and single-query CMC / mAP evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def similarity(h1, h2) -> float:
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape:
        raise ValueError(f"dimension mismatch {h1.shape} vs {h2.shape}")
    n1, n2 = np.linalg.norm(h1), np.linalg.norm(h2)
    if n1 == 0 or n2 == 0:
        raise ValueError("cosine similarity of a zero-norm embedding")
    return float(h1 @ h2 / (n1 * n2))


def similarity_matrix(queries, gallery) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    if np.any(qn == 0) or np.any(gn == 0):
        raise ValueError("cosine similarity of a zero-norm embedding")
    return (q / qn) @ (g / gn).T


@dataclass
class RetrievalResult:
    rank1: float
    mAP: float
    cmc: np.ndarray
    skipped_queries: int = 0
    average_precision: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {
            "rank1": self.rank1,
            "map": self.mAP,
            "cmc": [float(x) for x in self.cmc],
            "skipped_queries": self.skipped_queries,
        }


def evaluate(q_emb, q_ids, q_cams, g_emb, g_ids, g_cams, max_rank: int | None = None) -> RetrievalResult:
    """Rank the gallery by cosine similarity for each query.

    Gallery entries sharing both identity and camera with the query are
    dropped; remaining ties are broken by gallery index.  Queries left with no
    true match are skipped and counted.
    """
    sim = similarity_matrix(q_emb, g_emb)
    q_ids, q_cams = np.asarray(q_ids), np.asarray(q_cams)
    g_ids, g_cams = np.asarray(g_ids), np.asarray(g_cams)
    n_gallery = sim.shape[1]
    max_rank = n_gallery if max_rank is None else max_rank
    cmc_hits = np.zeros(max_rank)
    aps = []
    skipped = 0
    for qi in range(sim.shape[0]):
        order = np.argsort(-sim[qi], kind="stable")
        keep = ~((g_ids[order] == q_ids[qi]) & (g_cams[order] == q_cams[qi]))
        matches = g_ids[order][keep] == q_ids[qi]
        if not matches.any():
            skipped += 1
            continue
        first = int(np.argmax(matches))
        if first < max_rank:
            cmc_hits[first:] += 1
        hit_ranks = np.flatnonzero(matches) + 1
        aps.append(float(np.mean(np.arange(1, len(hit_ranks) + 1) / hit_ranks)))
    valid = len(aps)
    if valid == 0:
        return RetrievalResult(0.0, 0.0, np.zeros(max_rank), skipped, np.zeros(0))
    cmc = cmc_hits / valid
    return RetrievalResult(float(cmc[0]), float(np.mean(aps)), cmc, skipped, np.asarray(aps))
