"""Retriever-ranker inference: dual-encoder retrieval, cross-encoder reranking of the top k."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .corpus import IdSequence, Vocabulary, text_to_ids
from .encoders import CrossEncoder, DualEncoder, ForwardCounters
from .index import EmbeddingIndex, RankedHit, full_ranking, top_k

Fusion = Literal["cross_only", "mean_dual_cross"]


@dataclass(frozen=True)
class CascadeConfig:
    k: int = 10
    fusion: Fusion = "cross_only"

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.fusion not in ("cross_only", "mean_dual_cross"):
            raise ValueError(f"unknown fusion {self.fusion!r}")


@dataclass
class SearchResult:
    hits: list[RankedHit]
    timings_ms: dict[str, float] = field(default_factory=dict)

    @property
    def ids(self) -> list[int]:
        return [h.id for h in self.hits]

    def rank_of(self, code_id: int) -> int | None:
        for h in self.hits:
            if h.id == code_id:
                return h.rank
        return None


@dataclass
class Engine:
    """Everything a query needs: vocabulary, both encoders, the code index and code token ids."""

    vocab: Vocabulary
    dual: DualEncoder
    index: EmbeddingIndex
    cross: CrossEncoder | None = None
    codes: dict[int, IdSequence] = field(default_factory=dict)
    counters: ForwardCounters = field(default_factory=ForwardCounters)

    def __post_init__(self):
        self.dual.counters = self.counters
        if self.cross is not None:
            self.cross.counters = self.counters

    def encode_query(self, text: str) -> IdSequence:
        return text_to_ids(text, "query", self.vocab)


def min_max(x: np.ndarray) -> np.ndarray:
    span = x.max() - x.min()
    if span == 0:
        return np.zeros_like(x)
    return (x - x.min()) / span


def fuse(dual_scores: np.ndarray, cross_scores: np.ndarray, fusion: Fusion) -> np.ndarray:
    if fusion == "cross_only":
        return np.asarray(cross_scores, dtype=np.float64)
    return (min_max(np.asarray(dual_scores, float)) + min_max(np.asarray(cross_scores, float))) / 2


def rerank(
    query: IdSequence, candidates: Sequence[RankedHit], engine: Engine, fusion: Fusion
) -> list[tuple[int, float]]:
    """Score candidates with the cross-encoder and sort by fused score, ties by id."""
    if not candidates:
        return []
    ids = np.array([h.id for h in candidates])
    cross_scores = engine.cross.score_batch([(query, engine.codes[i]) for i in ids.tolist()])
    fused = fuse(np.array([h.score for h in candidates]), cross_scores, fusion)
    order = np.lexsort((ids, -fused))
    return [(int(ids[i]), float(fused[i])) for i in order]


def search(
    query: str | IdSequence, engine: Engine, cfg: CascadeConfig = CascadeConfig(), limit: int | None = None
) -> SearchResult:
    """Retrieve with the dual-encoder, rerank the top ``k`` with the cross-encoder.

    With ``limit=None`` the result covers the whole codebase (codes past rank
    ``k`` keep their dual order); otherwise only the first ``limit`` hits are
    materialized, which avoids a full sort when serving.
    """
    t0 = time.perf_counter()
    q = engine.encode_query(query) if isinstance(query, str) else query
    q_emb = engine.dual.encode(q)
    n = len(engine.index)
    k = min(cfg.k, n) if engine.cross is not None else 0
    if limit is None:
        retrieved = full_ranking(engine.index, q_emb)
    else:
        retrieved = top_k(engine.index, q_emb, max(k, limit))
    t1 = time.perf_counter()

    head = rerank(q, retrieved[:k], engine, cfg.fusion) if k else []
    hits = [RankedHit(cid, score, r) for r, (cid, score) in enumerate(head, start=1)]
    hits += [RankedHit(h.id, h.score, h.rank) for h in retrieved[k:]]
    if limit is not None:
        hits = hits[:limit]
    t2 = time.perf_counter()
    return SearchResult(hits, {"retrieve": (t1 - t0) * 1e3, "rank": (t2 - t1) * 1e3})


def counted_search(query, engine: Engine, cfg: CascadeConfig = CascadeConfig(), limit: int | None = None):
    before = engine.counters.snapshot()
    result = search(query, engine, cfg, limit)
    return result, engine.counters.snapshot() - before


def search_dual(query, engine: Engine, limit: int | None = None) -> SearchResult:
    return search(query, engine, CascadeConfig(k=0), limit)


def search_cross_exhaustive(query: str | IdSequence, engine: Engine, limit: int | None = None) -> SearchResult:
    """Score every code with the cross-encoder; the infeasible-at-scale baseline."""
    t0 = time.perf_counter()
    q = engine.encode_query(query) if isinstance(query, str) else query
    ids = engine.index.ids
    scores = engine.cross.score_batch([(q, engine.codes[int(i)]) for i in ids])
    order = np.lexsort((ids, -scores))
    if limit is not None:
        order = order[:limit]
    hits = [RankedHit(int(ids[i]), float(scores[i]), r) for r, i in enumerate(order, start=1)]
    return SearchResult(hits, {"retrieve": 0.0, "rank": (time.perf_counter() - t0) * 1e3})
