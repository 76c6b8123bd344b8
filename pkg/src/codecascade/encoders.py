"""Dual-encoder (shared-weight bi-encoder) and cross-encoder scoring."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import CLS, PAD, SEP, IdSequence
from .errors import DimensionMismatch, EmptySequence, FormatError, SequenceTooLong
from .neural import (
    EncoderCache,
    EncoderParams,
    ModelConfig,
    checkpoint_bytes,
    encoder_backward,
    encoder_forward,
    fingerprint,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

CROSS_CHUNK = 2500


@dataclass
class ForwardCounters:
    """Encoder forward-pass tallies; one unit per sequence or concatenated pair."""

    dual_query_forwards: int = 0
    dual_code_forwards: int = 0
    cross_forwards: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, name: str, n: int) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + n)

    def snapshot(self) -> "ForwardCounters":
        with self._lock:
            return ForwardCounters(self.dual_query_forwards, self.dual_code_forwards, self.cross_forwards)

    def reset(self) -> None:
        with self._lock:
            self.dual_query_forwards = self.dual_code_forwards = self.cross_forwards = 0

    def __sub__(self, other: "ForwardCounters") -> "ForwardCounters":
        return ForwardCounters(
            self.dual_query_forwards - other.dual_query_forwards,
            self.dual_code_forwards - other.dual_code_forwards,
            self.cross_forwards - other.cross_forwards,
        )

    @property
    def dual_forwards(self) -> int:
        return self.dual_query_forwards + self.dual_code_forwards


def pad_batch(rows: Sequence[Sequence[int]], positions: Sequence[Sequence[int]] | None = None):
    """Right-pad id lists into ``(ids, positions, valid)`` arrays."""
    lengths = np.fromiter((len(r) for r in rows), dtype=np.int64, count=len(rows))
    width = int(lengths.max())
    valid = np.arange(width)[None, :] < lengths[:, None]
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    ids[valid] = np.fromiter(itertools.chain.from_iterable(rows), dtype=np.int64, count=int(lengths.sum()))
    if positions is None:
        pos = np.where(valid, np.arange(width)[None, :], 0)
    else:
        pos = np.zeros((len(rows), width), dtype=np.int64)
        pos[valid] = np.fromiter(itertools.chain.from_iterable(positions), dtype=np.int64, count=int(lengths.sum()))
    return ids, pos, valid


def score_dual(eq: np.ndarray, ec: np.ndarray) -> float:
    if eq.shape != ec.shape:
        raise DimensionMismatch(f"embedding shapes {eq.shape} and {ec.shape} differ")
    return float(np.dot(eq, ec))


@dataclass
class DualEncoder:
    """Query and code share one parameter set; relevance is the embedding dot product."""

    params: EncoderParams
    cfg: ModelConfig
    normalize: bool = True
    counters: ForwardCounters | None = None

    @classmethod
    def init(cls, cfg: ModelConfig, normalize: bool = True) -> "DualEncoder":
        return cls(init_params(cfg), cfg, normalize)

    def _check(self, seqs: Sequence[IdSequence]) -> None:
        for s in seqs:
            if len(s) == 0:
                raise EmptySequence("cannot encode an empty sequence")
            if len(s) > self.cfg.max_pos:
                raise SequenceTooLong(f"length {len(s)} exceeds max_pos {self.cfg.max_pos}")

    def _count(self, seqs: Sequence[IdSequence]) -> None:
        if self.counters is not None:
            n_query = sum(1 for s in seqs if s.kind == "query")
            if n_query:
                self.counters.add("dual_query_forwards", n_query)
            if len(seqs) - n_query:
                self.counters.add("dual_code_forwards", len(seqs) - n_query)

    def forward(self, seqs: Sequence[IdSequence]) -> tuple[np.ndarray, EncoderCache]:
        self._check(seqs)
        self._count(seqs)
        ids, pos, valid = pad_batch([s.ids for s in seqs])
        cache = encoder_forward(self.params, ids, pos, valid)
        pooled = cache.pooled
        if not self.normalize:
            return pooled, cache
        norms = np.linalg.norm(pooled, axis=1, keepdims=True)
        emb = pooled / norms
        cache.extra.update(norms=norms, emb=emb)
        return emb, cache

    def backward(self, cache: EncoderCache, d_emb: np.ndarray, grads: EncoderParams) -> None:
        if self.normalize:
            emb, norms = cache.extra["emb"], cache.extra["norms"]
            d_pooled = (d_emb - emb * (emb * d_emb).sum(axis=1, keepdims=True)) / norms
        else:
            d_pooled = d_emb
        encoder_backward(self.params, cache, d_pooled, grads)

    def encode_batch(self, seqs: Sequence[IdSequence], chunk: int = 1024) -> np.ndarray:
        if not seqs:
            return np.zeros((0, self.cfg.d))
        out = [self.forward(seqs[i : i + chunk])[0] for i in range(0, len(seqs), chunk)]
        return np.concatenate(out)

    def encode(self, seq: IdSequence) -> np.ndarray:
        return self.forward([seq])[0][0]

    def to_bytes(self) -> bytes:
        return checkpoint_bytes(self.params, self.cfg, "dual", normalize=self.normalize)

    def fingerprint(self) -> str:
        return fingerprint(self.to_bytes())

    def save(self, path) -> bytes:
        return save_checkpoint(path, self.params, self.cfg, "dual", normalize=self.normalize)


def cross_layout(q: IdSequence, c: IdSequence) -> tuple[list[int], list[int]]:
    """``[CLS] q [SEP] c`` with positions restarting at 0 for the code segment."""
    ids = [CLS, *q.ids, SEP, *c.ids]
    positions = list(range(len(q) + 2)) + list(range(len(c)))
    return ids, positions


@dataclass
class CrossEncoder:
    """Joint encoder over the query/code concatenation with a linear scoring head."""

    params: EncoderParams
    cfg: ModelConfig
    counters: ForwardCounters | None = None

    @classmethod
    def init(cls, cfg: ModelConfig) -> "CrossEncoder":
        return cls(init_params(cfg, with_head=True), cfg)

    def _layout(self, pairs: Sequence[tuple[IdSequence, IdSequence]]):
        rows, positions = [], []
        for q, c in pairs:
            if len(q) == 0 or len(c) == 0:
                raise EmptySequence("query and code must be non-empty")
            if len(q) + len(c) + 2 > self.cfg.max_pos:
                raise SequenceTooLong(f"{len(q)}+{len(c)}+2 tokens exceed max_pos {self.cfg.max_pos}")
            ids, pos = cross_layout(q, c)
            rows.append(ids)
            positions.append(pos)
        return pad_batch(rows, positions)

    def forward(self, pairs: Sequence[tuple[IdSequence, IdSequence]]) -> tuple[np.ndarray, EncoderCache]:
        ids, pos, valid = self._layout(pairs)
        if self.counters is not None:
            self.counters.add("cross_forwards", len(pairs))
        cache = encoder_forward(self.params, ids, pos, valid)
        scores = cache.pooled @ self.params.head_w + self.params.head_b
        return scores, cache

    def backward(self, cache: EncoderCache, d_scores: np.ndarray, grads: EncoderParams) -> None:
        grads.head_w += cache.pooled.T @ d_scores
        grads.head_b += d_scores.sum()
        encoder_backward(self.params, cache, np.outer(d_scores, self.params.head_w), grads)

    def score_batch(self, pairs: Sequence[tuple[IdSequence, IdSequence]], chunk: int = CROSS_CHUNK) -> np.ndarray:
        if not pairs:
            return np.zeros(0)
        return np.concatenate([self.forward(pairs[i : i + chunk])[0] for i in range(0, len(pairs), chunk)])

    def score(self, q: IdSequence, c: IdSequence) -> float:
        return float(self.forward([(q, c)])[0][0])

    def to_bytes(self) -> bytes:
        return checkpoint_bytes(self.params, self.cfg, "cross")

    def save(self, path) -> bytes:
        return save_checkpoint(path, self.params, self.cfg, "cross")


def score_cross(enc: CrossEncoder, q: IdSequence, c: IdSequence) -> float:
    return enc.score(q, c)


def load_encoder(path_or_bytes) -> DualEncoder | CrossEncoder:
    params, cfg, header = load_checkpoint(path_or_bytes)
    if header.get("component") == "cross":
        if params.head_w is None or params.head_b is None:
            raise FormatError("cross checkpoint lacks head tensors")
        return CrossEncoder(params, cfg)
    if header.get("component") == "dual":
        return DualEncoder(params, cfg, bool(header.get("normalize", True)))
    raise FormatError(f"unknown component {header.get('component')!r}")
