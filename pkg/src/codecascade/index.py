"""Precomputed code-embedding matrix with exact brute-force retrieval."""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import IdSequence
from .encoders import DualEncoder
from .errors import DimensionMismatch, EmptyCodebase, EmptySequence, FingerprintMismatchWarning, FormatError
from .neural import unpack_header, unpack_tensors

INDEX_MAGIC = b"R2PSIDX1"


@dataclass(frozen=True)
class RankedHit:
    id: int
    score: float
    rank: int


@dataclass
class EmbeddingIndex:
    ids: np.ndarray  # int64, N
    matrix: np.ndarray  # float32, N x d
    normalized: bool
    fingerprint: str
    _scoring: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise FormatError(f"{len(self.ids)} ids but matrix shape {self.matrix.shape}")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("index ids must be unique")
        self._scoring = self.matrix.astype(np.float64)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def scores(self, q_emb: np.ndarray) -> np.ndarray:
        q_emb = np.asarray(q_emb, dtype=np.float64)
        if q_emb.shape != (self.dim,):
            raise DimensionMismatch(f"query embedding shape {q_emb.shape}, index dim {self.dim}")
        return self._scoring @ q_emb

    def check_fingerprint(self, dual: DualEncoder) -> bool:
        fp = dual.fingerprint()
        if fp != self.fingerprint:
            warnings.warn(
                f"index fingerprint {self.fingerprint[:12]} does not match checkpoint {fp[:12]}",
                FingerprintMismatchWarning,
                stacklevel=2,
            )
            return False
        return True


def build_index(codebase: Sequence[tuple[int, IdSequence]], dual: DualEncoder, chunk: int = 1024) -> EmbeddingIndex:
    """Encode every code with the dual-encoder; rows follow input order."""
    if not codebase:
        raise EmptyCodebase()
    for cid, seq in codebase:
        if len(seq) == 0:
            raise EmptyCodebase(f"code {cid} has no tokens", code_id=cid)
    try:
        matrix = dual.encode_batch([seq for _, seq in codebase], chunk=chunk)
    except EmptySequence as exc:
        raise EmptyCodebase(str(exc)) from exc
    return EmbeddingIndex(
        ids=np.array([cid for cid, _ in codebase], dtype=np.int64),
        matrix=matrix,
        normalized=dual.normalize,
        fingerprint=dual.fingerprint(),
    )


def _order(ids: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # descending score, ties by ascending id
    return np.lexsort((ids, -scores))


def top_k(index: EmbeddingIndex, q_emb: np.ndarray, k: int) -> list[RankedHit]:
    """Exact top ``min(k, N)`` by dot product."""
    if k < 0:
        raise ValueError("k must be >= 0")
    scores = index.scores(q_emb)
    n = len(index)
    k = min(k, n)
    if k == 0:
        return []
    if k < n:
        # keep every entry tied with the k-th best so the id tie-break stays exact
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = cand[_order(index.ids[cand], scores[cand])][:k]
    return [RankedHit(int(index.ids[i]), float(scores[i]), r) for r, i in enumerate(order, start=1)]


def full_ranking(index: EmbeddingIndex, q_emb: np.ndarray) -> list[RankedHit]:
    scores = index.scores(q_emb)
    order = _order(index.ids, scores)
    return [RankedHit(int(index.ids[i]), float(scores[i]), r) for r, i in enumerate(order, start=1)]


def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    header = {
        "dim": index.dim,
        "count": len(index),
        "normalized": index.normalized,
        "fingerprint": index.fingerprint,
        "ids": index.ids.tolist(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    data = np.ascontiguousarray(index.matrix, dtype="<f4").tobytes()
    Path(path).write_bytes(INDEX_MAGIC + struct.pack("<I", len(blob)) + blob + data)


def load_index(path: str | Path) -> EmbeddingIndex:
    raw = Path(path).read_bytes()
    header, data = unpack_header(INDEX_MAGIC, raw)
    try:
        dim, count = int(header["dim"]), int(header["count"])
        ids = [int(i) for i in header["ids"]]
        normalized = bool(header["normalized"])
        fp = str(header["fingerprint"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad index header: {exc}") from exc
    if dim < 1 or count < 0 or len(ids) != count:
        raise FormatError(f"header count {count} disagrees with {len(ids)} ids")
    manifest = {"tensors": [{"name": "matrix", "shape": [count, dim], "offset": 0}]}
    matrix = unpack_tensors(manifest, data)["matrix"]
    try:
        return EmbeddingIndex(np.array(ids, dtype=np.int64), matrix.copy(), normalized, fp)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
