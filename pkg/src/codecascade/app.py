"""Application-level configuration and artifact loading shared by the CLI and the server."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .cascade import CascadeConfig, Engine
from .corpus import Vocabulary, load_codebase, text_to_ids
from .encoders import CrossEncoder, DualEncoder, load_encoder
from .errors import FormatError
from .index import load_index
from .neural import ModelConfig
from .training import PsConfig, TrainingConfig


@dataclass
class Paths:
    vocab: str | None = None
    dual: str | None = None
    cross: str | None = None
    index: str | None = None
    train: str | None = None
    test: str | None = None
    codebase: str | None = None


@dataclass
class AppConfig:
    paths: Paths = field(default_factory=Paths)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    ps: PsConfig = field(default_factory=PsConfig)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    host: str = "127.0.0.1"
    port: int = 8765

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port {self.port} outside [1, 65535]")


def _section(cls, raw: dict[str, Any] | None, name: str):
    raw = raw or {}
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown {name} fields: {sorted(unknown)}")
    return cls(**raw)


def load_config(path: str | Path | None) -> AppConfig:
    """Read a JSON config whose sections mirror the dataclasses above."""
    if path is None:
        return AppConfig()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return AppConfig(
        paths=_section(Paths, raw.get("paths"), "paths"),
        model=_section(ModelConfig, raw.get("model"), "model"),
        training=_section(TrainingConfig, raw.get("training"), "training"),
        ps=_section(PsConfig, raw.get("ps"), "ps"),
        cascade=_section(CascadeConfig, raw.get("cascade"), "cascade"),
        host=raw.get("host", "127.0.0.1"),
        port=int(raw.get("port", 8765)),
    )


def override(obj, **flags):
    """Replace dataclass fields with every flag that was actually given."""
    given = {k: v for k, v in flags.items() if v is not None}
    return replace(obj, **given) if given else obj


def load_engine(
    vocab_path, dual_path, index_path, codebase_path=None, cross_path=None, strict_fingerprint: bool = False
) -> Engine:
    vocab = Vocabulary.load(vocab_path)
    dual = load_encoder(dual_path)
    if not isinstance(dual, DualEncoder):
        raise FormatError(f"{dual_path} is not a dual-encoder checkpoint")
    cross = None
    if cross_path is not None:
        cross = load_encoder(cross_path)
        if not isinstance(cross, CrossEncoder):
            raise FormatError(f"{cross_path} is not a cross-encoder checkpoint")
    index = load_index(index_path)
    with warnings.catch_warnings():
        if strict_fingerprint:
            warnings.simplefilter("error")
        index.check_fingerprint(dual)
    codes = {}
    if codebase_path is not None:
        codes = {cid: text_to_ids(code, "code", vocab) for cid, code in load_codebase(codebase_path)}
        missing = set(index.ids.tolist()) - codes.keys()
        if missing:
            raise FormatError(f"{len(missing)} index ids absent from the codebase, e.g. {min(missing)}")
    elif cross is not None:
        raise ValueError("reranking needs the codebase to rebuild code token ids")
    return Engine(vocab, dual, index, cross, codes)


def result_payload(query: str, result) -> dict:
    return {
        "query": query,
        "results": [{"id": h.id, "score": h.score, "rank": h.rank} for h in result.hits],
        "timings_ms": {"retrieve": result.timings_ms.get("retrieve", 0.0), "rank": result.timings_ms.get("rank", 0.0)},
    }
