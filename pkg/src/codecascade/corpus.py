"""Dataset loading, code-aware tokenization, and vocabulary handling."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

from .errors import EmptyAfterTokenize, ParseError

Kind = Literal["query", "code"]

PAD, UNK, CLS, SEP = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
MAX_LEN = {"query": 64, "code": 128}

# Anything that is not a letter or digit separates tokens; "_" is listed
# explicitly because \w would otherwise keep snake_case names together.
_SEPARATORS = re.compile(r"[\W_]+")


@dataclass(frozen=True)
class RawPair:
    id: int
    query: str
    code: str


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    kind: Kind


@dataclass(frozen=True)
class IdSequence:
    ids: tuple[int, ...]
    kind: Kind

    def __len__(self) -> int:
        return len(self.ids)


def _split_camel(fragment: str) -> list[str]:
    parts = []
    start = 0
    for i in range(1, len(fragment)):
        if fragment[i - 1].islower() and fragment[i].isupper():
            parts.append(fragment[start:i])
            start = i
    parts.append(fragment[start:])
    return parts


def tokenize(text: str, kind: Kind = "code") -> TokenSequence:
    """Split ``text`` on whitespace, punctuation, underscores and camelCase humps.

    >>> tokenize("getItemById").tokens
    ('get', 'item', 'by', 'id')
    """
    tokens = []
    for fragment in _SEPARATORS.split(text):
        for piece in _split_camel(fragment):
            piece = piece.lower()
            if piece:
                tokens.append(piece)
    if not tokens:
        raise EmptyAfterTokenize(f"no tokens in {text!r}")
    return TokenSequence(tuple(tokens), kind)


@dataclass
class Vocabulary:
    min_freq: int = 1
    tokens: list[str] = field(default_factory=list)  # non-reserved, in id order

    def __post_init__(self):
        self._index = {tok: i + len(RESERVED) for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(RESERVED) + len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token(self, idx: int) -> str:
        if idx < len(RESERVED):
            return RESERVED[idx]
        return self.tokens[idx - len(RESERVED)]

    def to_json(self) -> str:
        return json.dumps({"min_freq": self.min_freq, "tokens": self.tokens}, ensure_ascii=False)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(int(obj["min_freq"]), [str(t) for t in obj["tokens"]])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(1, f"bad vocabulary file: {exc}") from exc


def build_vocab(corpus: Iterable[TokenSequence], min_freq: int = 1) -> Vocabulary:
    """Keep tokens seen at least ``min_freq`` times, most frequent first, ties lexicographic."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    for seq in corpus:
        counts.update(seq.tokens)
    kept = [(tok, n) for tok, n in counts.items() if n >= min_freq and tok not in RESERVED]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return Vocabulary(min_freq, [tok for tok, _ in kept])


def encode_ids(seq: TokenSequence, vocab: Vocabulary, max_len: int | None = None) -> IdSequence:
    if not seq.tokens:
        raise ValueError("cannot encode an empty token sequence")
    limit = MAX_LEN[seq.kind] if max_len is None else max_len
    return IdSequence(tuple(vocab.id(t) for t in seq.tokens[:limit]), seq.kind)


def text_to_ids(text: str, kind: Kind, vocab: Vocabulary, max_len: int | None = None) -> IdSequence:
    return encode_ids(tokenize(text, kind), vocab, max_len)


def _read_jsonl(path: str | Path, need_query: bool, csn: bool) -> list[RawPair]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"malformed JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ParseError(lineno, "expected a JSON object")
            if csn:
                obj = _from_csn(obj, lineno)
            for key in ("id", "code") + (("query",) if need_query else ()):
                if key not in obj:
                    raise ParseError(lineno, f"missing field {key!r}")
            if not isinstance(obj["id"], int) or isinstance(obj["id"], bool):
                raise ParseError(lineno, "field 'id' must be an integer")
            query = obj.get("query", "")
            if not isinstance(obj["code"], str) or not isinstance(query, str):
                raise ParseError(lineno, "fields 'query' and 'code' must be strings")
            if not obj["code"].strip() or (need_query and not query.strip()):
                raise ParseError(lineno, "empty query or code")
            rows.append(RawPair(obj["id"], query, obj["code"]))
    return rows


def _from_csn(obj: dict, lineno: int) -> dict:
    # CodeSearchNet-style rows: docstring/code strings and a url or idx as key.
    out = {"code": obj.get("code", obj.get("original_string"))}
    if "docstring" in obj or "query" in obj:
        out["query"] = obj.get("query", obj.get("docstring"))
    idx = obj.get("id", obj.get("idx"))
    if isinstance(idx, str) and idx.isdigit():
        idx = int(idx)
    if idx is None:
        raise ParseError(lineno, "CSN row has neither 'id' nor 'idx'")
    out["id"] = idx
    return {k: v for k, v in out.items() if v is not None}


def _check_unique(rows: list[RawPair], path) -> None:
    seen = set()
    for lineno, row in enumerate(rows, start=1):
        if row.id in seen:
            raise ParseError(lineno, f"duplicate id {row.id} in {path}")
        seen.add(row.id)


def load_dataset(path: str | Path, csn: bool = False) -> list[RawPair]:
    """Read query/code pairs from JSONL, one ``{"id", "query", "code"}`` object per line."""
    rows = _read_jsonl(path, need_query=True, csn=csn)
    _check_unique(rows, path)
    return rows


def load_codebase(path: str | Path, csn: bool = False) -> list[tuple[int, str]]:
    rows = _read_jsonl(path, need_query=False, csn=csn)
    _check_unique(rows, path)
    return [(r.id, r.code) for r in rows]


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
