"""Planted-overlap synthetic query/code corpus used as the desk-scale test substrate."""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .corpus import RawPair


@dataclass(frozen=True)
class SyntheticSpec:
    n_pairs: int = 300
    vocab_size: int = 1000
    overlap: float = 0.8
    query_len: int = 6
    distractor_len: int = 10
    seed: int = 42
    test_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if self.query_len < 1 or self.n_pairs < 1 or self.vocab_size < self.query_len:
            raise ValueError(f"invalid synthetic spec {self}")


@dataclass
class SyntheticCorpus:
    train: list[RawPair]
    test: list[RawPair]
    codebase: list[tuple[int, str]]


def word(i: int) -> str:
    """Deterministic lowercase pseudo-word for vocabulary slot ``i``."""
    letters = string.ascii_lowercase
    out = ""
    i += 26 * 26  # at least three letters
    while i:
        i, r = divmod(i, 26)
        out = letters[r] + out
    return out


def _render_code(tokens: list[str], rng: np.random.Generator) -> str:
    # alternate snake_case and camelCase identifiers so the tokenizer is exercised
    parts, i = [], 0
    while i < len(tokens):
        span = int(rng.integers(1, 4))
        chunk = tokens[i : i + span]
        if rng.random() < 0.5:
            parts.append("_".join(chunk))
        else:
            parts.append(chunk[0] + "".join(t.capitalize() for t in chunk[1:]))
        i += span
    return "def " + parts[0] + "(" + ", ".join(parts[1:]) + "):"


def synth_corpus(spec: SyntheticSpec) -> SyntheticCorpus:
    """Each gold code copies ``round(overlap * query_len)`` query words plus random distractors."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    words = [word(i) for i in range(spec.vocab_size)]
    n_copy = int(round(spec.overlap * spec.query_len))
    if n_copy + spec.distractor_len < 1:
        raise ValueError("gold codes would be empty")
    pairs = []
    for pid in range(spec.n_pairs):
        q_idx = rng.choice(spec.vocab_size, size=spec.query_len, replace=False)
        copied = rng.choice(q_idx, size=n_copy, replace=False).tolist()
        distract = rng.integers(0, spec.vocab_size, size=spec.distractor_len).tolist()
        code_idx = copied + distract
        rng.shuffle(code_idx)
        query = " ".join(words[i] for i in q_idx)
        code = _render_code([words[i] for i in code_idx], rng)
        pairs.append(RawPair(pid, query, code))
    n_test = max(1, int(round(spec.test_fraction * spec.n_pairs))) if spec.n_pairs > 1 else 0
    cut = spec.n_pairs - n_test
    return SyntheticCorpus(pairs[:cut], pairs[cut:], [(p.id, p.code) for p in pairs])
