from __future__ import annotations

import pytest

from codecascade.cascade import Engine
from codecascade.corpus import build_vocab, text_to_ids, tokenize
from codecascade.encoders import CrossEncoder, DualEncoder
from codecascade.index import build_index
from codecascade.neural import ModelConfig
from codecascade.synth import SyntheticSpec, synth_corpus
from codecascade.training import examples_from_pairs


def corpus_vocab(corpus):
    seqs = [tokenize(p.query, "query") for p in corpus.train] + [tokenize(c) for _, c in corpus.codebase]
    return build_vocab(seqs)


def make_engine(corpus, d=8, seed=0, with_cross=True, dual=None, cross=None):
    vocab = corpus_vocab(corpus)
    cfg = ModelConfig(d=d, vocab_size=len(vocab), seed=seed)
    dual = dual or DualEncoder.init(cfg)
    if with_cross and cross is None:
        cross = CrossEncoder.init(ModelConfig(d=d, vocab_size=len(vocab), seed=seed + 1))
    codes = {cid: text_to_ids(code, "code", vocab) for cid, code in corpus.codebase}
    index = build_index(list(codes.items()), dual)
    return Engine(vocab, dual, index, cross if with_cross else None, codes)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(SyntheticSpec(n_pairs=60, vocab_size=120, seed=7))


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return corpus_vocab(small_corpus)


@pytest.fixture(scope="session")
def small_examples(small_corpus, small_vocab):
    return examples_from_pairs(small_corpus.train, small_vocab)


@pytest.fixture()
def small_engine(small_corpus):
    return make_engine(small_corpus)


ACCEPTANCE: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str) -> None:
    """Log one acceptance verdict; the terminal summary repeats all of them."""
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
