import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codecascade.corpus import IdSequence
from codecascade.encoders import CrossEncoder, DualEncoder, ForwardCounters, cross_layout, load_encoder, score_cross, score_dual
from codecascade.errors import DimensionMismatch, EmptySequence, FormatError, SequenceTooLong
from codecascade.neural import ModelConfig, init_params, save_checkpoint


def q(*ids):
    return IdSequence(tuple(ids), "query")


def c(*ids):
    return IdSequence(tuple(ids), "code")


CFG = ModelConfig(d=8, vocab_size=30, max_pos=40, seed=2)


@given(st.lists(st.integers(1, 29), min_size=1, max_size=20))
@settings(max_examples=40, deadline=None)
def test_normalized_embedding_has_unit_norm(ids):
    emb = DualEncoder.init(CFG).encode(c(*ids))
    assert abs(np.linalg.norm(emb) - 1.0) < 1e-9


def test_single_token_zero_attention_returns_embedding_row():
    cfg = ModelConfig(d=2, vocab_size=5, max_pos=4)
    params = init_params(cfg)
    params.tok_emb[3] = [3.0, 4.0]
    params.pos_emb[0] = [0.0, 0.0]
    params.w_q[:] = params.w_k[:] = 0.0
    params.w_v[:] = np.eye(2)
    dual = DualEncoder(params, cfg)
    np.testing.assert_allclose(dual.encode(q(3)), [0.6, 0.8], rtol=0, atol=1e-12)


def test_encode_is_deterministic():
    dual = DualEncoder.init(CFG)
    assert dual.encode(q(1, 4, 5)).tobytes() == dual.encode(q(1, 4, 5)).tobytes()


def test_empty_sequence_rejected():
    with pytest.raises(EmptySequence):
        DualEncoder.init(CFG).encode(q())


def test_batch_matches_single_encoding():
    dual = DualEncoder.init(CFG)
    seqs = [c(1, 2, 3), c(4), c(5, 6, 7, 8, 9, 10)]
    batch = dual.encode_batch(seqs)
    for row, s in zip(batch, seqs):
        np.testing.assert_allclose(row, dual.encode(s), rtol=0, atol=1e-12)


@pytest.mark.parametrize(
    "a, b, expected",
    [([1.0, 0.0], [0.6, 0.8], 0.6), ([1.0, 0.0], [0.0, 1.0], 0.0), ([0.6, 0.8], [0.6, 0.8], 1.0)],
)
def test_score_dual_examples(a, b, expected):
    assert score_dual(np.array(a), np.array(b)) == pytest.approx(expected, abs=1e-9)


def test_score_dual_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        score_dual(np.zeros(2), np.zeros(3))


@given(st.lists(st.integers(1, 29), min_size=1, max_size=10), st.lists(st.integers(1, 29), min_size=1, max_size=10))
@settings(max_examples=40, deadline=None)
def test_score_dual_symmetric_and_bounded(a, b):
    dual = DualEncoder.init(CFG)
    ea, eb = dual.encode(q(*a)), dual.encode(c(*b))
    assert score_dual(ea, eb) == score_dual(eb, ea)
    assert abs(score_dual(ea, eb)) <= 1 + 1e-9


def test_cross_layout_restarts_code_positions():
    ids, pos = cross_layout(q(7, 8), c(9, 10, 11))
    assert ids == [2, 7, 8, 3, 9, 10, 11]
    assert pos == [0, 1, 2, 3, 0, 1, 2]


def test_cross_head_dominates():
    cross = CrossEncoder.init(CFG)
    cross.params.head_w[:] = 0.0
    cross.params.head_b = np.array(0.7)
    assert score_cross(cross, q(1, 2), c(3, 4, 5)) == pytest.approx(0.7, abs=1e-15)


def test_cross_code_permutation_changes_score():
    cross = CrossEncoder.init(ModelConfig(d=4, vocab_size=30, max_pos=40, seed=5))
    scores = {cross.score(q(1, 2), c(*perm)) for perm in itertools.permutations((3, 4, 5))}
    assert len(scores) > 1


def test_cross_deterministic_and_batched():
    cross = CrossEncoder.init(CFG)
    pairs = [(q(1, 2), c(3)), (q(4), c(5, 6, 7, 8))]
    batch = cross.score_batch(pairs)
    assert [cross.score(*p) for p in pairs] == pytest.approx(batch.tolist(), abs=1e-12)


def test_cross_too_long():
    cross = CrossEncoder.init(ModelConfig(d=4, vocab_size=30, max_pos=6))
    with pytest.raises(SequenceTooLong):
        cross.score(q(1, 2), c(3, 4, 5))


def test_cross_capability_witness():
    """Some pair scoring needs cross interaction: a product-form score has rank at most d."""
    d, n = 2, 6
    cross = CrossEncoder.init(ModelConfig(d=d, vocab_size=20, max_pos=8, seed=11))
    rng = np.random.default_rng(0)
    for _, t in cross.params.named():
        if t.ndim:
            t[...] = rng.normal(size=t.shape)
    queries = [q(4 + i) for i in range(n)]
    codes = [c(4 + j) for j in range(n)]
    scores = np.array([[cross.score(qi, cj) for cj in codes] for qi in queries])
    # any dual-encoder score matrix is E_q @ E_c.T, rank <= d
    assert np.linalg.matrix_rank(scores, tol=1e-4) > d


def test_forward_counters_track_kinds():
    counters = ForwardCounters()
    dual = DualEncoder.init(CFG)
    dual.counters = counters
    dual.encode_batch([q(1), c(2), c(3)])
    assert (counters.dual_query_forwards, counters.dual_code_forwards) == (1, 2)
    cross = CrossEncoder.init(CFG)
    cross.counters = counters
    cross.score_batch([(q(1), c(2))] * 4)
    assert counters.cross_forwards == 4 and counters.dual_forwards == 3


def test_encoder_checkpoint_roundtrip(tmp_path):
    dual = DualEncoder.init(CFG, normalize=False)
    raw = dual.save(tmp_path / "d.ckpt")
    loaded = load_encoder(tmp_path / "d.ckpt")
    assert isinstance(loaded, DualEncoder) and loaded.normalize is False
    assert loaded.to_bytes() == raw
    cross = CrossEncoder.init(CFG)
    assert load_encoder(cross.to_bytes()).to_bytes() == cross.to_bytes()


def test_unknown_component_rejected(tmp_path):
    raw = save_checkpoint(tmp_path / "x.ckpt", init_params(CFG), CFG, "mystery")
    with pytest.raises(FormatError):
        load_encoder(raw)
