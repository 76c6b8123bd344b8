import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codecascade.corpus import IdSequence
from codecascade.encoders import CrossEncoder, DualEncoder
from codecascade.errors import InsufficientCandidates, NonFiniteScore, StartBeyondCorpus
from codecascade.neural import ModelConfig, grad_check
from codecascade.training import (
    Adam,
    Example,
    PsConfig,
    TrainingBatch,
    TrainingConfig,
    cross_in_batch_loss_and_grads,
    cross_loss_and_grads,
    dual_loss_and_grads,
    in_batch_negatives,
    info_nce,
    info_nce_rows,
    ps_candidates,
    ps_sample,
    train_cross,
    train_dual,
    train_rr_joint,
)


@pytest.mark.parametrize(
    "pos, negs, tau, expected",
    [(0.0, [0.0, 0.0, 0.0], 1.0, math.log(4)), (5.0, [], 1.0, 0.0), (1.0, [0.0], 0.5, 0.126928)],
)
def test_info_nce_examples(pos, negs, tau, expected):
    assert info_nce(pos, negs, tau) == pytest.approx(expected, abs=1e-6)


def test_info_nce_rejects_non_finite():
    with pytest.raises(NonFiniteScore):
        info_nce(float("nan"), [0.0], 1.0)
    with pytest.raises(NonFiniteScore):
        info_nce(0.0, [float("inf")], 1.0)


scores = st.floats(-50, 50, allow_nan=False)


@given(scores, st.lists(scores, max_size=10), st.floats(0.01, 5))
def test_info_nce_non_negative(pos, negs, tau):
    assert info_nce(pos, negs, tau) >= 0.0


@given(scores, st.lists(scores, max_size=10), st.floats(0.05, 5), st.floats(-100, 100))
def test_info_nce_shift_invariant(pos, negs, tau, shift):
    a = info_nce(pos, negs, tau)
    b = info_nce(pos + shift, [n + shift for n in negs], tau)
    assert abs(a - b) <= 1e-9 * max(1.0, a)


@given(st.lists(scores, min_size=1, max_size=8), st.floats(0.1, 5), scores, st.floats(0.01, 10))
def test_info_nce_decreases_in_positive(negs, tau, pos, delta):
    assert info_nce(pos + delta, negs, tau) <= info_nce(pos, negs, tau)


def test_info_nce_rows_matches_scalar_and_finite_difference():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(3, 4))
    target = np.array([0, 2, 3])
    loss, grad = info_nce_rows(logits, target, 0.3)
    expected = np.mean([info_nce(row[t], np.delete(row, t), 0.3) for row, t in zip(logits, target)])
    assert loss == pytest.approx(expected, abs=1e-12)
    eps = 1e-6
    for i, j in [(0, 0), (1, 3), (2, 3)]:
        up, down = logits.copy(), logits.copy()
        up[i, j] += eps
        down[i, j] -= eps
        fd = (info_nce_rows(up, target, 0.3)[0] - info_nce_rows(down, target, 0.3)[0]) / (2 * eps)
        assert grad[i, j] == pytest.approx(fd, abs=1e-8)


def _ex(i, code_id=None):
    return Example(IdSequence((i,), "query"), IdSequence((i, i + 1), "code"), i if code_id is None else code_id)


def test_in_batch_negatives_counts():
    items = in_batch_negatives([_ex(4), _ex(5), _ex(6)])
    assert [len(it.negatives) for it in items] == [2, 2, 2]
    assert items[0].negative_ids == [5, 6]


def test_in_batch_keeps_duplicate_text():
    a, b = _ex(4, code_id=1), _ex(4, code_id=2)
    items = in_batch_negatives([a, b])
    assert items[0].negatives == [b.code] and items[0].positive == b.code


def test_in_batch_needs_two():
    with pytest.raises(ValueError):
        in_batch_negatives([_ex(4)])


def test_ps_window_example():
    ranking = [7, 2, 9, 1, 4]
    cfg = PsConfig(start_rank=1, window=3, n_neg=2)
    assert ps_candidates(9, ranking, cfg) == [7, 2, 1]
    rng = np.random.default_rng(0)
    for _ in range(50):
        draw = ps_sample(9, ranking, cfg, rng)
        assert len(set(draw)) == 2 and set(draw) <= {7, 2, 1}


def test_ps_full_window_is_deterministic():
    cfg = PsConfig(start_rank=2, window=2, n_neg=2)
    assert ps_sample(9, [7, 2, 9, 1, 4], cfg, np.random.default_rng(0)) == [2, 1]


def test_ps_start_beyond_corpus():
    with pytest.raises(StartBeyondCorpus):
        ps_sample(1, [1, 2, 3, 4, 5], PsConfig(start_rank=10, window=3, n_neg=1), np.random.default_rng(0))


def test_ps_insufficient_candidates():
    with pytest.raises(InsufficientCandidates):
        ps_sample(1, [1, 2, 3], PsConfig(start_rank=2, window=5, n_neg=3), np.random.default_rng(0))


@given(st.permutations(list(range(20))), st.integers(0, 19), st.integers(1, 10), st.integers(1, 8), st.integers(0, 99))
@settings(max_examples=60, deadline=None)
def test_ps_sample_properties(ranking, gold, start, window, seed):
    cfg = PsConfig(start_rank=start, window=window, n_neg=min(window, 3))
    window_ids = ps_candidates(gold, ranking, cfg)
    try:
        draw = ps_sample(gold, ranking, cfg, np.random.default_rng(seed))
    except InsufficientCandidates:
        assert len(window_ids) < cfg.n_neg
        return
    assert gold not in draw and set(draw) <= set(window_ids) and len(set(draw)) == len(draw)


def test_ps_sample_uniform_within_three_sigma():
    ranking = list(range(1, 12))
    cfg = PsConfig(start_rank=1, window=10, n_neg=3)
    rng = np.random.default_rng(123)
    counts = np.zeros(12)
    n = 10_000
    for _ in range(n):
        counts[ps_sample(1, ranking, cfg, rng)] += 1
    p = cfg.n_neg / cfg.window
    sigma = math.sqrt(n * p * (1 - p))
    assert counts[1] == 0
    assert np.all(np.abs(counts[2:] - n * p) <= 3 * sigma)


TINY = ModelConfig(d=8, vocab_size=50, max_pos=32, seed=4)


def check_params(cross=False, scale=10.0):
    """Random d=8 model at U[-1, 1]; at init scale attention gradients sit below finite-difference roundoff."""
    params = (CrossEncoder if cross else DualEncoder).init(TINY).params
    for _, t in params.named():
        t *= scale
    return params


def _batch(rng, b=4):
    out = []
    for i in range(b):
        qi = tuple(rng.integers(4, 50, size=int(rng.integers(2, 5))).tolist())
        ci = tuple(rng.integers(4, 50, size=int(rng.integers(3, 7))).tolist())
        out.append(Example(IdSequence(qi, "query"), IdSequence(ci, "code"), i))
    return out


@pytest.mark.parametrize("normalize", [True, False])
def test_dual_gradient_check(normalize):
    batch = _batch(np.random.default_rng(0))

    def fn(params):
        return dual_loss_and_grads(DualEncoder(params, TINY, normalize), batch, 0.5)

    assert grad_check(check_params(), fn, eps=1e-5) < 1e-4


def test_cross_gradient_checks():
    batch = _batch(np.random.default_rng(1))
    items = [TrainingBatch(ex.query, ex.code, [o.code for o in batch if o is not ex][:2]) for ex in batch]
    params = check_params(cross=True)
    assert grad_check(params, lambda p: cross_loss_and_grads(CrossEncoder(p, TINY), items, 0.5), eps=1e-5) < 1e-4
    assert grad_check(params, lambda p: cross_in_batch_loss_and_grads(CrossEncoder(p, TINY), batch, 0.5), eps=1e-5) < 1e-4


def test_doubling_upstream_gradient_doubles_every_entry():
    rng = np.random.default_rng(2)
    batch = _batch(rng)
    cross = CrossEncoder.init(TINY)
    _, cache = cross.forward([(ex.query, ex.code) for ex in batch])
    ds = rng.normal(size=len(batch))
    once, twice = cross.params.zeros_like(), cross.params.zeros_like()
    cross.backward(cache, ds, once)
    cross.backward(cache, 2 * ds, twice)
    for (name, a), (_, b) in zip(once.named(), twice.named()):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-15, err_msg=name)


def test_adam_linear_decay():
    params = DualEncoder.init(TINY).params
    opt = Adam(params, 1e-3, total_steps=4)
    lrs = []
    for _ in range(4):
        lrs.append(opt.current_lr())
        opt.step(params.zeros_like())
    assert lrs == pytest.approx([1e-3, 7.5e-4, 5e-4, 2.5e-4])
    assert opt.current_lr() == 0.0


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(tau=0)
    with pytest.raises(ValueError):
        TrainingConfig(batch_size=1)
    with pytest.raises(ValueError):
        PsConfig(window=2, n_neg=3)


def _cfg(small_vocab, d=16):
    return ModelConfig(d=d, vocab_size=len(small_vocab), seed=0)


def test_train_dual_zero_epochs_is_init(small_examples, small_vocab):
    cfg = _cfg(small_vocab)
    dual, log = train_dual(small_examples, cfg, TrainingConfig(epochs=0))
    assert dual.params.allclose(DualEncoder.init(cfg).params) and log.epoch_losses == []


def test_train_dual_loss_decreases_and_is_deterministic(small_examples, small_vocab):
    cfg = _cfg(small_vocab)
    tc = TrainingConfig(epochs=10, batch_size=8, lr=3e-3)
    a, log = train_dual(small_examples, cfg, tc)
    b, _ = train_dual(small_examples, cfg, tc)
    assert log.epoch_losses[-1] < log.epoch_losses[0]
    assert a.to_bytes() == b.to_bytes()


def test_train_cross_zero_negatives_is_noop(small_examples, small_vocab):
    cfg = _cfg(small_vocab)
    dual, _ = train_dual(small_examples, cfg, TrainingConfig(epochs=1, batch_size=8))
    cross, log = train_cross(small_examples, dual, cfg, TrainingConfig(epochs=2), PsConfig(n_neg=0))
    init = CrossEncoder.init(ModelConfig(cfg.d, cfg.vocab_size, cfg.max_pos, cfg.seed + 1))
    assert cross.params.allclose(init.params) and log.epoch_losses == [0.0, 0.0]


def test_train_cross_loss_decreases_and_is_deterministic(small_examples, small_vocab):
    cfg = _cfg(small_vocab, d=8)
    dual, _ = train_dual(small_examples, cfg, TrainingConfig(epochs=3, batch_size=8))
    tc = TrainingConfig(epochs=6, batch_size=8, lr=1e-2)
    ps = PsConfig(start_rank=1, window=20, n_neg=4)
    a, log = train_cross(small_examples, dual, cfg, tc, ps)
    b, _ = train_cross(small_examples, dual, cfg, tc, ps)
    assert log.epoch_losses[-1] < log.epoch_losses[0]
    assert a.to_bytes() == b.to_bytes()


def test_rr_joint_dual_half_matches_train_dual(small_examples, small_vocab):
    cfg = _cfg(small_vocab, d=8)
    tc = TrainingConfig(epochs=2, batch_size=8)
    dual, cross, log = train_rr_joint(small_examples, cfg, tc)
    alone, _ = train_dual(small_examples, cfg, tc)
    assert dual.to_bytes() == alone.to_bytes()
    dual2, cross2, _ = train_rr_joint(small_examples, cfg, tc)
    assert cross.to_bytes() == cross2.to_bytes()
    assert len(log.cross_epoch_losses) == 2


def test_rr_joint_zero_epochs(small_examples, small_vocab):
    cfg = _cfg(small_vocab, d=8)
    dual, cross, _ = train_rr_joint(small_examples, cfg, TrainingConfig(epochs=0))
    assert dual.params.allclose(DualEncoder.init(cfg).params)
