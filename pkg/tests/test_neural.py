import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codecascade.errors import AllMaskedRow, FormatError
from codecascade.neural import (
    EncoderParams,
    ModelConfig,
    attention_forward,
    embed,
    grad_check,
    init_params,
    load_checkpoint,
    save_checkpoint,
)


def test_init_deterministic_and_shapes():
    cfg = ModelConfig(d=8, vocab_size=50, max_pos=16, seed=3)
    a, b = init_params(cfg, with_head=True), init_params(cfg, with_head=True)
    for (name, x), (_, y) in zip(a.named(), b.named()):
        assert x.tobytes() == y.tobytes(), name
    assert a.tok_emb.size == 400
    assert a.pos_emb.shape == (16, 8)
    assert float(a.head_b) == 0.0
    assert all(np.all(np.abs(t) <= 0.1) for _, t in a.named())


def test_init_seed_changes_params():
    a = init_params(ModelConfig(d=8, vocab_size=50, seed=1))
    b = init_params(ModelConfig(d=8, vocab_size=50, seed=2))
    assert np.any(a.tok_emb != b.tok_emb)


def test_dual_params_have_no_head():
    assert init_params(ModelConfig(d=4, vocab_size=10)).head_w is None


def _params(d=4, seed=0):
    return init_params(ModelConfig(d=d, vocab_size=20, max_pos=32, seed=seed), with_head=True)


def test_singleton_attention():
    p = _params()
    h0 = np.random.default_rng(0).normal(size=(1, 4))
    ws = attention_forward(h0, p)
    assert ws.a.tolist() == [[1.0]]
    np.testing.assert_array_equal(ws.h, ws.v)


@given(st.integers(1, 12), st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_rows_are_stochastic(t, seed):
    rng = np.random.default_rng(seed)
    p = _params(seed=seed % 7)
    ws = attention_forward(rng.normal(size=(t, 4)), p)
    np.testing.assert_allclose(ws.a.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_masked_entries_are_exact_zero():
    rng = np.random.default_rng(1)
    mask = np.zeros((5, 5))
    mask[:, 3] = -np.inf
    mask[0, 1] = -np.inf
    ws = attention_forward(rng.normal(size=(5, 4)), _params(), mask)
    assert np.all(ws.a[:, 3] == 0.0) and ws.a[0, 1] == 0.0
    np.testing.assert_allclose(ws.a.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_all_masked_row_raises():
    mask = np.zeros((3, 3))
    mask[1, :] = -np.inf
    with pytest.raises(AllMaskedRow):
        attention_forward(np.ones((3, 4)), _params(), mask)


def block_mask(l, m):
    mask = np.full((l + m, l + m), -np.inf)
    mask[:l, :l] = 0.0
    mask[l:, l:] = 0.0
    return mask


def test_block_mask_equivalence():
    p = _params(d=8)
    rng = np.random.default_rng(5)
    q_ids, c_ids = rng.integers(0, 20, size=(1, 3)), rng.integers(0, 20, size=(1, 6))
    hq = embed(p, q_ids, np.arange(3)[None])[0]
    hc = embed(p, c_ids, np.arange(6)[None])[0]
    joint = attention_forward(np.vstack([hq, hc]), p, block_mask(3, 6))
    sep_q, sep_c = attention_forward(hq, p), attention_forward(hc, p)
    assert np.max(np.abs(joint.h - np.vstack([sep_q.h, sep_c.h]))) < 1e-9
    # the off-diagonal interaction blocks vanish exactly
    assert np.all(joint.a[:3, 3:] == 0) and np.all(joint.a[3:, :3] == 0)


def test_unmasked_concatenation_differs_from_separate():
    p = _params(d=8)
    rng = np.random.default_rng(6)
    hq, hc = rng.normal(size=(3, 8)), rng.normal(size=(4, 8))
    joint = attention_forward(np.vstack([hq, hc]), p)
    sep = np.vstack([attention_forward(hq, p).h, attention_forward(hc, p).h])
    assert np.max(np.abs(joint.h - sep)) > 1e-6


def _quadratic_loss(weights):
    """Loss over every tensor so grad_check has a known analytic answer."""

    def loss_and_grads(params: EncoderParams):
        grads = params.zeros_like()
        total = 0.0
        for name, t in params.named():
            w = weights[name]
            total += float(np.sum(w * t * t))
            setattr(grads, name, 2 * w * t)
        return total, grads

    return loss_and_grads


def test_grad_check_on_known_gradient():
    p = _params(d=4)
    rng = np.random.default_rng(0)
    weights = {name: rng.uniform(0.5, 2.0, size=t.shape) for name, t in p.named()}
    assert grad_check(p, _quadratic_loss(weights), eps=1e-5) < 1e-6


def test_grad_check_detects_zeroed_gradient():
    p = _params(d=4)
    rng = np.random.default_rng(0)
    weights = {name: rng.uniform(0.5, 2.0, size=t.shape) for name, t in p.named()}
    fn = _quadratic_loss(weights)
    _, grads = fn(p)
    grads.w_k[:] = 0.0
    assert grad_check(p, fn, eps=1e-5, analytic=grads) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("eps", [0.0, -1e-5, 1e-2])
def test_grad_check_rejects_bad_eps(eps):
    with pytest.raises(ValueError):
        grad_check(_params(), _quadratic_loss({}), eps=eps)


def test_checkpoint_roundtrip(tmp_path):
    cfg = ModelConfig(d=8, vocab_size=30, max_pos=40, seed=9)
    p = init_params(cfg, with_head=True)
    path = tmp_path / "m.ckpt"
    raw = save_checkpoint(path, p, cfg, "cross")
    assert raw[:8] == b"R2PSMDL1"
    loaded, cfg2, header = load_checkpoint(path)
    assert cfg2 == cfg and header["component"] == "cross"
    for name, t in p.named():
        np.testing.assert_array_equal(getattr(loaded, name), t.astype(np.float32).astype(np.float64))
    again = tmp_path / "again.ckpt"
    assert save_checkpoint(again, loaded, cfg2, "cross") == raw


@pytest.mark.parametrize(
    "corrupt",
    [
        lambda raw: raw[:-3],
        lambda raw: b"R2PSXXX1" + raw[8:],
        lambda raw: raw[:8] + (10**6).to_bytes(4, "little") + raw[12:],
        lambda raw: raw + b"\x00\x00\x00\x00",
        lambda raw: raw[:20],
    ],
)
def test_checkpoint_corruption(tmp_path, corrupt):
    cfg = ModelConfig(d=4, vocab_size=10, max_pos=8)
    raw = save_checkpoint(tmp_path / "m.ckpt", init_params(cfg), cfg, "dual")
    with pytest.raises(FormatError):
        load_checkpoint(corrupt(raw))
