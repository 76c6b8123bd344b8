"""Contrastive training: InfoNCE, in-batch and ranking-based hard negatives, training loops.

PRNG consumption schedule (fixed so runs are reproducible and so the dual
half of :func:`train_rr_joint` matches :func:`train_dual`):

* dual parameters are initialized from ``ModelConfig.seed``;
* cross parameters from ``ModelConfig.seed + 1``;
* epoch shuffles draw from ``Generator(PCG64(cfg.seed))``, one permutation
  per epoch and nothing else;
* hard-negative draws use a separate ``Generator(PCG64(cfg.seed + 7919))``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import IdSequence, RawPair, Vocabulary, text_to_ids
from .encoders import CrossEncoder, DualEncoder
from .errors import InsufficientCandidates, NonFiniteScore, StartBeyondCorpus
from .index import EmbeddingIndex, full_ranking
from .neural import EncoderParams, ModelConfig

log = logging.getLogger(__name__)

PS_SEED_OFFSET = 7919


@dataclass(frozen=True)
class TrainingConfig:
    tau: float = 0.05
    n_neg: int = 32
    batch_size: int = 32
    epochs: int = 10
    lr: float = 1e-3
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.n_neg < 0 or self.epochs < 0 or self.lr < 0:
            raise ValueError(f"invalid training config {self}")
        if self.batch_size < 2:
            raise ValueError("in-batch sampling needs batch_size >= 2")


# Learning rate used for 125M-parameter pre-trained backbones; not the toy default.
BACKBONE_LEARNING_RATE = 2e-5


@dataclass(frozen=True)
class PsConfig:
    start_rank: int = 1
    window: int = 100
    n_neg: int = 32

    def __post_init__(self):
        if self.start_rank < 1:
            raise ValueError("start_rank is 1-based")
        if self.n_neg < 0 or self.window < self.n_neg:
            raise ValueError("window must hold at least n_neg candidates")


@dataclass
class Example:
    query: IdSequence
    code: IdSequence
    code_id: int


def examples_from_pairs(pairs: Sequence[RawPair], vocab: Vocabulary) -> list[Example]:
    return [Example(text_to_ids(p.query, "query", vocab), text_to_ids(p.code, "code", vocab), p.id) for p in pairs]


@dataclass
class TrainingBatch:
    query: IdSequence
    positive: IdSequence
    negatives: list[IdSequence]
    positive_id: int = -1
    negative_ids: list[int] = field(default_factory=list)


# --------------------------------------------------------------------------
# loss


def _check_finite(pos, negs) -> None:
    if not math.isfinite(pos) or not all(math.isfinite(n) for n in negs):
        raise NonFiniteScore("InfoNCE scores must be finite")


def info_nce(pos: float, negs: Sequence[float], tau: float) -> float:
    """-log softmax of the positive logit among ``[pos, *negs]`` at temperature ``tau``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    _check_finite(pos, negs)
    logits = np.asarray([pos, *negs], dtype=np.float64) / tau
    top = logits.max()
    return float(top + np.log(np.exp(logits - top).sum()) - logits[0])


def info_nce_rows(logits: np.ndarray, target: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Mean InfoNCE over rows of raw scores and its gradient w.r.t. those scores.

    Row ``i`` treats ``logits[i, target[i]]`` as the positive and every other
    column as a negative.
    """
    if not np.all(np.isfinite(logits)):
        raise NonFiniteScore("InfoNCE scores must be finite")
    z = logits / tau
    top = z.max(axis=1, keepdims=True)
    e = np.exp(z - top)
    total = e.sum(axis=1, keepdims=True)
    rows = np.arange(len(z))
    losses = (top[:, 0] + np.log(total[:, 0])) - z[rows, target]
    probs = e / total
    probs[rows, target] -= 1.0
    return float(losses.mean()), probs / (tau * len(z))


# --------------------------------------------------------------------------
# negative sampling


def in_batch_negatives(batch: Sequence[Example]) -> list[TrainingBatch]:
    """Every other code in the batch is a negative; exclusion is by position, not text."""
    if len(batch) < 2:
        raise ValueError("in-batch negatives need at least 2 pairs")
    out = []
    for j, ex in enumerate(batch):
        others = [b for i, b in enumerate(batch) if i != j]
        out.append(
            TrainingBatch(ex.query, ex.code, [b.code for b in others], ex.code_id, [b.code_id for b in others])
        )
    return out


def ps_candidates(gold_id: int, ranking: Sequence[int], cfg: PsConfig) -> list[int]:
    """Rank window ``[s, s + W)`` of the ranking after removing the gold code."""
    rest = [c for c in ranking if c != gold_id]
    if cfg.start_rank > len(rest):
        raise StartBeyondCorpus(f"start rank {cfg.start_rank} beyond {len(rest)} non-gold codes")
    return rest[cfg.start_rank - 1 : cfg.start_rank - 1 + cfg.window]


def ps_sample(gold_id: int, ranking: Sequence[int], cfg: PsConfig, rng: np.random.Generator) -> list[int]:
    """Draw ``cfg.n_neg`` distinct hard negatives uniformly from the rank window."""
    window = ps_candidates(gold_id, ranking, cfg)
    if len(window) < cfg.n_neg:
        raise InsufficientCandidates(f"window holds {len(window)} codes, need {cfg.n_neg}")
    if cfg.n_neg == len(window):
        return list(window)
    picks = rng.choice(len(window), size=cfg.n_neg, replace=False)
    return [window[i] for i in picks]


def dual_rankings(dual: DualEncoder, queries: Sequence[IdSequence], code_ids: Sequence[int], codes: Sequence[IdSequence]):
    """Full descending-score ranking of ``code_ids`` for each query (ties by ascending id)."""
    q = dual.encode_batch(list(queries))
    c = dual.encode_batch(list(codes))
    ids = np.asarray(code_ids)
    scores = q @ c.T
    return [ids[np.lexsort((ids, -row))].tolist() for row in scores]


# --------------------------------------------------------------------------
# objectives


def dual_loss_and_grads(dual: DualEncoder, batch: Sequence[Example], tau: float) -> tuple[float, EncoderParams]:
    """In-batch InfoNCE over dual scores; queries and codes go through the shared encoder."""
    grads = dual.params.zeros_like()
    eq, qcache = dual.forward([ex.query for ex in batch])
    ec, ccache = dual.forward([ex.code for ex in batch])
    scores = eq @ ec.T
    loss, d_scores = info_nce_rows(scores, np.arange(len(batch)), tau)
    dual.backward(qcache, d_scores @ ec, grads)
    dual.backward(ccache, d_scores.T @ eq, grads)
    return loss, grads


def cross_loss_and_grads(cross: CrossEncoder, items: Sequence[TrainingBatch], tau: float) -> tuple[float, EncoderParams]:
    """InfoNCE over cross scores of (q, c+) and (q, c-_i); every query in one padded batch."""
    grads = cross.params.zeros_like()
    m = len(items[0].negatives)
    if any(len(it.negatives) != m for it in items):
        raise ValueError("every query needs the same number of negatives")
    if m == 0:
        return 0.0, grads
    pairs = [(it.query, c) for it in items for c in (it.positive, *it.negatives)]
    scores, cache = cross.forward(pairs)
    loss, d_logits = info_nce_rows(scores.reshape(len(items), m + 1), np.zeros(len(items), dtype=int), tau)
    cross.backward(cache, d_logits.reshape(-1), grads)
    return loss, grads


def cross_in_batch_loss_and_grads(cross: CrossEncoder, batch: Sequence[Example], tau: float):
    """Cross-encoder InfoNCE with in-batch negatives: scores all b*b (query, code) pairs."""
    grads = cross.params.zeros_like()
    pairs = [(qi.query, cj.code) for qi in batch for cj in batch]
    scores, cache = cross.forward(pairs)
    b = len(batch)
    loss, d_logits = info_nce_rows(scores.reshape(b, b), np.arange(b), tau)
    cross.backward(cache, d_logits.reshape(-1), grads)
    return loss, grads


# --------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, params: EncoderParams, lr: float, total_steps: int, b1=0.9, b2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.total_steps = max(total_steps, 1)
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def current_lr(self) -> float:
        # linear decay to 0 over the run
        return self.lr * (1.0 - self.t / self.total_steps)

    def step(self, grads: EncoderParams) -> None:
        lr = self.current_lr()
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        m, v = dict(self.m.named()), dict(self.v.named())
        for name, p in self.params.named():
            g = getattr(grads, name)
            m[name] *= self.b1
            m[name] += (1 - self.b1) * g
            v[name] *= self.b2
            v[name] += (1 - self.b2) * g * g
            p -= lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + self.eps)


# --------------------------------------------------------------------------
# loops


@dataclass
class TrainingLog:
    epoch_losses: list[float] = field(default_factory=list)
    cross_epoch_losses: list[float] = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    # a trailing singleton cannot form in-batch negatives; fold it into the previous batch
    starts = list(range(0, n, batch_size))
    chunks = [order[s : s + batch_size] for s in starts]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def _steps_per_epoch(n: int, batch_size: int) -> int:
    steps = math.ceil(n / batch_size)
    if steps > 1 and n % batch_size == 1:
        steps -= 1
    return steps


def train_dual(
    examples: Sequence[Example],
    model_cfg: ModelConfig,
    cfg: TrainingConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[DualEncoder, TrainingLog]:
    """Train the shared-weight dual-encoder with in-batch negatives."""
    if not examples:
        raise ValueError("dataset is empty")
    if len(examples) < 2 and cfg.epochs > 0:
        raise ValueError("in-batch training needs at least 2 pairs")
    dual = DualEncoder.init(model_cfg, cfg.normalize)
    opt = Adam(dual.params, cfg.lr, cfg.epochs * _steps_per_epoch(len(examples), cfg.batch_size))
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    history = TrainingLog()
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(examples), cfg.batch_size, rng):
            loss, grads = dual_loss_and_grads(dual, [examples[i] for i in idx], cfg.tau)
            opt.step(grads)
            losses.append(loss)
        history.epoch_losses.append(float(np.mean(losses)))
        log.info("dual epoch %d loss %.4f", epoch + 1, history.epoch_losses[-1])
        if on_epoch:
            on_epoch(epoch + 1, history.epoch_losses[-1])
    return dual, history


def cross_model_config(model_cfg: ModelConfig) -> ModelConfig:
    return replace(model_cfg, seed=model_cfg.seed + 1)


def train_cross(
    examples: Sequence[Example],
    dual: DualEncoder,
    model_cfg: ModelConfig,
    cfg: TrainingConfig,
    ps: PsConfig,
    codebase: Sequence[tuple[int, IdSequence]] | None = None,
    index: EmbeddingIndex | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[CrossEncoder, TrainingLog]:
    """Train the cross-encoder on hard negatives drawn from the frozen dual ranking.

    ``codebase`` defaults to the training codes. When a prebuilt ``index`` is
    given its rows are ranked instead of re-encoding the codes. Rankings are
    computed once; the window draws are refreshed every epoch.
    """
    if not examples:
        raise ValueError("dataset is empty")
    if codebase is None:
        codebase = [(ex.code_id, ex.code) for ex in examples]
    code_ids = [cid for cid, _ in codebase]
    by_id = dict(codebase)
    cross = CrossEncoder.init(cross_model_config(model_cfg))
    history = TrainingLog()
    if cfg.epochs == 0 or ps.n_neg == 0:
        # zero negatives: InfoNCE is identically 0 and so is every gradient
        history.epoch_losses = [0.0] * cfg.epochs
        return cross, history

    queries = [ex.query for ex in examples]
    if index is not None:
        rankings = [[h.id for h in full_ranking(index, e)] for e in dual.encode_batch(queries)]
    else:
        rankings = dual_rankings(dual, queries, code_ids, [c for _, c in codebase])
    opt = Adam(cross.params, cfg.lr, cfg.epochs * math.ceil(len(examples) / cfg.batch_size))
    shuffle_rng = np.random.Generator(np.random.PCG64(cfg.seed))
    ps_rng = np.random.Generator(np.random.PCG64(cfg.seed + PS_SEED_OFFSET))
    for epoch in range(cfg.epochs):
        losses = []
        order = shuffle_rng.permutation(len(examples))
        for start in range(0, len(examples), cfg.batch_size):
            items = []
            for i in order[start : start + cfg.batch_size]:
                ex = examples[i]
                neg_ids = ps_sample(ex.code_id, rankings[i], ps, ps_rng)
                items.append(TrainingBatch(ex.query, ex.code, [by_id[c] for c in neg_ids], ex.code_id, neg_ids))
            loss, grads = cross_loss_and_grads(cross, items, cfg.tau)
            opt.step(grads)
            losses.append(loss)
        history.epoch_losses.append(float(np.mean(losses)))
        log.info("cross epoch %d loss %.4f", epoch + 1, history.epoch_losses[-1])
        if on_epoch:
            on_epoch(epoch + 1, history.epoch_losses[-1])
    return cross, history


def train_rr_joint(
    examples: Sequence[Example],
    model_cfg: ModelConfig,
    cfg: TrainingConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[DualEncoder, CrossEncoder, TrainingLog]:
    """Train both encoders on the same in-batch negatives with the losses summed.

    The parameter sets are disjoint, so the summed loss gives the dual-encoder
    exactly the gradients :func:`train_dual` would.
    """
    if not examples:
        raise ValueError("dataset is empty")
    if len(examples) < 2 and cfg.epochs > 0:
        raise ValueError("in-batch training needs at least 2 pairs")
    dual = DualEncoder.init(model_cfg, cfg.normalize)
    cross = CrossEncoder.init(cross_model_config(model_cfg))
    total = cfg.epochs * _steps_per_epoch(len(examples), cfg.batch_size)
    dual_opt = Adam(dual.params, cfg.lr, total)
    cross_opt = Adam(cross.params, cfg.lr, total)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    history = TrainingLog()
    for epoch in range(cfg.epochs):
        dual_losses, cross_losses = [], []
        for idx in _batches(len(examples), cfg.batch_size, rng):
            batch = [examples[i] for i in idx]
            d_loss, d_grads = dual_loss_and_grads(dual, batch, cfg.tau)
            c_loss, c_grads = cross_in_batch_loss_and_grads(cross, batch, cfg.tau)
            dual_opt.step(d_grads)
            cross_opt.step(c_grads)
            dual_losses.append(d_loss)
            cross_losses.append(c_loss)
        history.epoch_losses.append(float(np.mean(dual_losses) + np.mean(cross_losses)))
        history.cross_epoch_losses.append(float(np.mean(cross_losses)))
        log.info("rr epoch %d loss %.4f", epoch + 1, history.epoch_losses[-1])
        if on_epoch:
            on_epoch(epoch + 1, history.epoch_losses[-1])
    return dual, cross, history
