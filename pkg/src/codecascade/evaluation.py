"""MRR evaluation, the k trade-off sweep, and single-query latency benchmarking."""

from __future__ import annotations

import csv
import json
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

from .cascade import CascadeConfig, Engine, search, search_cross_exhaustive
from .corpus import RawPair, Vocabulary, build_vocab, encode_ids, tokenize
from .encoders import CrossEncoder, DualEncoder
from .errors import EmptyEvaluation, MissingGold
from .index import build_index
from .neural import ModelConfig
from .synth import SyntheticSpec, synth_corpus

Mode = Literal["dual", "rr", "cross_exhaustive"]
MODES: tuple[Mode, ...] = ("dual", "rr", "cross_exhaustive")


def mrr(ranks: Sequence[int]) -> float:
    """Mean reciprocal rank of 1-based gold ranks."""
    if len(ranks) == 0:
        raise EmptyEvaluation("no ranks to average")
    if any(r < 1 for r in ranks):
        raise ValueError("ranks are 1-based")
    return float(np.mean([1.0 / r for r in ranks]))


@dataclass
class EvalReport:
    mode: str
    ranks: list[int]
    mrr: float
    n_queries: int
    k: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def gold_ranks(pairs: Sequence[RawPair], mode: Mode, engine: Engine, cfg: CascadeConfig = CascadeConfig()) -> list[int]:
    known = set(engine.index.ids.tolist())
    ranks = []
    for pair in pairs:
        if pair.id not in known:
            raise MissingGold(pair.id)
        if mode == "cross_exhaustive":
            result = search_cross_exhaustive(pair.query, engine)
        else:
            result = search(pair.query, engine, cfg if mode == "rr" else CascadeConfig(k=0))
        ranks.append(result.rank_of(pair.id))
    return ranks


def evaluate(
    pairs: Sequence[RawPair], mode: Mode, engine: Engine, cfg: CascadeConfig = CascadeConfig()
) -> EvalReport:
    """Rank each query's gold code among all codes in the index and average 1/rank."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not pairs:
        raise EmptyEvaluation("no test pairs")
    ranks = gold_ranks(pairs, mode, engine, cfg)
    return EvalReport(mode, ranks, mrr(ranks), len(ranks), cfg.k if mode == "rr" else None)


# --------------------------------------------------------------------------
# k sweep


@dataclass
class SweepRow:
    k: int
    mrr: float
    mean_latency_ms: float
    median_latency_ms: float


SWEEP_HEADER = ["k", "mrr", "mean_latency_ms", "median_latency_ms"]


def k_sweep(
    pairs: Sequence[RawPair],
    engine: Engine,
    ks: Sequence[int],
    fusion: str = "cross_only",
    repeats: int = 3,
    limit: int = 10,
) -> list[SweepRow]:
    """MRR and per-query serving latency for each retrieval depth ``k``.

    Latency is the median over ``repeats`` of the mean serving time of every
    query (``limit`` hits returned, as in the HTTP endpoint).
    """
    if not ks:
        raise ValueError("ks must be non-empty")
    rows = []
    for k in ks:
        cfg = CascadeConfig(k=k, fusion=fusion)
        report = evaluate(pairs, "rr", engine, cfg)
        rep_means, per_query = [], []
        for _ in range(repeats):
            times = _time_queries([p.query for p in pairs], lambda q: search(q, engine, cfg, limit))
            rep_means.append(statistics.fmean(times))
            per_query.extend(times)
        rows.append(SweepRow(k, report.mrr, statistics.median(rep_means), statistics.median(per_query)))
    return rows


def write_csv(path: str | Path, header: list[str], rows: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            values = asdict(row) if hasattr(row, "__dataclass_fields__") else row
            writer.writerow([values[h] for h in header] if isinstance(values, dict) else values)


# --------------------------------------------------------------------------
# latency benchmark


def _time_queries(queries: Sequence[str], run: Callable[[str], object]) -> list[float]:
    times = []
    for q in queries:
        t0 = time.perf_counter()
        run(q)
        times.append((time.perf_counter() - t0) * 1e3)
    return times


@dataclass
class BenchRow:
    size: int
    mode: str
    mean_ms: float
    median_ms: float
    p95_ms: float
    rep_median_min_ms: float
    rep_median_max_ms: float
    n_queries: int
    repeats: int


BENCH_HEADER = [
    "size",
    "mode",
    "mean_ms",
    "median_ms",
    "p95_ms",
    "rep_median_min_ms",
    "rep_median_max_ms",
    "n_queries",
    "repeats",
]


@dataclass
class BenchReport:
    rows: list[BenchRow]
    machine: str = field(default_factory=lambda: f"{platform.node()} {platform.machine()} {platform.python_version()}")

    def row(self, size: int, mode: str) -> BenchRow:
        for r in self.rows:
            if r.size == size and r.mode == mode:
                return r
        raise KeyError((size, mode))

    def ratio(self, mode: str, small: int, large: int) -> float:
        return self.row(large, mode).median_ms / self.row(small, mode).median_ms


def bench_engine(
    size: int, base: SyntheticSpec, model: ModelConfig, vocab: Vocabulary | None = None, pairs=None
) -> tuple[Engine, list[RawPair]]:
    """Untrained toy encoders over a synthetic codebase of ``size`` codes."""
    if pairs is None:
        pairs = synth_corpus(SyntheticSpec(**{**asdict(base), "n_pairs": size})).train
    if vocab is None:
        vocab = build_vocab([tokenize(p.code) for p in pairs] + [tokenize(p.query, "query") for p in pairs])
    model = ModelConfig(model.d, len(vocab), model.max_pos, model.seed)
    dual = DualEncoder.init(model)
    cross = CrossEncoder.init(ModelConfig(model.d, len(vocab), model.max_pos, model.seed + 1))
    codes = {p.id: encode_ids(tokenize(p.code), vocab) for p in pairs}
    index = build_index(list(codes.items()), dual)
    return Engine(vocab, dual, index, cross, codes), pairs


def bench_latency(
    modes: Sequence[Mode] = MODES,
    sizes: Sequence[int] = (1000, 10000),
    n_queries: int = 100,
    repeats: int = 3,
    k: int = 10,
    limit: int = 10,
    base: SyntheticSpec = SyntheticSpec(query_len=6, distractor_len=10, vocab_size=5000),
    model: ModelConfig = ModelConfig(d=32),
) -> BenchReport:
    """Time one query at a time per mode and codebase size; index builds are not timed."""
    largest = synth_corpus(SyntheticSpec(**{**asdict(base), "n_pairs": max(sizes)}))
    everything = largest.train + largest.test
    queries = [p.query for p in everything[:n_queries]]
    rows = []
    for size in sizes:
        engine, _ = bench_engine(size, base, model, pairs=everything[:size])
        runners = {
            "dual": lambda q: search(q, engine, CascadeConfig(k=0), limit),
            "rr": lambda q: search(q, engine, CascadeConfig(k=k), limit),
            "cross_exhaustive": lambda q: search_cross_exhaustive(q, engine, limit),
        }
        for mode in modes:
            run = runners[mode]
            run(queries[0])  # warm-up, not recorded
            rep_medians, all_times = [], []
            for _ in range(repeats):
                times = _time_queries(queries, run)
                rep_medians.append(statistics.median(times))
                all_times.extend(times)
            rows.append(
                BenchRow(
                    size=size,
                    mode=mode,
                    mean_ms=statistics.fmean(all_times),
                    median_ms=statistics.median(rep_medians),
                    p95_ms=float(np.percentile(all_times, 95)),
                    rep_median_min_ms=min(rep_medians),
                    rep_median_max_ms=max(rep_medians),
                    n_queries=len(queries),
                    repeats=repeats,
                )
            )
    return BenchReport(rows)
