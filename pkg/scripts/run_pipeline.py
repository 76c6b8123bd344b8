"""Train dual, RR and R2PS on a synthetic corpus and print held-out MRR for each.

    python scripts/run_pipeline.py --pairs 300 --d 64 --epochs 10
"""

from __future__ import annotations

import argparse
import json
import logging
import time

from codecascade.cascade import CascadeConfig, Engine
from codecascade.corpus import build_vocab, text_to_ids, tokenize
from codecascade.evaluation import evaluate
from codecascade.index import build_index
from codecascade.neural import ModelConfig
from codecascade.synth import SyntheticSpec, synth_corpus
from codecascade.training import PsConfig, TrainingConfig, examples_from_pairs, train_cross, train_dual, train_rr_joint


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=300)
    ap.add_argument("--vocab-size", type=int, default=1000)
    ap.add_argument("--overlap", type=float, default=0.8)
    ap.add_argument("--data-seed", type=int, default=42)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--cross-lr", type=float, help="learning rate for the cross-encoder (default --lr)")
    ap.add_argument("--tau", type=float, default=0.05)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--ps-n-neg", type=int, default=32)
    ap.add_argument("--window", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    corpus = synth_corpus(
        SyntheticSpec(n_pairs=args.pairs, vocab_size=args.vocab_size, overlap=args.overlap, seed=args.data_seed)
    )
    vocab = build_vocab([tokenize(p.query, "query") for p in corpus.train] + [tokenize(c) for _, c in corpus.codebase])
    examples = examples_from_pairs(corpus.train, vocab)
    codes = {cid: text_to_ids(code, "code", vocab) for cid, code in corpus.codebase}
    model = ModelConfig(d=args.d, vocab_size=len(vocab), seed=args.seed)
    dual_cfg = TrainingConfig(tau=args.tau, epochs=args.epochs, lr=args.lr, seed=args.seed)
    cross_cfg = TrainingConfig(tau=args.tau, epochs=args.epochs, lr=args.cross_lr or args.lr, seed=args.seed)
    ps = PsConfig(window=args.window, n_neg=args.ps_n_neg)

    def engine(dual, cross=None):
        return Engine(vocab, dual, build_index(list(codes.items()), dual), cross, codes)

    results, seconds = {}, {}
    t = time.perf_counter()
    dual, _ = train_dual(examples, model, dual_cfg)
    seconds["dual"] = time.perf_counter() - t
    results["dual"] = evaluate(corpus.test, "dual", engine(dual)).mrr

    t = time.perf_counter()
    rr_dual, rr_cross, _ = train_rr_joint(examples, model, cross_cfg)
    seconds["rr"] = time.perf_counter() - t
    t = time.perf_counter()
    ps_cross, _ = train_cross(examples, dual, model, cross_cfg, ps)
    seconds["r2ps_cross"] = time.perf_counter() - t

    for fusion in ("cross_only", "mean_dual_cross"):
        cfg = CascadeConfig(k=args.k, fusion=fusion)
        results[f"rr_{fusion}"] = evaluate(corpus.test, "rr", engine(rr_dual, rr_cross), cfg).mrr
        results[f"r2ps_{fusion}"] = evaluate(corpus.test, "rr", engine(dual, ps_cross), cfg).mrr

    print(json.dumps({"mrr": results, "train_seconds": seconds, "args": vars(args)}, indent=2))


if __name__ == "__main__":
    main()
