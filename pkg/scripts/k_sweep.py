"""MRR and serving latency of the R2PS cascade for a range of retrieval depths k.

    python scripts/k_sweep.py --ks 1,5,10,20,50 --out sweep.csv
"""

from __future__ import annotations

import argparse

from codecascade.cascade import Engine
from codecascade.corpus import build_vocab, text_to_ids, tokenize
from codecascade.evaluation import SWEEP_HEADER, k_sweep, write_csv
from codecascade.index import build_index
from codecascade.neural import ModelConfig
from codecascade.synth import SyntheticSpec, synth_corpus
from codecascade.training import PsConfig, TrainingConfig, examples_from_pairs, train_cross, train_dual


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ks", default="1,5,10,20,50")
    ap.add_argument("--pairs", type=int, default=300)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--fusion", choices=["cross_only", "mean_dual_cross"], default="cross_only")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--out")
    args = ap.parse_args()

    corpus = synth_corpus(SyntheticSpec(n_pairs=args.pairs))
    vocab = build_vocab([tokenize(p.query, "query") for p in corpus.train] + [tokenize(c) for _, c in corpus.codebase])
    examples = examples_from_pairs(corpus.train, vocab)
    model = ModelConfig(d=args.d, vocab_size=len(vocab))
    cfg = TrainingConfig(epochs=args.epochs)
    dual, _ = train_dual(examples, model, cfg)
    cross, _ = train_cross(examples, dual, model, cfg, PsConfig())
    codes = {cid: text_to_ids(code, "code", vocab) for cid, code in corpus.codebase}
    engine = Engine(vocab, dual, build_index(list(codes.items()), dual), cross, codes)

    rows = k_sweep(corpus.test, engine, [int(k) for k in args.ks.split(",")], args.fusion, args.repeats)
    if args.out:
        write_csv(args.out, SWEEP_HEADER, rows)
    print(",".join(SWEEP_HEADER))
    for r in rows:
        print(f"{r.k},{r.mrr:.4f},{r.mean_latency_ms:.3f},{r.median_latency_ms:.3f}")


if __name__ == "__main__":
    main()
