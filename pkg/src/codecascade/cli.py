"""Command-line entry points for the full pipeline.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .app import AppConfig, load_config, load_engine, override, result_payload
from .cascade import CascadeConfig, search
from .corpus import Vocabulary, build_vocab, load_codebase, load_dataset, text_to_ids, tokenize, write_jsonl
from .encoders import DualEncoder, load_encoder
from .errors import CodeCascadeError
from .evaluation import BENCH_HEADER, SWEEP_HEADER, bench_latency, evaluate, k_sweep, write_csv
from .index import build_index, load_index, save_index
from .neural import ModelConfig
from .synth import SyntheticSpec, synth_corpus
from .training import examples_from_pairs, train_cross, train_dual, train_rr_joint

log = logging.getLogger("codecascade")

USAGE_ERROR = 1
DATA_ERROR = 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        args.parser.print_usage(sys.stderr)
        raise UsageError(f"{args.parser.prog}: missing required option(s) {flags}")


def _resolve_paths(args, cfg: AppConfig) -> None:
    """Fill unset path flags from the config file's ``paths`` section."""
    for name, value in asdict(cfg.paths).items():
        if hasattr(args, name) and getattr(args, name) is None:
            setattr(args, name, value)


def _model_cfg(args, cfg: AppConfig, vocab: Vocabulary) -> ModelConfig:
    base = override(cfg.model, d=args.d, max_pos=args.max_pos, seed=args.model_seed)
    return ModelConfig(base.d, len(vocab), base.max_pos, base.seed)


def _training_cfg(args, cfg: AppConfig):
    normalize = None if args.normalize is None else args.normalize == "on"
    return override(
        cfg.training,
        tau=args.tau,
        n_neg=args.n_neg,
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        normalize=normalize,
    )


def _ps_cfg(args, cfg: AppConfig):
    return override(cfg.ps, start_rank=args.start_rank, window=args.window, n_neg=args.ps_n_neg)


def _cascade_cfg(args, cfg: AppConfig):
    return override(cfg.cascade, k=args.k, fusion=args.fusion)


def _engine(args, need_cross: bool):
    _require(args, "vocab", "dual", "index")
    if need_cross:
        _require(args, "cross", "codebase")
    return load_engine(args.vocab, args.dual, args.index, args.codebase, args.cross if need_cross else None)


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg):
    _require(args, "out_dir")
    spec = SyntheticSpec(
        n_pairs=args.pairs,
        vocab_size=args.vocab_size,
        overlap=args.overlap,
        query_len=args.query_len,
        distractor_len=args.distractor_len,
        seed=args.seed,
    )
    corpus = synth_corpus(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "train.jsonl", (asdict(p) for p in corpus.train))
    write_jsonl(out / "test.jsonl", (asdict(p) for p in corpus.test))
    write_jsonl(out / "codebase.jsonl", ({"id": i, "code": c} for i, c in corpus.codebase))
    print(f"wrote {len(corpus.train)} train, {len(corpus.test)} test, {len(corpus.codebase)} codes to {out}")


def cmd_build_vocab(args, cfg):
    _require(args, "train", "out")
    seqs = []
    for pair in load_dataset(args.train, csn=args.csn):
        seqs += [tokenize(pair.query, "query"), tokenize(pair.code, "code")]
    if args.codebase:
        seqs += [tokenize(code, "code") for _, code in load_codebase(args.codebase, csn=args.csn)]
    vocab = build_vocab(seqs, args.min_freq)
    vocab.save(args.out)
    print(f"vocabulary of {len(vocab)} ids written to {args.out}")


def _load_training(args):
    _require(args, "train", "vocab")
    vocab = Vocabulary.load(args.vocab)
    return vocab, examples_from_pairs(load_dataset(args.train, csn=args.csn), vocab)


def _report_epoch(epoch, loss):
    print(f"epoch {epoch}: mean loss {loss:.6f}")


def cmd_train_dual(args, cfg):
    _require(args, "out")
    vocab, examples = _load_training(args)
    dual, _ = train_dual(examples, _model_cfg(args, cfg, vocab), _training_cfg(args, cfg), on_epoch=_report_epoch)
    dual.save(args.out)
    print(f"dual-encoder checkpoint written to {args.out}")


def cmd_train_rr(args, cfg):
    _require(args, "out", "cross_out")
    vocab, examples = _load_training(args)
    dual, cross, _ = train_rr_joint(
        examples, _model_cfg(args, cfg, vocab), _training_cfg(args, cfg), on_epoch=_report_epoch
    )
    dual.save(args.out)
    cross.save(args.cross_out)
    print(f"checkpoints written to {args.out} and {args.cross_out}")


def cmd_train_cross(args, cfg):
    _require(args, "out", "dual")
    vocab, examples = _load_training(args)
    dual = load_encoder(args.dual)
    if not isinstance(dual, DualEncoder):
        raise CodeCascadeError(f"{args.dual} is not a dual-encoder checkpoint")
    index = load_index(args.index) if args.index else None
    codebase = None
    if index is not None:
        _require(args, "codebase")
        codebase = [(cid, text_to_ids(code, "code", vocab)) for cid, code in load_codebase(args.codebase)]
    cross, _ = train_cross(
        examples,
        dual,
        _model_cfg(args, cfg, vocab),
        _training_cfg(args, cfg),
        _ps_cfg(args, cfg),
        codebase=codebase,
        index=index,
        on_epoch=_report_epoch,
    )
    cross.save(args.out)
    print(f"cross-encoder checkpoint written to {args.out}")


def cmd_build_index(args, cfg):
    _require(args, "codebase", "vocab", "dual", "out")
    vocab = Vocabulary.load(args.vocab)
    dual = load_encoder(args.dual)
    if not isinstance(dual, DualEncoder):
        raise CodeCascadeError(f"{args.dual} is not a dual-encoder checkpoint")
    codes = [(cid, text_to_ids(code, "code", vocab)) for cid, code in load_codebase(args.codebase, csn=args.csn)]
    index = build_index(codes, dual)
    save_index(index, args.out)
    print(f"index of {len(index)} x {index.dim} written to {args.out}")


def cmd_search(args, cfg):
    _require(args, "query")
    engine = _engine(args, need_cross=args.cross is not None)
    result = search(args.query, engine, _cascade_cfg(args, cfg), limit=args.limit)
    print(json.dumps(result_payload(args.query, result)))


def cmd_eval(args, cfg):
    _require(args, "test")
    need_cross = args.mode != "dual"
    engine = _engine(args, need_cross=need_cross)
    report = evaluate(load_dataset(args.test, csn=args.csn), args.mode, engine, _cascade_cfg(args, cfg))
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
    print(f"mode={report.mode} queries={report.n_queries} MRR={report.mrr:.6f} (x100: {100 * report.mrr:.2f})")


def cmd_sweep_k(args, cfg):
    _require(args, "test", "ks")
    engine = _engine(args, need_cross=True)
    rows = k_sweep(load_dataset(args.test), engine, args.ks, fusion=_cascade_cfg(args, cfg).fusion, repeats=args.repeats)
    if args.out:
        write_csv(args.out, SWEEP_HEADER, rows)
    print(",".join(SWEEP_HEADER))
    for r in rows:
        print(f"{r.k},{r.mrr:.6f},{r.mean_latency_ms:.4f},{r.median_latency_ms:.4f}")


def cmd_bench(args, cfg):
    extra = {"model": ModelConfig(d=args.d)} if args.d else {}
    report = bench_latency(
        modes=args.modes.split(","),
        sizes=args.sizes,
        n_queries=args.queries,
        repeats=args.repeats,
        k=_cascade_cfg(args, cfg).k,
        **extra,
    )
    if args.out:
        write_csv(args.out, BENCH_HEADER, report.rows)
    print(f"# machine: {report.machine}")
    print(",".join(BENCH_HEADER))
    for r in report.rows:
        print(",".join(str(getattr(r, h)) for h in BENCH_HEADER))


def cmd_serve(args, cfg):
    from .service import make_server

    engine = _engine(args, need_cross=args.cross is not None)
    host = args.host or cfg.host
    port = args.port or cfg.port
    if not 1 <= port <= 65535:
        raise UsageError(f"port {port} outside [1, 65535]")
    server = make_server(engine, _cascade_cfg(args, cfg), host, port)
    print(f"serving on http://{host}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


# --------------------------------------------------------------------------
# parser


def _add_paths(p, *names):
    helps = {
        "vocab": "vocabulary JSON",
        "dual": "dual-encoder checkpoint",
        "cross": "cross-encoder checkpoint",
        "index": "embedding index file",
        "train": "training pairs (JSONL)",
        "test": "test pairs (JSONL)",
        "codebase": "codebase (JSONL)",
    }
    for name in names:
        p.add_argument("--" + name, help=helps[name])


def _add_model(p):
    p.add_argument("--d", type=int, help="embedding dimension")
    p.add_argument("--max-pos", type=int)
    p.add_argument("--model-seed", type=int)


def _add_training(p):
    p.add_argument("--tau", type=float)
    p.add_argument("--n-neg", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", choices=["on", "off"])


def _add_cascade(p):
    p.add_argument("-k", "--k", type=int, help="codes passed to the ranker")
    p.add_argument("--fusion", choices=["cross_only", "mean_dual_cross"])


def build_parser() -> Parser:
    parser = Parser(prog="codecascade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON config file; flags override its fields")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=Parser, metavar="COMMAND")

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func, parser=p)
        return p

    p = add("synth", cmd_synth, "write a synthetic train/test/codebase corpus")
    p.add_argument("--out-dir")
    p.add_argument("--pairs", type=int, default=300)
    p.add_argument("--vocab-size", type=int, default=1000)
    p.add_argument("--overlap", type=float, default=0.8)
    p.add_argument("--query-len", type=int, default=6)
    p.add_argument("--distractor-len", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)

    p = add("build-vocab", cmd_build_vocab, "build a vocabulary from training pairs")
    _add_paths(p, "train", "codebase")
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--csn", action="store_true", help="read CodeSearchNet-style fields")

    p = add("train-dual", cmd_train_dual, "train the dual-encoder with in-batch negatives")
    _add_paths(p, "train", "vocab")
    p.add_argument("--out")
    p.add_argument("--csn", action="store_true")
    _add_model(p)
    _add_training(p)

    p = add("train-rr", cmd_train_rr, "train dual and cross encoders jointly on in-batch negatives")
    _add_paths(p, "train", "vocab")
    p.add_argument("--out", help="dual-encoder output checkpoint")
    p.add_argument("--cross-out", help="cross-encoder output checkpoint")
    p.add_argument("--csn", action="store_true")
    _add_model(p)
    _add_training(p)

    p = add("train-cross", cmd_train_cross, "train the cross-encoder on ranking-based hard negatives")
    _add_paths(p, "train", "vocab", "dual", "index", "codebase")
    p.add_argument("--out")
    p.add_argument("--csn", action="store_true")
    p.add_argument("--start-rank", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--ps-n-neg", type=int, help="hard negatives per query")
    _add_model(p)
    _add_training(p)

    p = add("build-index", cmd_build_index, "precompute code embeddings")
    _add_paths(p, "codebase", "vocab", "dual")
    p.add_argument("--out")
    p.add_argument("--csn", action="store_true")

    p = add("search", cmd_search, "answer one query")
    _add_paths(p, "vocab", "dual", "cross", "index", "codebase")
    p.add_argument("--query", "-q")
    p.add_argument("--limit", "-n", type=int, default=10, help="hits to print")
    _add_cascade(p)

    p = add("eval", cmd_eval, "MRR of gold codes ranked among the whole codebase")
    _add_paths(p, "test", "vocab", "dual", "cross", "index", "codebase")
    p.add_argument("--mode", choices=["dual", "rr", "cross_exhaustive"], default="dual")
    p.add_argument("--report", help="write the EvalReport JSON here")
    p.add_argument("--csn", action="store_true")
    _add_cascade(p)

    p = add("sweep-k", cmd_sweep_k, "MRR and latency for several k")
    _add_paths(p, "test", "vocab", "dual", "cross", "index", "codebase")
    p.add_argument("--ks", type=_ints)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="CSV output path")
    _add_cascade(p)

    p = add("bench", cmd_bench, "single-query latency per mode and codebase size")
    p.add_argument("--modes", default="dual,rr,cross_exhaustive")
    p.add_argument("--sizes", type=_ints, default=[1000, 10000])
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--d", type=int, help="embedding dimension of the untrained bench models (default 32)")
    p.add_argument("--out", help="CSV output path")
    _add_cascade(p)

    p = add("serve", cmd_serve, "HTTP search endpoint")
    _add_paths(p, "vocab", "dual", "cross", "index", "codebase")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    _add_cascade(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return USAGE_ERROR
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = load_config(args.config)
        _resolve_paths(args, cfg)
        args.func(args, cfg)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return USAGE_ERROR
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (CodeCascadeError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
