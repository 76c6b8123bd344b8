"""Retriever-ranker neural code search: dual-encoder retrieval, cross-encoder reranking."""

from .cascade import CascadeConfig, Engine, counted_search, search, search_cross_exhaustive
from .corpus import RawPair, Vocabulary, build_vocab, encode_ids, load_codebase, load_dataset, tokenize
from .encoders import CrossEncoder, DualEncoder, ForwardCounters, score_cross, score_dual
from .evaluation import bench_latency, evaluate, k_sweep, mrr
from .index import EmbeddingIndex, build_index, full_ranking, load_index, save_index, top_k
from .neural import ModelConfig, grad_check, init_params
from .synth import SyntheticSpec, synth_corpus
from .training import PsConfig, TrainingConfig, info_nce, ps_sample, train_cross, train_dual, train_rr_joint

__version__ = "0.1.0"
