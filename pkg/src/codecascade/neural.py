"""Single-layer self-attention encoder core with hand-written reverse-mode gradients.

Everything here works on padded batches: token ids of shape ``(B, T)``, hidden
states of shape ``(B, T, d)``. A single unbatched sequence is the ``B == 1``
case. All compute is float64.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import AllMaskedRow, FormatError

INIT_SCALE = 0.1
TENSOR_NAMES = ("tok_emb", "pos_emb", "w_q", "w_k", "w_v", "head_w", "head_b")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    vocab_size: int = 4
    max_pos: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.vocab_size < 1 or self.max_pos < 1:
            raise ValueError(f"invalid model config {self}")


@dataclass
class EncoderParams:
    """Learnable tensors of one encoder; ``head_w``/``head_b`` only for cross-encoders."""

    tok_emb: np.ndarray
    pos_emb: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    head_w: np.ndarray | None = None
    head_b: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.tok_emb.shape[1]

    def named(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                yield f.name, value

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(**{name: np.zeros_like(t) for name, t in self.named()})

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{name: t.copy() for name, t in self.named()})

    def num_params(self) -> int:
        return sum(t.size for _, t in self.named())

    def allclose(self, other: "EncoderParams", atol: float = 0.0) -> bool:
        mine, theirs = dict(self.named()), dict(other.named())
        if mine.keys() != theirs.keys():
            return False
        return all(
            mine[k].shape == theirs[k].shape and np.allclose(mine[k], theirs[k], rtol=0, atol=atol)
            for k in mine
        )


# Gradients share the parameter layout exactly.
GradientSet = EncoderParams


def init_params(cfg: ModelConfig, with_head: bool = False) -> EncoderParams:
    """Draw every entry i.i.d. from U[-0.1, 0.1] with a PCG64 generator seeded by ``cfg.seed``."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    def draw(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    params = EncoderParams(
        tok_emb=draw(cfg.vocab_size, cfg.d),
        pos_emb=draw(cfg.max_pos, cfg.d),
        w_q=draw(cfg.d, cfg.d),
        w_k=draw(cfg.d, cfg.d),
        w_v=draw(cfg.d, cfg.d),
    )
    if with_head:
        params.head_w = draw(cfg.d)
        params.head_b = np.zeros(())
    return params


# --------------------------------------------------------------------------
# forward / backward pieces


def embed(params: EncoderParams, ids: np.ndarray, positions: np.ndarray) -> np.ndarray:
    return params.tok_emb[ids] + params.pos_emb[positions]


def embed_backward(grads: EncoderParams, ids: np.ndarray, positions: np.ndarray, d_x: np.ndarray) -> None:
    d = d_x.shape[-1]
    np.add.at(grads.tok_emb, ids.reshape(-1), d_x.reshape(-1, d))
    np.add.at(grads.pos_emb, positions.reshape(-1), d_x.reshape(-1, d))


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """Additive ``(B, 1, T)`` mask hiding padded keys; broadcasts over query rows."""
    return np.where(valid[:, None, :], 0.0, -np.inf)


@dataclass
class AttentionWorkspace:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    a: np.ndarray
    h: np.ndarray
    mask: np.ndarray | None = None


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    top = scores.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise AllMaskedRow("attention row has every position masked")
    shifted = scores - top
    # exp(-inf) is slow on the special-value path; masked entries stay exactly 0
    e = np.zeros_like(shifted)
    np.exp(shifted, out=e, where=np.isfinite(shifted))
    e /= e.sum(axis=-1, keepdims=True)
    return e


def attention_forward(h0: np.ndarray, params: EncoderParams, mask: np.ndarray | None = None) -> AttentionWorkspace:
    """One head of scaled dot-product self-attention.

    ``h0`` is ``(T, d)`` or ``(B, T, d)``; ``mask`` is additive with entries in
    ``{0, -inf}`` and broadcasts against the ``(..., T, T)`` score matrix.
    """
    d = h0.shape[-1]
    flat = h0.reshape(-1, d)
    q = (flat @ params.w_q).reshape(h0.shape)
    k = (flat @ params.w_k).reshape(h0.shape)
    v = (flat @ params.w_v).reshape(h0.shape)
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(d)
    if mask is not None:
        scores = scores + mask
    a = softmax_rows(scores)
    return AttentionWorkspace(q, k, v, a, a @ v, mask)


def attention_backward(
    ws: AttentionWorkspace, h0: np.ndarray, params: EncoderParams, d_h: np.ndarray, grads: EncoderParams
) -> np.ndarray:
    """Accumulate projection gradients into ``grads`` and return dL/dh0."""
    d = h0.shape[-1]
    d_a = d_h @ np.swapaxes(ws.v, -1, -2)
    d_v = np.swapaxes(ws.a, -1, -2) @ d_h
    d_s = ws.a * (d_a - (d_a * ws.a).sum(axis=-1, keepdims=True)) / math.sqrt(d)
    d_q = d_s @ ws.k
    d_k = np.swapaxes(d_s, -1, -2) @ ws.q

    x2 = h0.reshape(-1, d)
    grads.w_q += x2.T @ d_q.reshape(-1, d)
    grads.w_k += x2.T @ d_k.reshape(-1, d)
    grads.w_v += x2.T @ d_v.reshape(-1, d)
    return d_q @ params.w_q.T + d_k @ params.w_k.T + d_v @ params.w_v.T


def mean_pool(h: np.ndarray, valid: np.ndarray) -> np.ndarray:
    counts = valid.sum(axis=1, keepdims=True)
    return (h * valid[..., None]).sum(axis=1) / counts


def mean_pool_backward(d_pooled: np.ndarray, valid: np.ndarray) -> np.ndarray:
    counts = valid.sum(axis=1, keepdims=True)
    return (d_pooled / counts)[:, None, :] * valid[..., None]


@dataclass
class EncoderCache:
    """Everything the backward pass needs from one batched encoder forward."""

    ids: np.ndarray
    positions: np.ndarray
    valid: np.ndarray
    h0: np.ndarray
    ws: AttentionWorkspace
    pooled: np.ndarray
    extra: dict = field(default_factory=dict)


def encoder_forward(params: EncoderParams, ids, positions, valid, mask=None) -> EncoderCache:
    """Embeddings, attention, mean pooling over valid positions."""
    h0 = embed(params, ids, positions)
    if mask is None:
        mask = key_padding_mask(valid)
    ws = attention_forward(h0, params, mask)
    return EncoderCache(ids, positions, valid, h0, ws, mean_pool(ws.h, valid))


def encoder_backward(params: EncoderParams, cache: EncoderCache, d_pooled: np.ndarray, grads: EncoderParams) -> None:
    d_h = mean_pool_backward(d_pooled, cache.valid)
    d_h0 = attention_backward(cache.ws, cache.h0, params, d_h, grads)
    embed_backward(grads, cache.ids, cache.positions, d_h0)


# --------------------------------------------------------------------------
# gradient checking


def _allocate(sizes: list[int], total: int) -> list[int]:
    """Spread ``total`` samples over pools, never exceeding a pool's size."""
    alloc = [0] * len(sizes)
    remaining = min(total, sum(sizes))
    while remaining > 0:
        open_pools = [i for i, s in enumerate(sizes) if alloc[i] < s]
        share = max(1, remaining // len(open_pools))
        for i in open_pools:
            take = min(share, sizes[i] - alloc[i], remaining)
            alloc[i] += take
            remaining -= take
            if remaining == 0:
                break
    return alloc


def grad_check(
    params: EncoderParams,
    loss_and_grads: Callable[[EncoderParams], tuple[float, EncoderParams]],
    eps: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
    analytic: EncoderParams | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    Coordinates are sampled across tensors in equal shares, preferring entries
    where the analytic gradient is non-zero plus a few where it is zero, so a
    missing gradient contribution cannot hide in untouched embedding rows.
    Pass ``analytic`` to check a gradient set other than the one
    ``loss_and_grads`` returns (fault injection).
    """
    if not 0 < eps <= 1e-3:
        raise ValueError(f"eps must lie in (0, 1e-3], got {eps}")
    rng = np.random.default_rng(seed)
    if analytic is None:
        _, analytic = loss_and_grads(params)
    grads = dict(analytic.named())
    tensors = dict(params.named())
    names = list(tensors)

    pools = []
    for name in names:
        g = grads[name].reshape(-1)
        nz = np.flatnonzero(g)
        zero = np.flatnonzero(g == 0)
        if len(nz) == 0:
            pools.append(np.arange(g.size))
        else:
            extra = rng.choice(zero, size=min(4, len(zero)), replace=False) if len(zero) else zero
            pools.append(np.concatenate([nz, extra]))
    alloc = _allocate([len(p) for p in pools], n_coords)

    worst = 0.0
    for name, pool, count in zip(names, pools, alloc):
        if count == 0:
            continue
        flat = tensors[name].reshape(-1)
        for idx in rng.choice(pool, size=count, replace=False):
            saved = flat[idx]
            flat[idx] = saved + eps
            f_plus, _ = loss_and_grads(params)
            flat[idx] = saved - eps
            f_minus, _ = loss_and_grads(params)
            flat[idx] = saved
            numeric = (f_plus - f_minus) / (2 * eps)
            a = grads[name].reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return float(worst)


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"R2PSMDL1"


def pack_tensors(magic: bytes, header: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = dict(header, tensors=manifest)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return magic + struct.pack("<I", len(blob)) + blob + b"".join(chunks)


def unpack_header(magic: bytes, raw: bytes) -> tuple[dict, memoryview]:
    if len(raw) < len(magic) + 4 or raw[: len(magic)] != magic:
        raise FormatError(f"bad magic, expected {magic!r}")
    (hlen,) = struct.unpack_from("<I", raw, len(magic))
    start = len(magic) + 4
    if start + hlen > len(raw):
        raise FormatError("header length exceeds file size")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("header is not a JSON object")
    return header, memoryview(raw)[start + hlen :]


def unpack_tensors(header: dict, data: memoryview) -> dict[str, np.ndarray]:
    out, expected = {}, 0
    try:
        for entry in header["tensors"]:
            shape = tuple(int(s) for s in entry["shape"])
            nbytes = 4 * math.prod(shape)
            if int(entry["offset"]) != expected or expected + nbytes > len(data):
                raise FormatError(f"tensor {entry['name']!r} out of bounds")
            out[entry["name"]] = np.frombuffer(data, dtype="<f4", count=math.prod(shape), offset=expected).reshape(shape)
            expected += nbytes
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"bad tensor manifest: {exc}") from exc
    if expected != len(data):
        raise FormatError(f"{len(data) - expected} trailing bytes after tensor data")
    return out


def checkpoint_bytes(params: EncoderParams, cfg: ModelConfig, component: str, **extra) -> bytes:
    header = {
        "component": component,
        "config": {"d": cfg.d, "vocab_size": cfg.vocab_size, "max_pos": cfg.max_pos, "seed": cfg.seed},
        **extra,
    }
    return pack_tensors(CHECKPOINT_MAGIC, header, list(params.named()))


def save_checkpoint(path: str | Path, params: EncoderParams, cfg: ModelConfig, component: str, **extra) -> bytes:
    raw = checkpoint_bytes(params, cfg, component, **extra)
    Path(path).write_bytes(raw)
    return raw


def load_checkpoint(path_or_bytes: str | Path | bytes) -> tuple[EncoderParams, ModelConfig, dict]:
    """Inverse of :func:`save_checkpoint`; tensors come back as float64."""
    raw = path_or_bytes if isinstance(path_or_bytes, bytes) else Path(path_or_bytes).read_bytes()
    header, data = unpack_header(CHECKPOINT_MAGIC, raw)
    tensors = unpack_tensors(header, data)
    try:
        cfg = ModelConfig(**header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad model config in header: {exc}") from exc
    required = set(TENSOR_NAMES[:5])
    if not required <= tensors.keys() or not tensors.keys() <= set(TENSOR_NAMES):
        raise FormatError(f"unexpected tensor set {sorted(tensors)}")
    params = EncoderParams(**{k: v.astype(np.float64) for k, v in tensors.items()})
    if params.tok_emb.shape != (cfg.vocab_size, cfg.d) or params.pos_emb.shape != (cfg.max_pos, cfg.d):
        raise FormatError("tensor shapes disagree with the model config")
    return params, cfg, header


def fingerprint(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()
