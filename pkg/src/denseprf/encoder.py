"""Small transformer dual-encoder with exact analytic gradients.

The encoder embeds a token sequence, runs it through post-norm attention
blocks, pools the final-layer representation at position 0 (the BOS slot)
and applies a linear head followed by layer normalization.  Mask/padding
positions attend like any other token.  Everything is float64 numpy; params
are treated as immutable snapshots, so training steps build new ones.

The analytic backward pass is checked against central finite differences in
the test suite; keep the two in sync when touching either.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .tokenizer import TokenSequence

EmbeddingVector = np.ndarray  # shape (dim,), float64

_LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715

PARAMS_MAGIC = b"PRFENC1"


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 512

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.max_len < 8:
            raise ValueError("max_len must be >= 8")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")

    @property
    def ff_dim(self) -> int:
        return 4 * self.dim


@dataclass
class LayerParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    FIELDS = (
        "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
        "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
    )


@dataclass
class HeadParams:
    """Linear projection plus layer norm; serialized after the body so it
    can be inherited or re-initialized independently."""

    w: np.ndarray
    b: np.ndarray
    ln_g: np.ndarray
    ln_b: np.ndarray

    FIELDS = ("w", "b", "ln_g", "ln_b")


@dataclass
class EncoderParams:
    config: EncoderConfig
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    layers: list[LayerParams]
    head: HeadParams


class HeadPolicy(Enum):
    INHERIT = "inherit"
    REINIT = "reinit"


# ---------------------------------------------------------------------------
# parameter plumbing
# ---------------------------------------------------------------------------

def named_arrays(params: EncoderParams) -> list[tuple[str, np.ndarray]]:
    """All parameter tensors in the fixed traversal/serialization order."""
    out = [("tok_emb", params.tok_emb), ("pos_emb", params.pos_emb)]
    for i, layer in enumerate(params.layers):
        for f in LayerParams.FIELDS:
            out.append((f"layers.{i}.{f}", getattr(layer, f)))
    for f in HeadParams.FIELDS:
        out.append((f"head.{f}", getattr(params.head, f)))
    return out


def map_arrays(fn: Callable[..., np.ndarray], *params: EncoderParams) -> EncoderParams:
    """Build a new EncoderParams by applying ``fn`` tensor-wise."""
    first = params[0]
    layers = [
        LayerParams(**{
            f: fn(*(getattr(p.layers[i], f) for p in params))
            for f in LayerParams.FIELDS
        })
        for i in range(len(first.layers))
    ]
    head = HeadParams(**{
        f: fn(*(getattr(p.head, f) for p in params)) for f in HeadParams.FIELDS
    })
    return EncoderParams(
        config=first.config,
        tok_emb=fn(*(p.tok_emb for p in params)),
        pos_emb=fn(*(p.pos_emb for p in params)),
        layers=layers,
        head=head,
    )


def params_from_arrays(
    config: EncoderConfig, arrays: dict[str, np.ndarray]
) -> EncoderParams:
    """Rebuild EncoderParams from a name -> tensor mapping (named_arrays keys)."""
    layers = [
        LayerParams(**{f: arrays[f"layers.{i}.{f}"] for f in LayerParams.FIELDS})
        for i in range(config.layers)
    ]
    head = HeadParams(**{f: arrays[f"head.{f}"] for f in HeadParams.FIELDS})
    return EncoderParams(
        config=config,
        tok_emb=arrays["tok_emb"],
        pos_emb=arrays["pos_emb"],
        layers=layers,
        head=head,
    )


def zeros_like_params(params: EncoderParams) -> EncoderParams:
    return map_arrays(np.zeros_like, params)


def copy_params(params: EncoderParams) -> EncoderParams:
    return map_arrays(np.copy, params)


def params_allclose(a: EncoderParams, b: EncoderParams, atol: float = 0.0) -> bool:
    if a.config != b.config:
        return False
    for (_, x), (_, y) in zip(named_arrays(a), named_arrays(b)):
        if atol == 0.0:
            if not np.array_equal(x, y):
                return False
        elif not np.allclose(x, y, rtol=0.0, atol=atol):
            return False
    return True


def init_params(config: EncoderConfig, seed: int, scale: float = 0.02) -> EncoderParams:
    """Randomly initialized encoder (normal ``scale`` weights, identity norms).

    Larger scales make a random encoder mix token content into the pooled
    position; at the 0.02 default the first position barely attends anywhere.
    """
    if not 0.0 < scale < 10.0:
        raise ValueError("scale out of range")
    rng = np.random.default_rng(seed)

    def w(*shape):
        return rng.normal(0.0, scale, size=shape)

    d, f = config.dim, config.ff_dim
    layers = [
        LayerParams(
            wq=w(d, d), bq=np.zeros(d), wk=w(d, d), bk=np.zeros(d),
            wv=w(d, d), bv=np.zeros(d), wo=w(d, d), bo=np.zeros(d),
            ln1_g=np.ones(d), ln1_b=np.zeros(d),
            w1=w(d, f), b1=np.zeros(f), w2=w(f, d), b2=np.zeros(d),
            ln2_g=np.ones(d), ln2_b=np.zeros(d),
        )
        for _ in range(config.layers)
    ]
    head = HeadParams(w=w(d, d), b=np.zeros(d), ln_g=np.ones(d), ln_b=np.zeros(d))
    return EncoderParams(
        config=config,
        tok_emb=w(config.vocab_size, d),
        pos_emb=w(config.max_len, d),
        layers=layers,
        head=head,
    )


def init_prf_encoder(
    base: EncoderParams, head_policy: HeadPolicy, seed: int
) -> EncoderParams:
    """Copy of ``base`` whose head is either inherited verbatim or redrawn.

    Re-initialization draws head.w uniformly from +-1/sqrt(dim), zeroes
    head.b and resets the head layer norm to identity (gain 1, bias 0).
    """
    new = copy_params(base)
    if head_policy is HeadPolicy.REINIT:
        d = base.config.dim
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(d)
        new.head = HeadParams(
            w=rng.uniform(-bound, bound, size=(d, d)),
            b=np.zeros(d),
            ln_g=np.ones(d),
            ln_b=np.zeros(d),
        )
    return new


def replace_head(params: EncoderParams, head: HeadParams) -> EncoderParams:
    new = copy_params(params)
    new.head = HeadParams(**{f: np.copy(getattr(head, f)) for f in HeadParams.FIELDS})
    return new


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _layer_norm_fwd(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layer_norm_bwd(dy: np.ndarray, g: np.ndarray, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu_fwd(x: np.ndarray):
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_bwd(dy: np.ndarray, x: np.ndarray, t: np.ndarray):
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def _forward(params: EncoderParams, ids: Sequence[int], want_cache: bool):
    cfg = params.config
    t = len(ids)
    if t == 0:
        raise ValueError("empty sequence")
    if t > cfg.max_len:
        raise ValueError("sequence too long")
    idx = np.asarray(ids, dtype=np.intp)
    if idx.max() >= cfg.vocab_size or idx.min() < 0:
        raise ValueError("token id out of range")

    scale = 1.0 / np.sqrt(cfg.dim // cfg.heads)
    x = params.tok_emb[idx] + params.pos_emb[:t]
    caches = []
    for layer in params.layers:
        x_in = x
        q = x @ layer.wq + layer.bq
        k = x @ layer.wk + layer.bk
        v = x @ layer.wv + layer.bv
        qh = _split_heads(q, cfg.heads)
        kh = _split_heads(k, cfg.heads)
        vh = _split_heads(v, cfg.heads)
        s = qh @ kh.transpose(0, 2, 1) * scale
        s -= s.max(axis=-1, keepdims=True)
        e = np.exp(s)
        a = e / e.sum(axis=-1, keepdims=True)
        oh = a @ vh
        o = _merge_heads(oh)
        attn = o @ layer.wo + layer.bo
        u = x_in + attn
        x_mid, ln1_cache = _layer_norm_fwd(u, layer.ln1_g, layer.ln1_b)
        h1 = x_mid @ layer.w1 + layer.b1
        h2, gelu_t = _gelu_fwd(h1)
        f = h2 @ layer.w2 + layer.b2
        w = x_mid + f
        x, ln2_cache = _layer_norm_fwd(w, layer.ln2_g, layer.ln2_b)
        if want_cache:
            caches.append(
                (x_in, qh, kh, vh, a, o, ln1_cache, x_mid, h1, gelu_t, h2, ln2_cache)
            )

    pooled = x[0]
    z = pooled @ params.head.w + params.head.b
    out, head_ln_cache = _layer_norm_fwd(z[None, :], params.head.ln_g, params.head.ln_b)
    out = out[0]
    if not want_cache:
        return out, None
    return out, (idx, t, scale, caches, pooled, head_ln_cache)


def encode(params: EncoderParams, tokens: TokenSequence) -> EmbeddingVector:
    """Deterministic forward pass to the pooled, head-projected embedding."""
    out, _ = _forward(params, tokens.ids, want_cache=False)
    return out


def score(q: EmbeddingVector, d: EmbeddingVector) -> float:
    """Inner product with fixed left-to-right accumulation order.

    Sequential summation keeps the reference scorer bitwise reproducible and
    directly comparable with a plain loop; bulk scoring lives in the index.
    """
    if q.shape != d.shape:
        raise ValueError("dimension mismatch")
    total = 0.0
    for a, b in zip(q.tolist(), d.tolist()):
        total += a * b
    return total


# ---------------------------------------------------------------------------
# loss and gradients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradExample:
    """One contrastive example with document embeddings already resolved."""

    tokens: TokenSequence
    positive: np.ndarray          # (dim,)
    negatives: np.ndarray         # (n_neg, dim), n_neg >= 1


def nce_terms(scores: np.ndarray) -> tuple[float, np.ndarray]:
    """Stable loss and softmax probabilities for [positive, negatives...] scores.

    The positive-is-max branch uses log1p so the loss stays strictly
    positive even deep in saturation.
    """
    m = scores.max()
    e = np.exp(scores - m)
    se = e.sum()
    p = e / se
    if scores[0] == m:
        loss = float(np.log1p(e[1:].sum()))
    else:
        loss = float(np.log(se) + m - scores[0])
    return loss, p


def _example_forward(params: EncoderParams, ex: GradExample, want_cache: bool):
    q, cache = _forward(params, ex.tokens.ids, want_cache)
    scores = np.concatenate(([ex.positive @ q], ex.negatives @ q))
    loss, p = nce_terms(scores)
    return q, cache, loss, p


def batch_loss(params: EncoderParams, batch: Sequence[GradExample]) -> float:
    """Mean contrastive loss over the batch (no gradients)."""
    if not batch:
        raise ValueError("empty batch")
    total = 0.0
    for i, ex in enumerate(batch):
        _, _, loss, _ = _example_forward(params, ex, want_cache=False)
        if not np.isfinite(loss):
            raise ValueError(f"numerical overflow in example {i}")
        total += loss
    return total / len(batch)


def grad(
    params: EncoderParams, batch: Sequence[GradExample]
) -> tuple[float, EncoderParams]:
    """Batch-mean loss and exact analytic gradients for every parameter.

    Document embeddings are constants (the document side is frozen); the
    gradient flows only through the query encoder.
    """
    if not batch:
        raise ValueError("empty batch")
    cfg = params.config
    grads = zeros_like_params(params)
    total_loss = 0.0

    for i, ex in enumerate(batch):
        q, cache, loss, p = _example_forward(params, ex, want_cache=True)
        if not np.isfinite(loss) or not np.all(np.isfinite(p)):
            raise ValueError(f"numerical overflow in example {i}")
        total_loss += loss

        # dL/dq: softmax probs against the one-hot positive
        coef = p.copy()
        coef[0] -= 1.0
        d_q = coef[0] * ex.positive + coef[1:] @ ex.negatives

        idx, t, scale, layer_caches, pooled, head_ln_cache = cache
        d_out = d_q[None, :]
        dz, dg, db = _layer_norm_bwd(d_out, params.head.ln_g, head_ln_cache)
        grads.head.ln_g += dg
        grads.head.ln_b += db
        dz = dz[0]
        grads.head.w += np.outer(pooled, dz)
        grads.head.b += dz
        d_pooled = params.head.w @ dz

        dx = np.zeros((t, cfg.dim))
        dx[0] = d_pooled

        for layer, lc, glayer in zip(
            reversed(params.layers), reversed(layer_caches), reversed(grads.layers)
        ):
            (x_in, qh, kh, vh, a, o, ln1_cache, x_mid, h1, gelu_t, h2,
             ln2_cache) = lc

            dw_pre, dg2, db2 = _layer_norm_bwd(dx, layer.ln2_g, ln2_cache)
            glayer.ln2_g += dg2
            glayer.ln2_b += db2

            # feed-forward branch
            df = dw_pre
            glayer.w2 += h2.T @ df
            glayer.b2 += df.sum(axis=0)
            dh2 = df @ layer.w2.T
            dh1 = _gelu_bwd(dh2, h1, gelu_t)
            glayer.w1 += x_mid.T @ dh1
            glayer.b1 += dh1.sum(axis=0)
            dx_mid = dw_pre + dh1 @ layer.w1.T

            du, dg1, db1 = _layer_norm_bwd(dx_mid, layer.ln1_g, ln1_cache)
            glayer.ln1_g += dg1
            glayer.ln1_b += db1

            # attention branch
            d_attn = du
            glayer.wo += o.T @ d_attn
            glayer.bo += d_attn.sum(axis=0)
            do = d_attn @ layer.wo.T
            doh = _split_heads(do, cfg.heads)
            da = doh @ vh.transpose(0, 2, 1)
            dvh = a.transpose(0, 2, 1) @ doh
            ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
            ds *= scale
            dqh = ds @ kh
            dkh = ds.transpose(0, 2, 1) @ qh
            dq_full = _merge_heads(dqh)
            dk_full = _merge_heads(dkh)
            dv_full = _merge_heads(dvh)
            glayer.wq += x_in.T @ dq_full
            glayer.bq += dq_full.sum(axis=0)
            glayer.wk += x_in.T @ dk_full
            glayer.bk += dk_full.sum(axis=0)
            glayer.wv += x_in.T @ dv_full
            glayer.bv += dv_full.sum(axis=0)

            dx = (
                du
                + dq_full @ layer.wq.T
                + dk_full @ layer.wk.T
                + dv_full @ layer.wv.T
            )

        grads.pos_emb[:t] += dx
        np.add.at(grads.tok_emb, idx, dx)

    inv_n = 1.0 / len(batch)
    grads = map_arrays(lambda g: g * inv_n, grads)
    return total_loss / len(batch), grads


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_params(params: EncoderParams, path) -> None:
    cfg = params.config
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack(
            "<5i", cfg.dim, cfg.layers, cfg.heads, cfg.max_len, cfg.vocab_size
        ))
        for _, arr in named_arrays(params):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise ValueError("not a params file")
    off = len(PARAMS_MAGIC)
    try:
        dim, layers, heads, max_len, vocab_size = struct.unpack_from("<5i", data, off)
    except struct.error as exc:
        raise ValueError("corrupt params file") from exc
    off += 20
    cfg = EncoderConfig(
        vocab_size=vocab_size, dim=dim, layers=layers, heads=heads, max_len=max_len
    )
    template = init_params(cfg, seed=0)

    # Read tensors in the exact order save_params wrote them.
    arrays: dict[str, np.ndarray] = {}
    for name, arr in named_arrays(template):
        n = arr.size * 8
        if off + n > len(data):
            raise ValueError("corrupt params file")
        arrays[name] = (
            np.frombuffer(data[off:off + n], dtype="<f8").reshape(arr.shape).copy()
        )
        off += n
    loaded = params_from_arrays(cfg, arrays)
    if off != len(data):
        raise ValueError("corrupt params file")
    for _, arr in named_arrays(loaded):
        if not np.all(np.isfinite(arr)):
            raise ValueError("corrupt params file")
    return loaded
