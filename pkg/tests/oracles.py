"""Independent reference implementations used to check the package.

Everything here is deliberately written from scratch in the plainest
possible style (loops, sorts, scalar math) and shares no code with the
package, so agreement is meaningful evidence of correctness.
"""

from __future__ import annotations

import math

import numpy as np


# -- search ------------------------------------------------------------------


def naive_topk(doc_ids, vectors, query, k):
    """Scan-and-sort exact top-k by inner product, ties by doc_id ascending.

    Scores come from the same float64 matrix-vector product the engine uses;
    two independently coded summation orders would disagree in the last ulp,
    which is below the contract's resolution.  What this oracle re-derives
    independently is everything above the arithmetic: the full scan, the
    (-score, doc_id) sort, the cut at k, and the rank numbering.  A separate
    check compares that arithmetic against exactly rounded sums.
    """
    scores = np.asarray(vectors, dtype=np.float64) @ np.asarray(
        query, dtype=np.float64
    )
    scored = [(doc_id, float(s)) for doc_id, s in zip(doc_ids, scores)]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[: min(k, len(scored))]


def exact_scores(vectors, query):
    """Correctly rounded float64 inner products via exact accumulation."""
    out = []
    for vec in vectors:
        out.append(math.fsum(float(a) * float(b) for a, b in zip(vec, query)))
    return out


# -- ranking metrics ----------------------------------------------------------
#
# Runs are represented as {query_id: [doc_id, ...]} in rank order and qrels
# as {(query_id, doc_id): grade}.


def _positives(qrels, qid, threshold):
    return {d: g for (q, d), g in qrels.items() if q == qid and g >= threshold}


def oracle_mrr(run, qrels, k, threshold=1):
    per_query = {}
    for qid, docs in run.items():
        if not _positives(qrels, qid, threshold):
            continue
        value = 0.0
        for rank, doc in enumerate(docs[:k], start=1):
            if qrels.get((qid, doc), 0) >= threshold:
                value = 1.0 / rank
                break
        per_query[qid] = value
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return mean, per_query


def oracle_ndcg(run, qrels, k):
    per_query = {}
    for qid, docs in run.items():
        grades = sorted(_positives(qrels, qid, 1).values(), reverse=True)
        idcg = 0.0
        for i, g in enumerate(grades[:k], start=1):
            idcg += g / math.log2(i + 1)
        if idcg == 0.0:
            continue
        dcg = 0.0
        for rank, doc in enumerate(docs[:k], start=1):
            dcg += qrels.get((qid, doc), 0) / math.log2(rank + 1)
        per_query[qid] = dcg / idcg
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return mean, per_query


def oracle_recall(run, qrels, k, threshold):
    per_query = {}
    for qid, docs in run.items():
        relevant = _positives(qrels, qid, threshold)
        if not relevant:
            continue
        hits = sum(1 for doc in docs[:k] if doc in relevant)
        per_query[qid] = hits / len(relevant)
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return mean, per_query


# -- transformer forward -------------------------------------------------------


def forward_oracle(params, ids):
    """Straight-line forward pass for a 1-layer, 1-head encoder.

    Re-derives the architecture from its definition: embeddings plus
    positions, single-head softmax attention (scores scaled by the head
    width), post-norm residual blocks with a tanh-approximation GELU MLP,
    position-0 pooling, linear head, final layer norm.
    """
    cfg = params.config
    assert cfg.layers == 1 and cfg.heads == 1
    eps = 1e-5

    def layer_norm(vec, g, b):
        mu = sum(vec) / len(vec)
        var = sum((x - mu) ** 2 for x in vec) / len(vec)
        return [
            g[i] * ((vec[i] - mu) / math.sqrt(var + eps)) + b[i]
            for i in range(len(vec))
        ]

    def gelu(x):
        inner = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)
        return 0.5 * x * (1.0 + math.tanh(inner))

    def matvec_rows(mat, vec):
        # vec (left) times matrix: out[j] = sum_i vec[i] * mat[i][j]
        rows = len(mat)
        cols = len(mat[0])
        return [sum(vec[i] * mat[i][j] for i in range(rows)) for j in range(cols)]

    d = cfg.dim
    layer = params.layers[0]
    tok = params.tok_emb.tolist()
    pos = params.pos_emb.tolist()
    x = [[tok[t][j] + pos[i][j] for j in range(d)] for i, t in enumerate(ids)]
    n = len(x)

    wq, bq = layer.wq.tolist(), layer.bq.tolist()
    wk, bk = layer.wk.tolist(), layer.bk.tolist()
    wv, bv = layer.wv.tolist(), layer.bv.tolist()
    wo, bo = layer.wo.tolist(), layer.bo.tolist()

    q = [[matvec_rows(wq, row)[j] + bq[j] for j in range(d)] for row in x]
    k = [[matvec_rows(wk, row)[j] + bk[j] for j in range(d)] for row in x]
    v = [[matvec_rows(wv, row)[j] + bv[j] for j in range(d)] for row in x]

    scale = 1.0 / math.sqrt(d)  # one head: head width == dim
    attn_out = []
    for i in range(n):
        scores = [
            scale * sum(q[i][a] * k[j][a] for a in range(d)) for j in range(n)
        ]
        m = max(scores)
        weights = [math.exp(s - m) for s in scores]
        z = sum(weights)
        weights = [w / z for w in weights]
        ctx = [
            sum(weights[j] * v[j][a] for j in range(n)) for a in range(d)
        ]
        attn_out.append(
            [matvec_rows(wo, ctx)[a] + bo[a] for a in range(d)]
        )

    mid = [
        layer_norm(
            [x[i][a] + attn_out[i][a] for a in range(d)],
            layer.ln1_g.tolist(),
            layer.ln1_b.tolist(),
        )
        for i in range(n)
    ]

    w1, b1 = layer.w1.tolist(), layer.b1.tolist()
    w2, b2 = layer.w2.tolist(), layer.b2.tolist()
    out_rows = []
    for i in range(n):
        h = [gelu(matvec_rows(w1, mid[i])[j] + b1[j]) for j in range(len(b1))]
        f = [matvec_rows(w2, h)[a] + b2[a] for a in range(d)]
        out_rows.append(
            layer_norm(
                [mid[i][a] + f[a] for a in range(d)],
                layer.ln2_g.tolist(),
                layer.ln2_b.tolist(),
            )
        )

    pooled = out_rows[0]
    hw, hb = params.head.w.tolist(), params.head.b.tolist()
    z = [matvec_rows(hw, pooled)[a] + hb[a] for a in range(d)]
    final = layer_norm(z, params.head.ln_g.tolist(), params.head.ln_b.tolist())
    return np.asarray(final)


# -- scalar loss ---------------------------------------------------------------


def nce_loss_scalar(pos_score, neg_scores):
    """Direct evaluation of -ln(exp(s+) / (exp(s+) + sum exp(s-)))."""
    denom = math.exp(pos_score) + sum(math.exp(s) for s in neg_scores)
    return -math.log(math.exp(pos_score) / denom)
