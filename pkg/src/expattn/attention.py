"""Sparse generalized dot-product attention over an :class:`AttentionPattern`.

For query node ``i``, head ``j`` and each incoming edge ``u -> i`` with edge
feature ``e``::

    score(u, i) = ((W_E e) * (W_K x_u)) . (W_Q x_i)
    attn_i      = x_i + sum_j W_O sum_u softmax_u(score) W_V x_u

The block then applies the position-wise feedforward
``FF = A + W_2 relu(W_1 A + b_1) + b_2``.  No logit scaling, no layer norm.
Embeddings are column-major: ``X`` has shape ``(d, N)``.

Edge features resolve per edge: local edges read row ``featidx`` of
``local_feat``; expander, global and self-loop edges share one learnable
vector per kind (``kind_emb`` rows 0, 1, 2).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .pattern import AttentionPattern, EdgeKind

PARAM_NAMES = ("W_K", "W_Q", "W_V", "W_O", "W_E", "W1", "b1", "W2", "b2",
               "kind_emb", "local_feat", "virtual_init")
DENSE_ORACLE_MAX_N = 64


class AttentionError(ValueError):
    pass


@dataclass(frozen=True)
class LayerDims:
    d: int          # model width
    h: int = 1      # heads
    m: int = 8      # head width
    r: int = 16     # feedforward width
    d_e: int = 4    # edge feature width
    n_local_feat: int = 1
    n_virtual: int = 0

    def __post_init__(self):
        for f in ("d", "h", "m", "r", "d_e", "n_local_feat"):
            if getattr(self, f) < 1:
                raise AttentionError(f"dimension {f} must be positive")
        if self.n_virtual < 0:
            raise AttentionError("n_virtual must be non-negative")


@dataclass
class HeadParams:
    W_K: np.ndarray
    W_Q: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray
    W_E: np.ndarray


@dataclass
class LayerParams:
    """Weights for one attention + feedforward block.

    Per-head projections are stacked along axis 0: ``W_K[j]`` is ``(m, d)``.
    ``virtual_init`` is ``(d, g)``; its columns seed the virtual nodes when the
    caller passes only real-node columns.
    """

    W_K: np.ndarray
    W_Q: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray
    W_E: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    kind_emb: np.ndarray
    local_feat: np.ndarray
    virtual_init: np.ndarray
    edge_features: bool = True
    scale_logits: bool = False

    @property
    def heads(self) -> list[HeadParams]:
        return [HeadParams(self.W_K[j], self.W_Q[j], self.W_V[j], self.W_O[j], self.W_E[j])
                for j in range(self.W_K.shape[0])]

    @property
    def d(self) -> int:
        return self.W_K.shape[2]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def replace(self, **arrays) -> "LayerParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(arrays)
        return LayerParams(**kw)

    def copy(self) -> "LayerParams":
        return self.replace(**{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self) -> "LayerParams":
        return self.replace(**{k: np.zeros_like(v) for k, v in self.arrays().items()})


@dataclass
class Gradients:
    dX: np.ndarray
    params: LayerParams

    def __getitem__(self, name):
        return self.dX if name == "X" else getattr(self.params, name)


def param_init(dims: LayerDims, seed: int) -> LayerParams:
    """Seeded Glorot-uniform projections, zero biases, small embeddings."""
    rng = np.random.default_rng(seed)

    def glorot(*shape):
        fan_out, fan_in = shape[-2], shape[-1]
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=shape)

    d, h, m, r, de = dims.d, dims.h, dims.m, dims.r, dims.d_e
    return LayerParams(
        W_K=glorot(h, m, d), W_Q=glorot(h, m, d), W_V=glorot(h, m, d),
        W_O=glorot(h, d, m), W_E=glorot(h, m, de),
        W1=glorot(r, d), b1=np.zeros(r), W2=glorot(d, r), b2=np.zeros(d),
        kind_emb=rng.uniform(-0.1, 0.1, size=(3, de)),
        local_feat=rng.uniform(-0.1, 0.1, size=(dims.n_local_feat, de)),
        virtual_init=rng.uniform(-0.1, 0.1, size=(d, dims.n_virtual)),
    )


# -- shared helpers ----------------------------------------------------------

def edge_feature_matrix(p: AttentionPattern, params: LayerParams) -> np.ndarray:
    """``(E, d_E)`` feature row for every edge of ``p``."""
    n_loc = params.local_feat.shape[0]
    local = p.kind == EdgeKind.LOCAL
    idx = p.feat[local]
    if idx.size and (idx.min() < 0 or idx.max() >= n_loc):
        raise AttentionError("local edge feature index outside the feature table")
    # one gather from [local_feat; kind_emb]
    rows = np.where(local, p.feat, n_loc + p.kind - 1)
    return np.vstack([params.local_feat, params.kind_emb])[rows]


def with_virtual(p: AttentionPattern, X: np.ndarray, params: LayerParams) -> np.ndarray:
    """Return ``X`` with all ``N`` columns.

    Given only the ``n_real`` real columns, virtual columns are filled from
    ``virtual_init``, repeated member by member for batched unions.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != params.d:
        raise AttentionError(f"X must have shape ({params.d}, N), got {X.shape}")
    if X.shape[1] == p.n_nodes:
        return X
    if X.shape[1] != p.n_real:
        raise AttentionError(f"X has {X.shape[1]} columns; pattern has {p.n_real} real "
                             f"and {p.n_nodes} total nodes")
    if p.n_virtual == 0:
        return X
    g = params.virtual_init.shape[1]
    if g == 0 or p.n_virtual % g:
        raise AttentionError(f"{p.n_virtual} virtual nodes cannot be seeded from {g} vectors")
    return np.hstack([X, np.tile(params.virtual_init, p.n_virtual // g)])


def _validate(p: AttentionPattern, X: np.ndarray) -> None:
    if not np.all(np.isfinite(X)):
        raise AttentionError("non-finite entry in X")
    empty = np.flatnonzero(p.in_degree() == 0)
    if empty.size:
        raise AttentionError(f"node {empty[0]} has no incoming pattern edge")


def _segment_softmax(s: np.ndarray, p: AttentionPattern) -> np.ndarray:
    starts = p.indptr[:-1]
    mx = np.maximum.reduceat(s, starts)
    e = np.exp(s - mx[p.dst])
    z = np.add.reduceat(e, starts)
    return e / z[p.dst]


def _segment_sum_rows(M: np.ndarray, p: AttentionPattern) -> np.ndarray:
    """Sum the rows of ``M`` (one per edge) into their destination nodes."""
    return np.add.reduceat(M, p.indptr[:-1], axis=0)


def _scatter_matrix(index: np.ndarray, N: int) -> sp.csr_matrix:
    return sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))), shape=(N, index.size))


# Internally everything is edge-major (one row per edge or node) so that the
# per-edge gathers read contiguous rows.
def _attention(p, Xf, params, keep=False, stats=None):
    F = edge_feature_matrix(p, params) if params.edge_features else None
    scale = 1.0 / np.sqrt(params.W_K.shape[1]) if params.scale_logits else 1.0
    XT = np.ascontiguousarray(Xf.T)
    outT = XT.copy()
    cache = []
    for hp in params.heads:
        Ke, Ve = (XT @ hp.W_K.T)[p.src], (XT @ hp.W_V.T)[p.src]
        Qe = (XT @ hp.W_Q.T)[p.dst]
        Ge = F @ hp.W_E.T if F is not None else None
        Kt = Ke * Ge if Ge is not None else Ke
        s = np.einsum("em,em->e", Kt, Qe) * scale
        a = _segment_softmax(s, p)
        agg = _segment_sum_rows(Ve * a[:, None], p)
        outT += agg @ hp.W_O.T
        if keep:
            cache.append((Ke, Qe, Ve, Ge, Kt, a, agg))
        if stats is not None:
            stats["score_evals"] = stats.get("score_evals", 0) + s.size
    return outT.T, cache, F, scale


def attn_forward(p: AttentionPattern, X: np.ndarray, params: LayerParams,
                 stats: Optional[dict] = None) -> np.ndarray:
    """Sparse attention with residual; returns all ``N`` columns."""
    Xf = with_virtual(p, X, params)
    _validate(p, Xf)
    return _attention(p, Xf, params, stats=stats)[0]


def attention_weights(p: AttentionPattern, X: np.ndarray, params: LayerParams) -> np.ndarray:
    """Softmax weight of every edge, shape ``(h, E)``."""
    Xf = with_virtual(p, X, params)
    _validate(p, Xf)
    _, cache, _, _ = _attention(p, Xf, params, keep=True)
    return np.stack([c[5] for c in cache])


def _feedforward(A, params):
    Z = params.W1 @ A + params.b1[:, None]
    R = np.maximum(Z, 0.0)
    return A + params.W2 @ R + params.b2[:, None], Z, R


def transformer_block_forward(p: AttentionPattern, X: np.ndarray, params: LayerParams,
                              stats: Optional[dict] = None) -> np.ndarray:
    A = attn_forward(p, X, params, stats=stats)
    return _feedforward(A, params)[0]


def attn_backward(p: AttentionPattern, X: np.ndarray, params: LayerParams,
                  upstream: np.ndarray) -> Gradients:
    """Reverse-mode gradients of :func:`transformer_block_forward`.

    ``upstream`` is the cotangent of the block output (``(d, N)``).  ``dX`` has
    the same columns as ``X``: when only real columns were passed, gradients
    reaching virtual columns flow into ``virtual_init`` instead.
    """
    X = np.asarray(X, dtype=float)
    Xf = with_virtual(p, X, params)
    _validate(p, Xf)
    N = p.n_nodes
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (params.d, N):
        raise AttentionError(f"upstream must have shape ({params.d}, {N})")

    A, cache, F, scale = _attention(p, Xf, params, keep=True)
    _, Z, R = _feedforward(A, params)
    g = params.zeros_like()

    g.W2 = upstream @ R.T
    g.b2 = upstream.sum(axis=1)
    dZ = (params.W2.T @ upstream) * (Z > 0)
    g.W1 = dZ @ A.T
    g.b1 = dZ.sum(axis=1)
    dA = upstream + params.W1.T @ dZ

    XT = np.ascontiguousarray(Xf.T)
    dAT = np.ascontiguousarray(dA.T)
    dXT = dAT.copy()
    dF = np.zeros_like(F) if F is not None else None
    starts = p.indptr[:-1]
    S_src = _scatter_matrix(p.src, N)
    for j, (hp, (Ke, Qe, Ve, Ge, Kt, a, agg)) in enumerate(zip(params.heads, cache)):
        g.W_O[j] = dA @ agg
        dagg_e = (dAT @ hp.W_O)[p.dst]
        da = np.einsum("em,em->e", dagg_e, Ve)
        dVe = dagg_e * a[:, None]
        ds = a * (da - np.add.reduceat(a * da, starts)[p.dst]) * scale
        dKt = ds[:, None] * Qe
        dQe = ds[:, None] * Kt
        if Ge is not None:
            dKe = dKt * Ge
            dGe = dKt * Ke
            g.W_E[j] = dGe.T @ F
            dF += dGe @ hp.W_E
        else:
            dKe = dKt
        dKX = np.asarray(S_src @ dKe)
        dVX = np.asarray(S_src @ dVe)
        dQX = _segment_sum_rows(dQe, p)
        g.W_K[j] = dKX.T @ XT
        g.W_Q[j] = dQX.T @ XT
        g.W_V[j] = dVX.T @ XT
        dXT += dKX @ hp.W_K + dQX @ hp.W_Q + dVX @ hp.W_V
    dXf = dXT.T

    if dF is not None:
        local = p.kind == EdgeKind.LOCAL
        np.add.at(g.local_feat, p.feat[local], dF[local])
        np.add.at(g.kind_emb, p.kind[~local] - 1, dF[~local])

    if X.shape[1] == N:
        return Gradients(dXf, g)
    gv = params.virtual_init.shape[1]
    if p.n_virtual:
        dvirt = dXf[:, p.n_real:]
        g.virtual_init = dvirt.reshape(params.d, p.n_virtual // gv, gv).sum(axis=1)
    return Gradients(dXf[:, :p.n_real], g)


# -- dense oracle ------------------------------------------------------------

def dense_channels(p: AttentionPattern, params: LayerParams):
    """Per-kind dense masks ``(4, N, N)`` and features ``(4, N, N, d_E)``.

    Entry ``[c, i, u]`` describes the kind-``c`` edge ``u -> i``.  Separate
    channels keep a local edge and an expander edge on the same pair apart.
    """
    N = p.n_nodes
    mask = np.zeros((4, N, N), dtype=bool)
    feats = np.zeros((4, N, N, params.kind_emb.shape[1]))
    Fe = edge_feature_matrix(p, params)
    for e in range(p.num_edges):
        c, i, u = p.kind[e], p.dst[e], p.src[e]
        mask[c, i, u] = True
        feats[c, i, u] = Fe[e]
    return mask, feats


def dense_reference_forward(X: np.ndarray, params: LayerParams,
                            mask: Optional[np.ndarray] = None,
                            features: Optional[np.ndarray] = None) -> np.ndarray:
    """Attention with residual evaluated densely; used only as an oracle.

    Without ``mask`` every node attends to every node (itself included) with
    edge features off.  ``mask`` is ``(C, N, N)`` over (channel, query, key);
    absent entries get a ``-inf`` logit.  ``features`` (``(C, N, N, d_E)``)
    switches on the edge-feature factor.
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[1]
    if N > DENSE_ORACLE_MAX_N:
        raise AttentionError(f"dense oracle limited to N <= {DENSE_ORACLE_MAX_N}")
    if mask is None:
        mask = np.ones((1, N, N), dtype=bool)
    scale = 1.0 / np.sqrt(params.W_K.shape[1]) if params.scale_logits else 1.0
    out = X.copy()
    for hp in params.heads:
        K, Q, V = hp.W_K @ X, hp.W_Q @ X, hp.W_V @ X
        if features is None:
            logits = np.broadcast_to(Q.T @ K, mask.shape).copy()
        else:
            G = np.einsum("md,ciud->cium", hp.W_E, features)
            logits = np.einsum("cium,mu,mi->ciu", G, K, Q)
        logits = np.where(mask, logits * scale, -np.inf)
        flat = logits.transpose(1, 0, 2).reshape(N, -1)  # query x (channel, key)
        flat = flat - flat.max(axis=1, keepdims=True)
        w = np.exp(flat)
        w /= w.sum(axis=1, keepdims=True)
        w = w.reshape(N, mask.shape[0], N).sum(axis=1)  # query x key
        out += hp.W_O @ V @ w.T
    return out
