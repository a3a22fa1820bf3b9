"""Desk-scale training on synthetic node-classification tasks.

Two tasks:

``global-mean`` (GlobalMeanSign)
    Edgeless graphs whose nodes carry one scalar ``x = c + u`` with a
    per-graph offset ``c`` and ``u ~ U[0, 1]``; a node is labelled 1 iff its
    value exceeds its graph's mean.  The offset makes a node's own value
    nearly useless on its own, so only patterns that route information
    between nodes (virtual nodes, expander edges) can beat chance.
``planted`` (PlantedPartition)
    Two-block stochastic block model graphs; one node per block reveals its
    block in a one-hot feature, everyone else must infer it.

The model is an input projection, a stack of attention blocks and a linear
readout over real-node columns, trained by Adam on softmax cross-entropy.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .attention import (LayerDims, LayerParams, PARAM_NAMES, attn_backward, param_init,
                        transformer_block_forward)
from .expander import ExpanderConfig
from .graph import MultiGraph, empty_graph, from_arrays
from .pattern import AttentionPattern, PatternConfig, build_pattern, disjoint_union, edge_budget

log = logging.getLogger(__name__)


class TaskKind(str, enum.Enum):
    GLOBAL_MEAN_SIGN = "global-mean"
    PLANTED_PARTITION = "planted"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass
class GraphSample:
    graph: MultiGraph
    features: np.ndarray  # (n, f)
    labels: np.ndarray    # (n,)


@dataclass
class SyntheticTask:
    kind: TaskKind
    graphs: list[GraphSample]
    train_idx: np.ndarray
    test_idx: np.ndarray
    num_classes: int = 2
    seed: int = 0

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].features.shape[1]


def global_mean_sign_labels(x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x > x.mean()).astype(np.int64)


def make_task(kind, n_graphs: int, nodes_per_graph: int, seed: int, *,
              offset: float = 4.0, p_in: float = 0.5, p_out: float = 0.05,
              test_fraction: float = 0.2) -> SyntheticTask:
    """Deterministic synthetic dataset; see the module docstring for the tasks."""
    kind = TaskKind(kind)
    if n_graphs < 2 or nodes_per_graph < 4:
        raise ValueError("need at least 2 graphs of at least 4 nodes")
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(n_graphs):
        if kind is TaskKind.GLOBAL_MEAN_SIGN:
            graphs.append(_global_mean_sample(nodes_per_graph, offset, rng))
        else:
            graphs.append(_planted_sample(nodes_per_graph, p_in, p_out, rng))
    order = rng.permutation(n_graphs)
    n_test = max(1, int(round(test_fraction * n_graphs)))
    return SyntheticTask(kind, graphs, np.sort(order[n_test:]), np.sort(order[:n_test]), 2, seed)


def _global_mean_sample(n, offset, rng):
    while True:
        x = rng.uniform(-offset, offset) + rng.uniform(0.0, 1.0, size=n)
        y = global_mean_sign_labels(x)
        if 0.4 <= y.mean() <= 0.6:
            return GraphSample(empty_graph(n), x[:, None], y)


def _planted_sample(n, p_in, p_out, rng):
    blocks = np.arange(n) % 2
    rng.shuffle(blocks)
    iu, ju = np.triu_indices(n, k=1)
    same = blocks[iu] == blocks[ju]
    keep = rng.random(iu.size) < np.where(same, p_in, p_out)
    g = from_arrays(n, iu[keep], ju[keep])
    feats = np.zeros((n, 2))
    for b in (0, 1):
        seed_node = rng.choice(np.flatnonzero(blocks == b))
        feats[seed_node, b] = 1.0
    return GraphSample(g, feats, blocks.astype(np.int64))


@dataclass
class TrainConfig:
    layers: int = 2
    model_dim: int = 16
    heads: int = 2
    head_dim: int = 8
    ff_dim: int = 32
    edge_dim: int = 4
    pattern: PatternConfig = field(default_factory=PatternConfig)
    steps: int = 1000
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    edge_features: bool = True

    def __post_init__(self):
        for f in ("layers", "model_dim", "heads", "head_dim", "ff_dim", "edge_dim", "batch_size"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


@dataclass
class TrainReport:
    losses: list[float]
    train_accuracy: float
    test_accuracy: float
    initial_train_accuracy: float
    initial_test_accuracy: float
    step_seconds: list[float]
    edge_budget: dict[str, int]

    @property
    def mean_step_seconds(self) -> float:
        return float(np.mean(self.step_seconds)) if self.step_seconds else 0.0


# -- model -----------------------------------------------------------------

@dataclass
class Model:
    W_in: np.ndarray
    b_in: np.ndarray
    blocks: list[LayerParams]
    W_out: np.ndarray
    b_out: np.ndarray

    def tensors(self) -> list[np.ndarray]:
        out = [self.W_in, self.b_in, self.W_out, self.b_out]
        for blk in self.blocks:
            out += [getattr(blk, k) for k in PARAM_NAMES]
        return out


def init_model(cfg: TrainConfig, feature_dim: int, num_classes: int) -> Model:
    rng = np.random.default_rng(cfg.seed)
    d = cfg.model_dim

    def glorot(rows, cols):
        a = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-a, a, size=(rows, cols))

    blocks = []
    for layer in range(cfg.layers):
        dims = LayerDims(d=d, h=cfg.heads, m=cfg.head_dim, r=cfg.ff_dim, d_e=cfg.edge_dim,
                         n_local_feat=1, n_virtual=cfg.pattern.num_virtual if layer == 0 else 0)
        blk = param_init(dims, int(rng.integers(2 ** 63)))
        blk.edge_features = cfg.edge_features
        blocks.append(blk)
    return Model(glorot(d, feature_dim), np.zeros(d), blocks,
                 glorot(num_classes, d), np.zeros(num_classes))


def forward(model: Model, p: AttentionPattern, feats: np.ndarray):
    """Logits ``(C, n_real)`` plus the activations needed for backward."""
    H = model.W_in @ feats.T + model.b_in[:, None]
    acts = [H]
    for blk in model.blocks:
        H = transformer_block_forward(p, H, blk)
        acts.append(H)
    logits = model.W_out @ H[:, :p.n_real] + model.b_out[:, None]
    return logits, acts


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=0, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=0, keepdims=True))
    n = labels.size
    loss = -logp[labels, np.arange(n)].mean()
    grad = np.exp(logp)
    grad[labels, np.arange(n)] -= 1.0
    return float(loss), grad / n


def backward(model: Model, p: AttentionPattern, feats: np.ndarray, acts, dlogits) -> list[np.ndarray]:
    """Gradients in the order of :meth:`Model.tensors`."""
    H_last = acts[-1]
    g_Wout = dlogits @ H_last[:, :p.n_real].T
    g_bout = dlogits.sum(axis=1)
    dH = np.zeros_like(H_last)
    dH[:, :p.n_real] = model.W_out.T @ dlogits
    block_grads = [None] * len(model.blocks)
    for layer in reversed(range(len(model.blocks))):
        gr = attn_backward(p, acts[layer], model.blocks[layer], dH)
        block_grads[layer] = gr.params
        dH = gr.dX
    g_Win = dH @ feats
    g_bin = dH.sum(axis=1)
    out = [g_Win, g_bin, g_Wout, g_bout]
    for gp in block_grads:
        out += [getattr(gp, k) for k in PARAM_NAMES]
    return out


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.params, self.lr, self.betas, self.eps = params, lr, betas, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- patterns and batching ----------------------------------------------------

def graph_seed(task_seed: int, index: int) -> int:
    """Per-graph expander seed derived from (task seed, graph index)."""
    return int(np.random.SeedSequence([task_seed, index]).generate_state(1, np.uint64)[0])


def build_patterns(task: SyntheticTask, pcfg: PatternConfig) -> list[AttentionPattern]:
    out = []
    for i, sample in enumerate(task.graphs):
        cfg_i = pcfg
        if pcfg.expander is not None:
            cfg_i = replace(pcfg, expander=replace(pcfg.expander, n=sample.graph.n,
                                                   seed=graph_seed(task.seed, i)))
        out.append(build_pattern(sample.graph, cfg_i)[0])
    return out


def _batch(task, patterns, idx):
    p = disjoint_union([patterns[i] for i in idx])
    feats = np.vstack([task.graphs[i].features for i in idx])
    labels = np.concatenate([task.graphs[i].labels for i in idx])
    return p, feats, labels


def evaluate(model: Model, task: SyntheticTask, patterns, idx) -> float:
    if len(idx) == 0:
        return float("nan")
    p, feats, labels = _batch(task, patterns, idx)
    logits, _ = forward(model, p, feats)
    return float((logits.argmax(axis=0) == labels).mean())


def train_loop(task: SyntheticTask, cfg: TrainConfig) -> TrainReport:
    patterns = build_patterns(task, cfg.pattern)
    model = init_model(cfg, task.feature_dim, task.num_classes)
    opt = Adam(model.tensors(), cfg.lr, cfg.betas, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed + 1)

    init_train = evaluate(model, task, patterns, task.train_idx)
    init_test = evaluate(model, task, patterns, task.test_idx)
    losses, times = [], []
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        idx = rng.choice(task.train_idx, size=min(cfg.batch_size, task.train_idx.size), replace=False)
        p, feats, labels = _batch(task, patterns, idx)
        logits, acts = forward(model, p, feats)
        loss, dlogits = cross_entropy(logits, labels)
        if not np.isfinite(loss):
            raise TrainingDiverged(step)
        opt.step(backward(model, p, feats, acts, dlogits))
        losses.append(loss)
        times.append(time.perf_counter() - t0)
        if step % 250 == 0:
            log.debug("step %d loss %.4f", step, loss)

    budget: dict[str, int] = {}
    for pt in patterns:
        for k, v in edge_budget(pt).items():
            budget[k] = budget.get(k, 0) + v
    return TrainReport(
        losses=losses,
        train_accuracy=evaluate(model, task, patterns, task.train_idx),
        test_accuracy=evaluate(model, task, patterns, task.test_idx),
        initial_train_accuracy=init_train,
        initial_test_accuracy=init_test,
        step_seconds=times,
        edge_budget=budget,
    )


# -- gradient checking ----------------------------------------------------

@dataclass
class GradcheckEntry:
    label: str
    max_rel_err: dict[str, float]
    grad_norms: dict[str, float]
    skipped: Optional[str] = None

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values()) if self.max_rel_err else 0.0


@dataclass
class GradcheckReport:
    entries: list[GradcheckEntry]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e.skipped or e.worst <= self.tolerance for e in self.entries)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if den == 0.0 else float(num / den)


def finite_difference(fn, base: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn`` around ``base``."""
    out = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += step
        minus[idx] -= step
        out[idx] = (fn(plus) - fn(minus)) / (2 * step)
    return out


def check_layer_gradients(p: AttentionPattern, X: np.ndarray, params: LayerParams,
                          upstream: np.ndarray, step: float = 1e-5):
    """Relative error of :func:`attn_backward` per parameter group (and ``X``)."""
    grads = attn_backward(p, X, params, upstream)

    def loss(prm, XX):
        return float((transformer_block_forward(p, XX, prm) * upstream).sum())

    errs, norms = {}, {}
    for name in PARAM_NAMES + ("X",):
        if name == "X":
            num = finite_difference(lambda B: loss(params, B), X, step)
        else:
            num = finite_difference(lambda B: loss(params.replace(**{name: B}), X),
                                    getattr(params, name), step)
        errs[name] = relative_error(grads[name], num)
        norms[name] = float(np.linalg.norm(grads[name]))
    return errs, norms


def random_instance(p: AttentionPattern, seed: int, n_local_feat: int = 3, real_only: bool = True):
    """Small random layer, input and cotangent for gradient or oracle checks."""
    rng = np.random.default_rng(seed)
    d = 4
    dims = LayerDims(d=d, h=2, m=3, r=5, d_e=3, n_local_feat=n_local_feat,
                     n_virtual=min(p.n_virtual, 2) if p.n_virtual else 0)
    if p.n_virtual and p.n_virtual % dims.n_virtual:
        dims = replace(dims, n_virtual=p.n_virtual)
    params = param_init(dims, int(rng.integers(2 ** 32)))
    params = params.replace(b1=rng.normal(scale=0.1, size=params.b1.shape),
                            b2=rng.normal(scale=0.1, size=params.b2.shape))
    X = rng.normal(size=(d, p.n_real if real_only else p.n_nodes))
    U = rng.normal(size=(d, p.n_nodes))
    return params, X, U


def gradcheck_suite(seed: int = 0, n: int = 10, tolerance: float = 1e-5) -> GradcheckReport:
    """Finite-difference check across every present/absent combination of edge kinds."""
    rng = np.random.default_rng(seed)
    base = np.arange(n)
    extra = rng.integers(0, n, size=(n // 2, 2))
    g = from_arrays(n, np.concatenate([base[:-1], extra[:, 0]]), np.concatenate([base[1:], extra[:, 1]]))
    local_feats = {(u, v): int(rng.integers(3)) for u, v in g.simple_edges()}
    entries = []
    for mask in range(16):
        local, expander, glob, loops = (bool(mask >> b & 1) for b in range(4))
        label = "".join(t for t, on in zip(("L", "X", "G", "S"), (local, expander, glob, loops)) if on)
        if not (local or expander or glob):
            continue
        cfg = PatternConfig(
            use_local=local,
            expander=ExpanderConfig(n, 4, "hamiltonian", seed=seed, slack=10.0) if expander else None,
            num_virtual=1 if glob else 0,
            self_loops=loops)
        p, _ = build_pattern(g, cfg, local_feats)
        if np.any(p.in_degree() == 0):
            entries.append(GradcheckEntry(label, {}, {}, skipped="node without incoming edge"))
            continue
        params, X, U = random_instance(p, seed * 97 + mask)
        errs, norms = check_layer_gradients(p, X, params, U)
        entries.append(GradcheckEntry(label, errs, norms))
    return GradcheckReport(entries, tolerance)
