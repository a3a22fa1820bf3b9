"""Attention patterns: which (key, query) pairs the sparse layer evaluates.

An :class:`AttentionPattern` is a directed graph over ``n_real`` graph nodes
followed by ``n_virtual`` virtual nodes (ids ``n_real .. n_real+g-1``).  Each
edge ``src -> dst`` means node ``dst`` attends to node ``src`` and carries one
:class:`EdgeKind` label.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .expander import ExpanderConfig, GenerationCertificate, generate_verified
from .graph import MultiGraph

FORMAT_MAGIC = "EXPH"
FORMAT_VERSION = 1


class PatternError(ValueError):
    pass


class EdgeKind(enum.IntEnum):
    LOCAL = 0
    EXPANDER = 1
    GLOBAL = 2
    SELF_LOOP = 3

    @property
    def tag(self) -> str:
        return "LXGS"[self]

    @classmethod
    def from_tag(cls, tag: str) -> "EdgeKind":
        try:
            return cls("LXGS".index(tag))
        except ValueError:
            raise PatternError(f"unknown edge kind tag {tag!r}") from None


KIND_NAMES = {EdgeKind.LOCAL: "Local", EdgeKind.EXPANDER: "Expander",
              EdgeKind.GLOBAL: "Global", EdgeKind.SELF_LOOP: "SelfLoop"}


@dataclass(eq=False)
class AttentionPattern:
    n_real: int
    n_virtual: int
    src: np.ndarray
    dst: np.ndarray
    kind: np.ndarray
    feat: np.ndarray  # dataset edge-feature index, -1 when absent
    used_local: bool = False
    used_expander: bool = False
    used_global: bool = False
    used_self_loops: bool = False
    indptr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.kind = np.asarray(self.kind, dtype=np.int64)
        self.feat = np.asarray(self.feat, dtype=np.int64)
        order = np.lexsort((self.kind, self.src, self.dst))
        self.src, self.dst = self.src[order], self.dst[order]
        self.kind, self.feat = self.kind[order], self.feat[order]
        self.indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(self.indptr, self.dst + 1, 1)
        np.cumsum(self.indptr, out=self.indptr)

    @property
    def n_nodes(self) -> int:
        return self.n_real + self.n_virtual

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    @property
    def flags(self) -> str:
        return "".join("1" if f else "0" for f in (
            self.used_local, self.used_expander, self.used_global, self.used_self_loops))

    def in_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def incoming(self, i: int):
        """Edges into ``i`` as ``(src, kind, feat)`` rows."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return [(int(s), EdgeKind(k), int(f)) for s, k, f in
                zip(self.src[lo:hi], self.kind[lo:hi], self.feat[lo:hi])]

    def edge_set(self, kind: Optional[EdgeKind] = None) -> set:
        sel = slice(None) if kind is None else self.kind == kind
        return set(zip(self.src[sel].tolist(), self.dst[sel].tolist()))

    def __eq__(self, other):
        if not isinstance(other, AttentionPattern):
            return NotImplemented
        return (self.n_real == other.n_real and self.n_virtual == other.n_virtual
                and self.flags == other.flags
                and all(np.array_equal(a, b) for a, b in (
                    (self.src, other.src), (self.dst, other.dst),
                    (self.kind, other.kind), (self.feat, other.feat))))

    def __repr__(self):
        return (f"AttentionPattern(n_real={self.n_real}, n_virtual={self.n_virtual}, "
                f"edges={self.num_edges}, flags={self.flags})")


def check_invariants(p: AttentionPattern) -> None:
    """Raise :class:`PatternError` if ``p`` violates any structural rule."""
    N = p.n_nodes
    if p.src.size and (p.src.min() < 0 or p.src.max() >= N or p.dst.min() < 0 or p.dst.max() >= N):
        raise PatternError("edge endpoint out of range")
    if np.any((p.kind < 0) | (p.kind > 3)):
        raise PatternError("edge kind outside the closed enumeration")
    key = (p.dst * N + p.src) * 4 + p.kind
    if np.unique(key).size != key.size:
        raise PatternError("duplicate (src, dst, kind) edge")
    local = p.edge_set(EdgeKind.LOCAL)
    if any((v, u) not in local for u, v in local):
        raise PatternError("local edges are not bidirectional")
    xs = p.kind == EdgeKind.EXPANDER
    if np.any(p.src[xs] >= p.n_real) or np.any(p.dst[xs] >= p.n_real):
        raise PatternError("expander edge touches a virtual node")
    gs = p.edge_set(EdgeKind.GLOBAL)
    want = {(v, u) for v in range(p.n_real, N) for u in range(p.n_real)}
    want |= {(u, v) for v, u in want}
    if p.used_global and gs != want:
        raise PatternError("global edges do not join every virtual/real pair both ways")
    if not p.used_global and gs:
        raise PatternError("global edges present but global component unused")
    loops = p.edge_set(EdgeKind.SELF_LOOP)
    if p.used_self_loops and loops != {(i, i) for i in range(N)}:
        raise PatternError("self-loops missing on some node")
    if not p.used_self_loops and loops:
        raise PatternError("self-loops present but disabled")
    nonlocal_feat = p.feat[p.kind != EdgeKind.LOCAL]
    if np.any(nonlocal_feat != -1):
        raise PatternError("only local edges may carry dataset feature indices")


@dataclass
class PatternConfig:
    use_local: bool = True
    expander: Optional[ExpanderConfig] = None
    num_virtual: int = 1
    self_loops: bool = True

    def __post_init__(self):
        if self.num_virtual < 0:
            raise PatternError("num_virtual must be non-negative")
        if not (self.use_local or self.expander is not None or self.num_virtual > 0):
            raise PatternError("pattern config enables no component")


def build_pattern(g: MultiGraph, cfg: PatternConfig,
                  local_features: Optional[Mapping[tuple[int, int], int]] = None,
                  ) -> tuple[AttentionPattern, Optional[GenerationCertificate]]:
    """Assemble local, expander, global and self-loop edges over ``g``.

    ``local_features`` maps an undirected input edge ``(u, v)`` with ``u < v``
    to its dataset edge-feature row; edges without an entry use row 0.
    """
    n, gv = g.n, cfg.num_virtual
    src, dst, kind, feat = [], [], [], []

    def add(s, t, k, f):
        src.append(np.asarray(s, dtype=np.int64))
        dst.append(np.asarray(t, dtype=np.int64))
        kind.append(np.full(len(src[-1]), int(k), dtype=np.int64))
        feat.append(np.broadcast_to(np.asarray(f, dtype=np.int64), src[-1].shape).copy())

    if cfg.use_local:
        pairs = g.simple_edges() + [(u, u) for u, v, _ in g.edges() if u == v]
        if pairs:
            us = np.array([u for u, _ in pairs])
            vs = np.array([v for _, v in pairs])
            fs = np.array([(local_features or {}).get((u, v), 0) for u, v in pairs])
            off = us != vs
            add(np.concatenate([us, vs[off]]), np.concatenate([vs, us[off]]),
                EdgeKind.LOCAL, np.concatenate([fs, fs[off]]))

    cert = None
    if cfg.expander is not None:
        if cfg.expander.n != n:
            raise PatternError(f"expander built for n={cfg.expander.n}, graph has n={n}")
        xg, cert = generate_verified(cfg.expander)
        pairs = [(u, v) for u, v, _ in xg.edges()]
        us = np.array([u for u, _ in pairs], dtype=np.int64)
        vs = np.array([v for _, v in pairs], dtype=np.int64)
        off = us != vs
        add(np.concatenate([us, vs[off]]), np.concatenate([vs, us[off]]), EdgeKind.EXPANDER, -1)

    if gv:
        virt = np.repeat(np.arange(n, n + gv), n)
        real = np.tile(np.arange(n), gv)
        add(np.concatenate([virt, real]), np.concatenate([real, virt]), EdgeKind.GLOBAL, -1)

    if cfg.self_loops:
        ids = np.arange(n + gv)
        add(ids, ids, EdgeKind.SELF_LOOP, -1)

    p = _assemble(n, gv, src, dst, kind, feat,
                  used_local=cfg.use_local, used_expander=cfg.expander is not None,
                  used_global=gv > 0, used_self_loops=cfg.self_loops)
    check_invariants(p)
    return p, cert


def _assemble(n_real, n_virtual, src, dst, kind, feat, **flags) -> AttentionPattern:
    if src:
        s, t, k, f = (np.concatenate(x) for x in (src, dst, kind, feat))
    else:
        s = t = k = f = np.zeros(0, dtype=np.int64)
    N = n_real + n_virtual
    key = (t * N + s) * 4 + k
    _, first = np.unique(key, return_index=True)
    return AttentionPattern(n_real, n_virtual, s[first], t[first], k[first], f[first], **flags)


def edge_budget(p: AttentionPattern) -> dict[str, int]:
    counts = np.bincount(p.kind, minlength=4)
    out = {KIND_NAMES[k]: int(counts[k]) for k in EdgeKind}
    out["total"] = int(counts.sum())
    return out


def budget_bound(num_local_edges: int, n: int, expander_d: int, num_virtual: int,
                 self_loops: bool = True) -> int:
    """Closed-form directed edge count with no overlap or deduplication."""
    return (2 * num_local_edges + n * expander_d + 2 * num_virtual * n
            + ((n + num_virtual) if self_loops else 0))


@dataclass(frozen=True)
class UniversalityReport:
    star: bool
    hamiltonian: bool
    self_loops: bool

    @property
    def satisfied(self) -> bool:
        return self.self_loops and (self.star or self.hamiltonian)


def universality_precondition(p: AttentionPattern,
                              cert: Optional[GenerationCertificate] = None) -> UniversalityReport:
    """Mechanical check of the preconditions for universal approximation.

    ``star``: some node is joined both ways to every other real node.
    ``hamiltonian``: the certificate lists Hamiltonian cycles whose edges are
    all present as expander edges (no Hamiltonicity search is attempted).
    """
    N = p.n_nodes
    off = p.src != p.dst
    M = sp.csr_matrix((np.ones(off.sum(), dtype=bool), (p.dst[off], p.src[off])), shape=(N, N))
    both = M.multiply(M.T).tocsr()
    real_cols = both[:, :p.n_real]
    reach = np.asarray(real_cols.sum(axis=1)).ravel()
    need = np.full(N, p.n_real)
    need[:p.n_real] -= 1
    star = bool(np.any(reach >= need))

    loops = p.edge_set(EdgeKind.SELF_LOOP)
    self_loops = N > 0 and all((i, i) in loops for i in range(N))

    hamiltonian = False
    if cert is not None and cert.hamiltonian_cycles:
        xe = p.edge_set(EdgeKind.EXPANDER)
        hamiltonian = True
        for cyc in cert.hamiltonian_cycles:
            if sorted(cyc) != list(range(p.n_real)):
                hamiltonian = False
                break
            for u, v in zip(cyc, cyc[1:] + cyc[:1]):
                if (u, v) not in xe or (v, u) not in xe:
                    hamiltonian = False
                    break
    return UniversalityReport(star=star, hamiltonian=hamiltonian, self_loops=self_loops)


def reachability_layers(p: AttentionPattern) -> float:
    """Fewest stacked layers after which every real node has heard every other.

    This is the largest directed hop distance between real nodes (paths may
    pass through virtual nodes); ``inf`` if some real pair is unreachable.
    """
    if p.n_real <= 1:
        return 0
    N = p.n_nodes
    A = sp.csr_matrix((np.ones(p.num_edges), (p.src, p.dst)), shape=(N, N))
    D = shortest_path(A, method="D", directed=True, unweighted=True,
                      indices=np.arange(p.n_real))[:, :p.n_real]
    worst = D.max()
    return float("inf") if np.isinf(worst) else int(worst)


# -- derived patterns ------------------------------------------------------

def complete_pattern(n: int, self_loops: bool = True) -> AttentionPattern:
    """Every ordered pair as a local edge (feature row 0), plus self-loops."""
    s, t = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    off = (s != t).ravel()
    src, dst = [s.ravel()[off]], [t.ravel()[off]]
    kind, feat = [np.zeros(off.sum(), np.int64)], [np.zeros(off.sum(), np.int64)]
    if self_loops:
        src.append(np.arange(n)); dst.append(np.arange(n))
        kind.append(np.full(n, int(EdgeKind.SELF_LOOP))); feat.append(np.full(n, -1))
    return _assemble(n, 0, src, dst, kind, feat, used_local=True, used_self_loops=self_loops)


def permute_pattern(p: AttentionPattern, perm: Sequence[int]) -> AttentionPattern:
    """Relabel real node ``u`` as ``perm[u]``; virtual ids stay put."""
    perm = np.asarray(perm, dtype=np.int64)
    full = np.concatenate([perm, np.arange(p.n_real, p.n_nodes)])
    return AttentionPattern(p.n_real, p.n_virtual, full[p.src], full[p.dst], p.kind, p.feat,
                            p.used_local, p.used_expander, p.used_global, p.used_self_loops)


def disjoint_union(patterns: Sequence[AttentionPattern]) -> AttentionPattern:
    """Block-diagonal union for batching.

    Real nodes of all members come first (in member order), then their
    virtual nodes (also in member order), so virtual node ``k`` of member
    ``b`` sits at ``sum(n_real) + b * g + k`` when every member has ``g``.
    The result is a batching device and deliberately skips
    :func:`check_invariants` (its global edges are per-member).
    """
    R = sum(p.n_real for p in patterns)
    src, dst = [], []
    r_off = v_off = 0
    for p in patterns:
        remap = np.concatenate([np.arange(p.n_real) + r_off, np.arange(p.n_virtual) + R + v_off])
        src.append(remap[p.src]); dst.append(remap[p.dst])
        r_off += p.n_real
        v_off += p.n_virtual
    cat = (lambda xs: np.concatenate(xs) if xs else np.zeros(0, np.int64))
    return AttentionPattern(
        R, v_off, cat(src), cat(dst), cat([p.kind for p in patterns]), cat([p.feat for p in patterns]),
        any(p.used_local for p in patterns), any(p.used_expander for p in patterns),
        any(p.used_global for p in patterns), any(p.used_self_loops for p in patterns))


# -- text format -----------------------------------------------------------

def export_pattern(p: AttentionPattern, path) -> None:
    """Write the v1 text format: header, one ``src dst kind featidx`` line per edge, ``END m``."""
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION} {p.n_real} {p.n_virtual} {p.flags}"]
    tags = np.array(list("LXGS"))[p.kind]
    lines += [f"{s} {t} {k} {f}" for s, t, k, f in zip(p.src.tolist(), p.dst.tolist(), tags, p.feat.tolist())]
    lines.append(f"END {p.num_edges}")
    Path(path).write_text("\n".join(lines) + "\n")


def import_pattern(path) -> AttentionPattern:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise PatternError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != FORMAT_MAGIC:
        raise PatternError(f"{path}:1: bad header, expected '{FORMAT_MAGIC} <ver> n_real n_virtual flags'")
    if head[1] != str(FORMAT_VERSION):
        raise PatternError(f"{path}:1: unsupported format version {head[1]}")
    try:
        n_real, n_virtual = int(head[2]), int(head[3])
    except ValueError:
        raise PatternError(f"{path}:1: node counts must be integers") from None
    flags = head[4]
    if len(flags) != 4 or set(flags) - {"0", "1"}:
        raise PatternError(f"{path}:1: flags must be four 0/1 characters")
    src, dst, kind, feat = [], [], [], []
    last_ok = 1
    ended = False
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if ended:
            raise PatternError(f"{path}:{lineno}: content after END")
        if parts[0] == "END":
            if len(parts) != 2 or parts[1] != str(len(src)):
                raise PatternError(f"{path}:{lineno}: END count does not match {len(src)} edges read")
            ended = True
            continue
        if len(parts) != 4:
            raise PatternError(f"{path}:{lineno}: expected 'src dst kind featidx' "
                               f"(last valid line {last_ok})")
        try:
            s, t, f = int(parts[0]), int(parts[1]), int(parts[3])
        except ValueError:
            raise PatternError(f"{path}:{lineno}: non-integer field (last valid line {last_ok})") from None
        try:
            k = EdgeKind.from_tag(parts[2])
        except PatternError as exc:
            raise PatternError(f"{path}:{lineno}: {exc}") from None
        src.append(s); dst.append(t); kind.append(int(k)); feat.append(f)
        last_ok = lineno
    if not ended:
        raise PatternError(f"{path}: truncated, no END line (last valid line {last_ok})")
    p = AttentionPattern(n_real, n_virtual, src, dst, kind, feat,
                         *(c == "1" for c in flags))
    try:
        check_invariants(p)
    except PatternError as exc:
        raise PatternError(f"{path}: {exc}") from None
    return p
