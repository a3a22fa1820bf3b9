"""Random regular expanders built from permutations.

Three constructions, all yielding d-regular multigraphs (d even) before any
self-loop removal:

* ``standard``: d/2 independent uniform permutations of the nodes; node
  ``i`` is joined to ``pi_j(i)`` for each one.
* ``simple``: one uniform permutation of the ``n*d/2`` slots of the sequence
  ``s = (0,..,0, 1,..,1, ...)`` (each node repeated d/2 times); slot ``i`` is
  joined to slot ``pi(i)``.
* ``hamiltonian``: d/2 independent uniform single-cycle permutations, so the
  graph is a union of d/2 Hamiltonian cycles.

All randomness comes from one :class:`numpy.random.Generator` (PCG64) seeded
from the config; ``Generator.permutation`` is a Fisher-Yates shuffle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .graph import MultiGraph, from_arrays
from .spectral import near_ramanujan_from_eigs, second_abs_eigenvalue, symmetric_eigh

RngLike = Union[int, np.random.Generator]


class Variant(str, enum.Enum):
    STANDARD = "standard"
    SIMPLE = "simple"
    HAMILTONIAN = "hamiltonian"


class RetriesExhausted(RuntimeError):
    def __init__(self, msg: str, best_bound: float):
        super().__init__(msg)
        self.best_bound = best_bound


def _rng(seed: RngLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if int(seed) < 0 or int(seed) >= 2 ** 64:
        raise ValueError("seed must be a non-negative 64-bit integer")
    return np.random.default_rng(int(seed))


def _check_nd(n: int, d: int) -> None:
    if d % 2:
        raise ValueError(f"degree must be even, got d={d}")
    if d < 2:
        raise ValueError(f"degree must be at least 2, got d={d}")
    if d >= n:
        raise ValueError(f"degree must be below n, got d={d}, n={n}")


@dataclass
class ExpanderConfig:
    n: int
    d: int
    variant: Variant = Variant.STANDARD
    seed: int = 0
    slack: Optional[float] = None  # additive; None means 0.1 * d
    max_retries: int = 20
    strip_self_loops: bool = True

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.n < 3:
            raise ValueError("expander needs n >= 3")
        _check_nd(self.n, self.d)
        if self.slack is None:
            self.slack = 0.1 * self.d
        if self.slack < 0:
            raise ValueError("slack must be non-negative")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")


@dataclass
class GenerationCertificate:
    variant: Variant
    seed: int
    retries: int  # rejected draws before the accepted one
    passed_spectral: bool
    achieved_bound: float
    threshold: float
    hamiltonian_cycles: Optional[list[list[int]]] = None
    loops_removed: int = 0
    post_strip_bound: Optional[float] = None

    def to_text(self) -> str:
        lines = [
            f"variant={self.variant.value}",
            f"seed={self.seed}",
            f"retries={self.retries}",
            f"passed_spectral={str(self.passed_spectral).lower()}",
            f"achieved_bound={self.achieved_bound!r}",
            f"threshold={self.threshold!r}",
            f"loops_removed={self.loops_removed}",
        ]
        if self.post_strip_bound is not None:
            lines.append(f"post_strip_bound={self.post_strip_bound!r}")
        if self.hamiltonian_cycles is not None:
            lines.append(f"hamiltonian_cycles={len(self.hamiltonian_cycles)}")
            for k, cyc in enumerate(self.hamiltonian_cycles):
                lines.append(f"cycle.{k}=" + " ".join(map(str, cyc)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GenerationCertificate":
        kv = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if "=" not in line:
                raise ValueError(f"certificate line {lineno}: expected key=value")
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
        cycles = None
        if "hamiltonian_cycles" in kv:
            cycles = [[int(x) for x in kv[f"cycle.{k}"].split()]
                      for k in range(int(kv["hamiltonian_cycles"]))]
        return cls(
            variant=Variant(kv["variant"]),
            seed=int(kv["seed"]),
            retries=int(kv["retries"]),
            passed_spectral=kv["passed_spectral"] == "true",
            achieved_bound=float(kv["achieved_bound"]),
            threshold=float(kv["threshold"]),
            hamiltonian_cycles=cycles,
            loops_removed=int(kv.get("loops_removed", 0)),
            post_strip_bound=float(kv["post_strip_bound"]) if "post_strip_bound" in kv else None,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "GenerationCertificate":
        return cls.from_text(Path(path).read_text())


# -- deterministic builders (no randomness) ---------------------------------

def graph_from_permutations(n: int, perms) -> MultiGraph:
    """Join ``i`` to ``perm[i]`` for every permutation; a fixed point is a loop."""
    perms = [np.asarray(p, dtype=np.int64) for p in perms]
    for p in perms:
        if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
            raise ValueError("not a permutation of 0..n-1")
    idx = np.arange(n)
    us = np.concatenate([idx] * len(perms)) if perms else np.zeros(0, np.int64)
    vs = np.concatenate(perms) if perms else np.zeros(0, np.int64)
    return from_arrays(n, us, vs)


def graph_from_pairing(n: int, d: int, perm) -> MultiGraph:
    """Single-permutation construction over the slot sequence ``s``."""
    _check_nd_loose(n, d)
    slots = np.repeat(np.arange(n, dtype=np.int64), d // 2)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != slots.shape or not np.array_equal(np.sort(perm), np.arange(slots.size)):
        raise ValueError(f"need a permutation of 0..{slots.size - 1}")
    return from_arrays(n, slots, slots[perm])


def _check_nd_loose(n, d):
    if d % 2 or d < 2:
        raise ValueError(f"degree must be even and >= 2, got d={d}")


def cycle_to_permutation(order) -> np.ndarray:
    """Map a node ordering to the single-cycle permutation visiting it in turn."""
    order = np.asarray(order, dtype=np.int64)
    perm = np.empty_like(order)
    perm[order] = np.roll(order, -1)
    return perm


def random_cycle_order(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform Hamiltonian cycle as a node ordering starting at node 0.

    Shuffling nodes ``1..n-1`` behind a fixed node 0 hits each of the
    ``(n-1)!`` single-cycle permutations exactly once.
    """
    return np.concatenate([[0], 1 + rng.permutation(n - 1)])


# -- random generators -----------------------------------------------------

def gen_standard(n: int, d: int, seed: RngLike) -> MultiGraph:
    _check_nd(n, d)
    rng = _rng(seed)
    return graph_from_permutations(n, [rng.permutation(n) for _ in range(d // 2)])


def gen_simple_variant(n: int, d: int, seed: RngLike) -> MultiGraph:
    _check_nd(n, d)
    rng = _rng(seed)
    return graph_from_pairing(n, d, rng.permutation(n * d // 2))


def gen_hamiltonian(n: int, d: int, seed: RngLike) -> tuple[MultiGraph, GenerationCertificate]:
    _check_nd(n, d)
    if n < 3:
        raise ValueError("Hamiltonian variant needs n >= 3")
    rng = _rng(seed)
    orders = [random_cycle_order(n, rng) for _ in range(d // 2)]
    g = graph_from_permutations(n, [cycle_to_permutation(o) for o in orders])
    cert = GenerationCertificate(
        variant=Variant.HAMILTONIAN,
        seed=seed if isinstance(seed, int) else -1,
        retries=0,
        passed_spectral=False,
        achieved_bound=float("nan"),
        threshold=float("nan"),
        hamiltonian_cycles=[o.tolist() for o in orders],
    )
    return g, cert


def draw(n: int, d: int, variant: Variant, rng: np.random.Generator):
    """One candidate graph plus its cycles (Hamiltonian variant only)."""
    variant = Variant(variant)
    if variant is Variant.STANDARD:
        return gen_standard(n, d, rng), None
    if variant is Variant.SIMPLE:
        return gen_simple_variant(n, d, rng), None
    g, cert = gen_hamiltonian(n, d, rng)
    return g, cert.hamiltonian_cycles


def valid_cycles(g: MultiGraph, cycles) -> bool:
    """Each cycle visits every node once and all its consecutive pairs are edges."""
    for cyc in cycles:
        cyc = np.asarray(cyc, dtype=np.int64)
        if cyc.shape != (g.n,) or not np.array_equal(np.sort(cyc), np.arange(g.n)):
            return False
        for u, v in zip(cyc, np.roll(cyc, -1)):
            if g.multiplicity(int(u), int(v)) == 0:
                return False
    return True


def generate_verified(cfg: ExpanderConfig) -> tuple[MultiGraph, GenerationCertificate]:
    """Draw until a candidate is near-Ramanujan, then optionally strip loops.

    The spectral test runs on the raw multigraph; the returned certificate
    describes that graph, with the post-strip bound recorded separately when
    loops were removed.
    """
    rng = _rng(cfg.seed)
    threshold = 2.0 * np.sqrt(cfg.d - 1) + cfg.slack
    best = float("inf")
    for attempt in range(cfg.max_retries):
        g, cycles = draw(cfg.n, cfg.d, cfg.variant, rng)
        ok, achieved = near_ramanujan_from_eigs(symmetric_eigh(g.adjacency())[::-1], cfg.d, cfg.slack)
        best = min(best, achieved)
        if not ok:
            continue
        cert = GenerationCertificate(
            variant=cfg.variant,
            seed=cfg.seed,
            retries=attempt,
            passed_spectral=True,
            achieved_bound=achieved,
            threshold=float(threshold),
            hamiltonian_cycles=cycles,
        )
        if cfg.strip_self_loops:
            stripped = g.without_self_loops()
            cert.loops_removed = (g.num_edges - stripped.num_edges)
            if cert.loops_removed:
                cert.post_strip_bound = second_abs_eigenvalue(symmetric_eigh(stripped.adjacency())[::-1])
            g = stripped
        return g, cert
    raise RetriesExhausted(
        f"no near-Ramanujan draw in {cfg.max_retries} tries (best {best:.4f} > {threshold:.4f})",
        best,
    )
