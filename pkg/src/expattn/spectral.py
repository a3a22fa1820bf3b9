"""Spectral certification of (multi)graphs.

Everything here is dense linear algebra: the budget is ``n <= 5000`` and the
symmetric eigendecomposition is LAPACK's (through :func:`numpy.linalg.eigh`).
Interior eigenvalues are needed for ``max(|l2|, |ln|)``, which rules out the
cheaper iterative solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import MultiGraph, GraphError, is_bipartite, is_connected, transition_matrix

MAX_DENSE_N = 5000
# absolute slack on eigenvalue comparisons, scaled by max(1, d)
EIG_TOL = 1e-9


class SpectralError(ValueError):
    pass


class NoConvergence(RuntimeError):
    """Random walk failed to reach the target distance from uniform."""


def symmetric_eigh(A: np.ndarray, vectors: bool = False):
    """Eigenvalues (ascending) and optionally eigenvectors of a symmetric matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SpectralError("matrix must be square")
    if A.shape[0] > MAX_DENSE_N:
        raise SpectralError(f"n={A.shape[0]} exceeds dense eigensolver budget {MAX_DENSE_N}")
    if vectors:
        return np.linalg.eigh(A)
    return np.linalg.eigvalsh(A)


@dataclass
class SpectralReport:
    n: int
    d_max: int
    eigenvalues: np.ndarray  # adjacency spectrum, descending
    regular: bool
    epsilon: Optional[float]
    second_abs: float  # max(|lambda_2|, |lambda_n|)
    ramanujan_margin: Optional[float]
    laplacian_nontrivial_range: tuple[float, float]

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "d_max": self.d_max,
            "regular": self.regular,
            "epsilon": self.epsilon,
            "achieved_bound": self.second_abs,
            "ramanujan_margin": self.ramanujan_margin,
            "laplacian_min": self.laplacian_nontrivial_range[0],
            "laplacian_max": self.laplacian_nontrivial_range[1],
        }


def second_abs_eigenvalue(eigs_desc: np.ndarray) -> float:
    return float(max(abs(eigs_desc[1]), abs(eigs_desc[-1])))


def ramanujan_threshold(d: int) -> float:
    return 2.0 * math.sqrt(d - 1)


def laplacian(g: MultiGraph) -> np.ndarray:
    A = g.adjacency()
    return np.diag(g.degrees().astype(float)) - A


def adjacency_spectrum(g: MultiGraph) -> SpectralReport:
    if g.n < 2:
        raise SpectralError("spectrum needs at least two nodes")
    if g.n > MAX_DENSE_N:
        raise SpectralError(f"n={g.n} exceeds dense eigensolver budget {MAX_DENSE_N}")
    eigs = symmetric_eigh(g.adjacency())[::-1].copy()
    deg = g.degrees()
    d_max = int(deg.max())
    regular = g.is_regular()
    lap = symmetric_eigh(laplacian(g))
    second = second_abs_eigenvalue(eigs)
    eps = margin = None
    if regular:
        d = int(deg[0])
        eps = second / d if d > 0 else None
        if d >= 1:
            margin = ramanujan_threshold(d) - second
    return SpectralReport(
        n=g.n,
        d_max=d_max,
        eigenvalues=eigs,
        regular=regular,
        epsilon=eps,
        second_abs=second,
        ramanujan_margin=margin,
        laplacian_nontrivial_range=(float(lap[1]), float(lap[-1])),
    )


def _regular_degree(g: MultiGraph) -> int:
    if not g.is_regular():
        raise SpectralError("graph is not regular")
    return int(g.degrees()[0])


def is_epsilon_expander(g: MultiGraph, eps: float) -> bool:
    d = _regular_degree(g)
    second = second_abs_eigenvalue(adjacency_spectrum(g).eigenvalues)
    return second <= eps * d + EIG_TOL * max(1, d)


def is_near_ramanujan(g: MultiGraph, slack: float) -> tuple[bool, float]:
    """Check ``max(|l2|, |ln|) <= 2 sqrt(d-1) + slack``; returns (ok, achieved)."""
    d = _regular_degree(g)
    eigs = symmetric_eigh(g.adjacency())[::-1]
    return near_ramanujan_from_eigs(eigs, d, slack)


def near_ramanujan_from_eigs(eigs_desc: np.ndarray, d: int, slack: float) -> tuple[bool, float]:
    achieved = second_abs_eigenvalue(eigs_desc)
    ok = achieved <= ramanujan_threshold(d) + slack + EIG_TOL * max(1, d)
    return ok, achieved


def laplacian_approx_check(g: MultiGraph, eps: float) -> bool:
    """Whether every nontrivial Laplacian eigenvalue lies in ``[d(1-eps), d(1+eps)]``.

    For a d-regular graph this is the sandwich
    ``(1-eps) L_K / n <= L_G / d <= (1+eps) L_K / n`` on the complement of the
    all-ones vector, since ``L_K`` acts there as ``n * I``.
    """
    d = _regular_degree(g)
    if not is_connected(g):
        raise SpectralError("graph is disconnected")
    mu = symmetric_eigh(laplacian(g))[1:]
    tol = EIG_TOL * max(1, d)
    return bool(mu.min() >= d * (1 - eps) - tol and mu.max() <= d * (1 + eps) + tol)


@dataclass(frozen=True)
class MixingBound:
    epsilon: float
    delta: float
    t_bound: int


def mixing_bound(n: int, eps: float, delta: float) -> MixingBound:
    """Walk length after which any start is within ``delta`` (L1) of uniform.

    ``t = ceil(ln(n / delta^2) / (2 (1 - eps)))``, clamped at zero.
    """
    if not 0 < eps < 1:
        raise SpectralError(f"need 0 < eps < 1 for a spectral gap, got {eps}")
    if delta <= 0:
        raise SpectralError("delta must be positive")
    val = math.log(n / delta ** 2) / (2.0 * (1.0 - eps))
    return MixingBound(eps, delta, max(0, math.ceil(val)))


def walk_distances(g: MultiGraph, start: int, steps: int) -> np.ndarray:
    """L1 distance from uniform at t = 0..steps for a walk started at ``start``."""
    P = transition_matrix(g)
    pi = np.zeros(g.n)
    pi[start] = 1.0
    out = np.empty(steps + 1)
    for t in range(steps + 1):
        out[t] = np.abs(pi - 1.0 / g.n).sum()
        pi = P @ pi
    return out


def empirical_mixing_time(g: MultiGraph, delta: float, start: int = 0,
                          max_steps: Optional[int] = None) -> int:
    """Smallest t with ``||pi_t - 1/n||_1 <= delta`` from a point mass at ``start``.

    Without ``max_steps`` the cap is ten times :func:`mixing_bound` for regular
    graphs (which also need a spectral gap) and ``100 n`` otherwise.
    """
    if not 0 <= start < g.n:
        raise GraphError(f"start node {start} out of range")
    if not is_connected(g) or is_bipartite(g):
        raise NoConvergence("walk cannot mix: graph is disconnected or bipartite")
    if max_steps is None:
        if g.is_regular():
            rep = adjacency_spectrum(g)
            if rep.epsilon is None or rep.epsilon >= 1 - EIG_TOL:
                raise NoConvergence("no spectral gap")
            max_steps = 10 * max(1, mixing_bound(g.n, rep.epsilon, delta).t_bound)
        else:
            max_steps = 100 * g.n
    P = transition_matrix(g)
    pi = np.zeros(g.n)
    pi[start] = 1.0
    for t in range(max_steps + 1):
        if np.abs(pi - 1.0 / g.n).sum() <= delta:
            return t
        pi = P @ pi
    hint = "" if g.is_regular() else " (irregular graph: the walk tends to the degree-weighted distribution)"
    raise NoConvergence(f"distance still above {delta} after {max_steps} steps{hint}")


def laplacian_pe(g: MultiGraph, k: int, zero_tol: float = 1e-8) -> np.ndarray:
    """Laplacian positional encodings: an ``n x k`` matrix.

    Columns are unit eigenvectors for the ``k`` smallest nonzero Laplacian
    eigenvalues, ascending, each signed so its first nonzero entry is positive.
    """
    if not 0 < k < g.n:
        raise SpectralError(f"need 0 < k < n, got k={k}, n={g.n}")
    vals, vecs = symmetric_eigh(laplacian(g), vectors=True)
    scale = max(1.0, float(np.abs(vals).max()))
    keep = np.flatnonzero(vals > zero_tol * scale)
    if keep.size < k:
        raise SpectralError(f"only {keep.size} nonzero Laplacian eigenvalues, asked for {k}")
    pe = vecs[:, keep[:k]].copy()
    for j in range(k):
        nz = np.flatnonzero(np.abs(pe[:, j]) > 1e-10)
        if pe[nz[0], j] < 0:
            pe[:, j] = -pe[:, j]
    return pe
