"""Property suites shared by ``expattn check`` and the acceptance tests.

Each suite returns a :class:`CheckResult` whose ``details`` hold the measured
quantities.  Defaults are the full-size settings; the CLI shrinks some of
them unless ``--full`` is given.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .attention import (LayerDims, attention_weights, attn_forward, dense_channels,
                        dense_reference_forward, param_init, with_virtual)
from .expander import ExpanderConfig, Variant, draw, generate_verified
from .graph import MultiGraph, diameter, empty_graph, from_arrays, path_graph
from .pattern import (PatternConfig, build_pattern, budget_bound, edge_budget, permute_pattern,
                      reachability_layers, universality_precondition)
from .spectral import (NoConvergence, empirical_mixing_time, mixing_bound, near_ramanujan_from_eigs,
                       symmetric_eigh)
from .train import TrainConfig, check_layer_gradients, make_task, random_instance, train_loop


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}"


@dataclass
class AcceptedGraph:
    variant: Variant
    n: int
    d: int
    graph: MultiGraph
    epsilon: float


def _random_graph(n: int, m: int, rng: np.random.Generator) -> MultiGraph:
    us, vs = rng.integers(0, n, size=m), rng.integers(0, n, size=m)
    keep = us != vs
    return from_arrays(n, us[keep], vs[keep])


# -- 1. near-Ramanujan generation ----------------------------------------

def near_ramanujan_rates(variants=tuple(Variant), ns=(256, 1024), ds=(6, 10), draws=50,
                         slack_per_degree=0.1, min_rate=0.9, seed=0):
    """Fraction of raw draws within ``2 sqrt(d-1) + slack`` for each setting."""
    rates, accepted = {}, []
    t0 = time.perf_counter()
    for v in variants:
        for n in ns:
            for d in ds:
                rng = np.random.default_rng([seed, list(Variant).index(Variant(v)), n, d])
                hits = 0
                for _ in range(draws):
                    g, _ = draw(n, d, v, rng)
                    eigs = symmetric_eigh(g.adjacency())[::-1]
                    ok, achieved = near_ramanujan_from_eigs(eigs, d, slack_per_degree * d)
                    if ok:
                        hits += 1
                        accepted.append(AcceptedGraph(Variant(v), n, d, g, achieved / d))
                rates[(Variant(v).value, n, d)] = hits / draws
    res = CheckResult("near_ramanujan_generation", all(r >= min_rate for r in rates.values()),
                      {"rates": rates, "seconds": time.perf_counter() - t0})
    return res, accepted


# -- 2. mixing time vs bound -------------------------------------------------------

def mixing_time_check(accepted: Sequence[AcceptedGraph], delta=1e-3, max_eps=0.95):
    violations, checked, worst_ratio = [], 0, 0.0
    for a in accepted:
        if a.epsilon > max_eps:
            continue
        bound = mixing_bound(a.n, a.epsilon, delta).t_bound
        try:
            t = empirical_mixing_time(a.graph, delta, start=0, max_steps=10 * max(bound, 1))
        except NoConvergence:
            t = math.inf
        checked += 1
        worst_ratio = max(worst_ratio, t / bound)
        if t > bound:
            violations.append((a.variant.value, a.n, a.d, t, bound))
    return CheckResult("mixing_time_bound", checked > 0 and not violations,
                       {"checked": checked, "violations": violations, "worst_t_over_bound": worst_ratio})


# -- 3. logarithmic diameter -------------------------------------------------

def diameter_scaling(d=6, calib_n=256, calib_seeds=20, test_sizes=((1024, 10), (4096, 5)), factor=1.5):
    calib = []
    for s in range(calib_seeds):
        g, _ = generate_verified(ExpanderConfig(calib_n, d, seed=s, strip_self_loops=False))
        calib.append(diameter(g))
    C = max(calib) / math.log(calib_n)
    measured, violations = [], []
    for n, seeds in test_sizes:
        for s in range(seeds):
            g, _ = generate_verified(ExpanderConfig(n, d, seed=1000 + s, strip_self_loops=False))
            diam = diameter(g)
            limit = factor * C * math.log(n)
            measured.append((n, s, diam, limit))
            if diam > limit:
                violations.append((n, s, diam, limit))
    return CheckResult("logarithmic_diameter", not violations,
                       {"C": C, "calibration_diameters": calib, "measured": measured,
                        "violations": violations})


# -- 4. sparse / dense oracle --------------------------------------------------

COMBOS = [(l, x, g, s) for l in (0, 1) for x in (0, 1) for g in (0, 1) for s in (0, 1) if l or x or g]


def random_pattern(rng: np.random.Generator, combo, max_nodes=12):
    """Random small pattern for a (local, expander, global, loops) combination."""
    local, expander, glob, loops = combo
    n_virtual = int(rng.integers(1, 3)) if glob else 0
    n = int(rng.integers(5, max_nodes - n_virtual + 1))
    g = _random_graph(n, int(rng.integers(n, 2 * n)), rng)
    feats = {e: int(rng.integers(3)) for e in g.simple_edges()}
    cfg = PatternConfig(
        use_local=bool(local),
        expander=ExpanderConfig(n, 4 if n > 4 else 2, list(Variant)[int(rng.integers(3))],
                                seed=int(rng.integers(2 ** 32)), slack=100.0) if expander else None,
        num_virtual=n_virtual, self_loops=bool(loops))
    p, cert = build_pattern(g, cfg, feats)
    if np.any(p.in_degree() == 0):
        p, cert = build_pattern(g, replace(cfg, self_loops=True), feats)
    return p, cert


def oracle_equivalence(instances=100, max_nodes=12, tol=1e-10, seed=0):
    rng = np.random.default_rng(seed)
    worst, kinds_seen = 0.0, set()
    for i in range(instances):
        combo = COMBOS[i % len(COMBOS)]
        p, _ = random_pattern(rng, combo, max_nodes)
        kinds_seen.add(p.flags)
        params, X, _ = random_instance(p, int(rng.integers(2 ** 32)))
        params.edge_features = bool(i % 4)
        Xf = with_virtual(p, X, params)
        mask, feats = dense_channels(p, params)
        dense = dense_reference_forward(Xf, params, mask, feats if params.edge_features else None)
        worst = max(worst, float(np.abs(attn_forward(p, X, params) - dense).max()))
    return CheckResult("sparse_dense_oracle", worst <= tol,
                       {"max_abs_diff": worst, "flag_combinations": sorted(kinds_seen)})


# -- 5. gradient exactness -----------------------------------------------------

def gradient_exactness(seeds=20, max_nodes=12, tol=1e-5):
    worst: dict[str, float] = {}
    for s in range(seeds):
        rng = np.random.default_rng([7, s])
        p, _ = random_pattern(rng, COMBOS[s % len(COMBOS)], max_nodes)
        params, X, U = random_instance(p, s)
        errs, _ = check_layer_gradients(p, X, params, U)
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), v)
    return CheckResult("gradient_exactness", max(worst.values()) <= tol, {"max_rel_err": worst})


# -- 6. softmax normalisation & permutation equivariance ------------------------

def softmax_and_equivariance(instances=50, max_nodes=12, sum_tol=1e-12, equi_tol=1e-10, seed=1):
    rng = np.random.default_rng(seed)
    worst_sum = worst_equi = 0.0
    for i in range(instances):
        p, _ = random_pattern(rng, COMBOS[i % len(COMBOS)], max_nodes)
        params, X, _ = random_instance(p, int(rng.integers(2 ** 32)))
        W = attention_weights(p, X, params)
        for w in W:
            sums = np.add.reduceat(w, p.indptr[:-1])
            worst_sum = max(worst_sum, float(np.abs(sums - 1).max()))
        perm = rng.permutation(p.n_real)
        q = permute_pattern(p, perm)
        Xp = np.empty_like(X)
        Xp[:, perm] = X
        Y, Yp = attn_forward(p, X, params), attn_forward(q, Xp, params)
        full = np.concatenate([perm, np.arange(p.n_real, p.n_nodes)])
        worst_equi = max(worst_equi, float(np.abs(Yp[:, full] - Y).max()))
    return CheckResult("softmax_and_equivariance", worst_sum <= sum_tol and worst_equi <= equi_tol,
                       {"max_weight_sum_err": worst_sum, "max_equivariance_err": worst_equi})


# -- 7. linear edge budget ---------------------------------------------------

def linear_budget(configs=20, sizes=(1000, 2000), d=6, g=1, layers=2, runs=5, inner=10, max_ratio=2.6, seed=0):
    rng = np.random.default_rng(seed)
    exact_checked, mismatches = 0, []
    for _ in range(configs):
        n = int(rng.integers(20, 200))
        dx = int(rng.choice([2, 4, 6]))
        gv = int(rng.integers(0, 4))
        graph = _random_graph(n, int(rng.integers(n, 3 * n)), rng)
        cfg = PatternConfig(expander=ExpanderConfig(n, dx, seed=int(rng.integers(2 ** 32))), num_virtual=gv)
        p, _ = build_pattern(graph, cfg)
        raw, _ = generate_verified(replace(cfg.expander, strip_self_loops=False))
        bound = budget_bound(len(graph.simple_edges()), n, dx, gv)
        total = edge_budget(p)["total"]
        simple_expander = all(m == 1 and u != v for u, v, m in raw.edges())
        if simple_expander:
            exact_checked += 1
            if total != bound:
                mismatches.append((n, dx, gv, total, bound))
        elif total > bound:
            mismatches.append((n, dx, gv, total, bound))

    dims = LayerDims(d=16, h=2, m=8, r=32, d_e=4, n_virtual=g)
    blocks = [param_init(replace(dims, n_virtual=g if k == 0 else 0), k) for k in range(layers)]
    cases = {}
    for n in sizes:
        graph = _random_graph(n, 2 * n, rng)
        p, _ = build_pattern(graph, PatternConfig(expander=ExpanderConfig(n, d, seed=1), num_virtual=g))
        cases[n] = (p, rng.normal(size=(16, n)))

    def stack(p, X):
        H = X
        for blk in blocks:
            H = attn_forward(p, H, blk)

    # sizes alternate within each run so machine-speed drift hits both alike
    samples = {n: [] for n in sizes}
    for _ in range(runs):
        for n, (p, X) in cases.items():
            stack(p, X)  # warm-up
            t0 = time.perf_counter()
            for _ in range(inner):
                stack(p, X)
            samples[n].append((time.perf_counter() - t0) / inner)
    timings = {n: float(np.median(v)) for n, v in samples.items()}
    ratio = timings[sizes[1]] / timings[sizes[0]]
    return CheckResult("linear_edge_budget", not mismatches and exact_checked > 0 and ratio <= max_ratio,
                       {"exact_cases": exact_checked, "mismatches": mismatches,
                        "timings": timings, "time_ratio": ratio})


# -- 8. component forcing ---------------------------------------------------

def component_forcing(seeds=5, steps=2000, graphs=200, nodes=16, hi=0.90, lo=0.60, gap=0.25):
    with_global, local_only = [], []
    t0 = time.perf_counter()
    for s in range(seeds):
        task = make_task("global-mean", graphs, nodes, seed=s)
        for nv, sink in ((1, with_global), (0, local_only)):
            cfg = TrainConfig(pattern=PatternConfig(use_local=True, num_virtual=nv), steps=steps, seed=s)
            sink.append(train_loop(task, cfg).test_accuracy)
    mg, ml = float(np.median(with_global)), float(np.median(local_only))
    return CheckResult("component_forcing", mg >= hi and ml <= lo and mg - ml >= gap,
                       {"global_acc": with_global, "local_acc": local_only,
                        "median_global": mg, "median_local": ml, "seconds": time.perf_counter() - t0})


# -- 9. reachability ---------------------------------------------------------

def reachability(configs=20, seed=0):
    star, _ = build_pattern(empty_graph(50), PatternConfig(use_local=False, num_virtual=1, self_loops=False))
    star_layers = reachability_layers(star)
    xcfg = ExpanderConfig(256, 6, seed=seed)
    xp, _ = build_pattern(empty_graph(256), PatternConfig(use_local=False, expander=xcfg, num_virtual=0))
    xg, _ = generate_verified(xcfg)
    x_layers, x_diam = reachability_layers(xp), diameter(xg)
    rng = np.random.default_rng(seed)
    monotone_fail = []
    for i in range(configs):
        n = int(rng.integers(8, 80))
        graph = _random_graph(n, int(rng.integers(0, 2 * n)), rng)
        use_x = bool(rng.integers(2))
        base = PatternConfig(use_local=True,
                             expander=ExpanderConfig(n, 4, seed=int(rng.integers(2 ** 32))) if use_x else None,
                             num_virtual=0, self_loops=bool(rng.integers(2)))
        before = reachability_layers(build_pattern(graph, base)[0])
        after = reachability_layers(build_pattern(graph, replace(base, num_virtual=int(rng.integers(1, 4))))[0])
        if after > before:
            monotone_fail.append((i, before, after))
    ok = star_layers == 2 and x_layers <= x_diam and not monotone_fail
    return CheckResult("reachability_depth", ok,
                       {"star_layers": star_layers, "expander_layers": x_layers,
                        "expander_diameter": x_diam, "monotonicity_failures": monotone_fail})


# -- 10. universality preconditions --------------------------------------------

def universality(n=32, seed=0):
    graph = path_graph(n)
    results = {}
    for loops in (True, False):
        p, cert = build_pattern(graph, PatternConfig(num_virtual=1, self_loops=loops))
        results[("virtual", loops)] = universality_precondition(p, cert).satisfied
        xcfg = ExpanderConfig(n, 4, Variant.HAMILTONIAN, seed=seed)
        p, cert = build_pattern(graph, PatternConfig(use_local=False, expander=xcfg, num_virtual=0,
                                                     self_loops=loops))
        rep = universality_precondition(p, cert)
        results[("hamiltonian", loops)] = rep.satisfied
        results[("hamiltonian_cert", loops)] = rep.hamiltonian
    ok = (results[("virtual", True)] and results[("hamiltonian", True)]
          and not results[("virtual", False)] and not results[("hamiltonian", False)])
    return CheckResult("universality_preconditions", ok, {str(k): v for k, v in results.items()})


def spectral_sanity():
    """Known spectra (K4, C4, Petersen) through the production eigensolver."""
    from .graph import complete_graph, cycle_graph, petersen_graph
    expected = {
        "K4": (complete_graph(4), [3, -1, -1, -1]),
        "C4": (cycle_graph(4), [2, 0, 0, -2]),
        "Petersen": (petersen_graph(), [3] + [1] * 5 + [-2] * 4),
    }
    errs = {}
    for name, (g, ev) in expected.items():
        got = symmetric_eigh(g.adjacency())[::-1]
        errs[name] = float(np.abs(got - np.array(ev, dtype=float)).max())
    return CheckResult("spectral_sanity", max(errs.values()) <= 1e-9, {"max_abs_err": errs})

