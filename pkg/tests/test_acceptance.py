"""Acceptance suite: ten criteria at full size and stated tolerances.

Each test prints one ``ACCEPTANCE <k> PASS|FAIL`` line (visible even with
output capture on) and then asserts.  Expect several minutes on one core.
"""

import pytest

from expattn import checks


@pytest.fixture
def announce(capsys):
    def emit(k, res, summary):
        with capsys.disabled():
            print(f"\nACCEPTANCE {k:>2} {'PASS' if res.passed else 'FAIL'} {res.name}: {summary}")
    return emit


@pytest.fixture(scope="module")
def ramanujan_run():
    return checks.near_ramanujan_rates(draws=50, slack_per_degree=0.1, min_rate=0.9)


def test_01_near_ramanujan_generation(ramanujan_run, announce):
    res, _ = ramanujan_run
    rates = res.details["rates"]
    announce(1, res, f"min rate {min(rates.values()):.2f} over {len(rates)} settings "
                     f"(need >= 0.90), {res.details['seconds']:.0f}s")
    assert len(rates) == 12
    assert res.details["seconds"] < 600
    assert res.passed, rates


def test_02_mixing_time_bound(ramanujan_run, announce):
    _, accepted = ramanujan_run
    res = checks.mixing_time_check(accepted, delta=1e-3, max_eps=0.95)
    announce(2, res, f"{res.details['checked']} graphs, {len(res.details['violations'])} violations, "
                     f"worst t/bound {res.details['worst_t_over_bound']:.2f}")
    assert res.passed, res.details["violations"]


def test_03_logarithmic_diameter(announce):
    res = checks.diameter_scaling(d=6, calib_n=256, calib_seeds=20, test_sizes=((1024, 10), (4096, 5)),
                                  factor=1.5)
    worst = max(m[2] / m[3] for m in res.details["measured"])
    announce(3, res, f"C={res.details['C']:.3f}, worst diameter/limit {worst:.2f}")
    assert res.passed, res.details["violations"]


def test_04_sparse_dense_oracle(announce):
    res = checks.oracle_equivalence(instances=100, max_nodes=12, tol=1e-10)
    announce(4, res, f"max abs diff {res.details['max_abs_diff']:.2e} (tol 1e-10), "
                     f"{len(res.details['flag_combinations'])} kind combinations")
    assert len(res.details["flag_combinations"]) == 14
    assert res.passed


def test_05_gradient_exactness(announce):
    res = checks.gradient_exactness(seeds=20, max_nodes=12, tol=1e-5)
    worst = max(res.details["max_rel_err"].values())
    announce(5, res, f"max relative error {worst:.2e} (tol 1e-5)")
    assert res.passed, res.details


def test_06_softmax_and_equivariance(announce):
    res = checks.softmax_and_equivariance(instances=50, sum_tol=1e-12, equi_tol=1e-10)
    announce(6, res, f"sum err {res.details['max_weight_sum_err']:.1e} (tol 1e-12), "
                     f"equivariance err {res.details['max_equivariance_err']:.1e} (tol 1e-10)")
    assert res.passed


def test_07_linear_edge_budget(announce):
    res = checks.linear_budget(sizes=(1000, 2000), runs=5, max_ratio=2.6)
    announce(7, res, f"{res.details['exact_cases']} exact cases, {len(res.details['mismatches'])} mismatches, "
                     f"time ratio {res.details['time_ratio']:.2f} (max 2.6)")
    assert res.passed, res.details


def test_08_component_forcing(announce):
    res = checks.component_forcing(seeds=5, steps=2000, hi=0.90, lo=0.60, gap=0.25)
    d = res.details
    announce(8, res, f"global {d['median_global']:.3f} (>= 0.90), local {d['median_local']:.3f} (<= 0.60), "
                     f"{d['seconds']:.0f}s")
    assert d["seconds"] < 300
    assert res.passed, d


def test_09_reachability(announce):
    res = checks.reachability(configs=20)
    d = res.details
    announce(9, res, f"star {d['star_layers']}, expander {d['expander_layers']} <= diameter "
                     f"{d['expander_diameter']}, {len(d['monotonicity_failures'])} monotonicity failures")
    assert res.passed, d


def test_10_universality(announce):
    res = checks.universality(n=32)
    announce(10, res, ", ".join(f"{k}={v}" for k, v in res.details.items()))
    assert res.passed, res.details
