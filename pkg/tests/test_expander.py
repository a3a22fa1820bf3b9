import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from expattn.expander import (ExpanderConfig, GenerationCertificate, RetriesExhausted, Variant,
                              cycle_to_permutation, draw, gen_hamiltonian, gen_simple_variant,
                              gen_standard, generate_verified, graph_from_pairing,
                              graph_from_permutations, random_cycle_order, valid_cycles)
from expattn.graph import cycle_graph, diameter, is_connected
from expattn.spectral import adjacency_spectrum, is_near_ramanujan


def degree_oracle(g):
    """Recount degrees from the raw edge list (loops count twice)."""
    deg = np.zeros(g.n, dtype=int)
    for u, v, m in g.edges():
        deg[u] += m
        deg[v] += m
    return deg


# -- deterministic builders ----------------------------------------------------

def test_single_cyclic_permutation_gives_cycle():
    assert graph_from_permutations(6, [[1, 2, 3, 4, 5, 0]]) == cycle_graph(6)


def test_identity_permutation_gives_loops():
    g = graph_from_permutations(4, [np.arange(4)])
    assert all(g.multiplicity(v, v) == 1 for v in range(4))
    assert list(g.degrees()) == [2, 2, 2, 2]


def test_pairing_n2_d2():
    for perm in ([0, 1], [1, 0]):
        g = graph_from_pairing(2, 2, perm)
        assert list(g.degrees()) == [2, 2]


def test_pairing_identity_gives_loops():
    g = graph_from_pairing(4, 2, np.arange(4))
    assert all(g.multiplicity(v, v) == 1 for v in range(4))


def test_cycle_to_permutation():
    order = [0, 3, 1, 2]
    perm = cycle_to_permutation(order)
    assert list(perm) == [3, 2, 0, 1]


def test_random_cycle_order_is_uniform_over_single_cycles():
    rng = np.random.default_rng(0)
    counts = {}
    for _ in range(6000):
        o = tuple(random_cycle_order(4, rng))
        counts[o] = counts.get(o, 0) + 1
    assert len(counts) == math.factorial(3)
    assert all(o[0] == 0 for o in counts)
    assert max(counts.values()) / min(counts.values()) < 1.2


# -- random generators ------------------------------------------------------------

def test_standard_degrees():
    g = gen_standard(256, 6, 7)
    assert np.array_equal(degree_oracle(g), np.full(256, 6))


def test_simple_variant_degrees():
    g = gen_simple_variant(128, 6, 3)
    assert np.array_equal(degree_oracle(g), np.full(128, 6))


def test_hamiltonian_small_cases():
    g, cert = gen_hamiltonian(5, 2, 0)
    assert is_connected(g) and diameter(g) == 2
    assert len(cert.hamiltonian_cycles) == 1
    tri, _ = gen_hamiltonian(3, 2, 4)
    assert tri == cycle_graph(3)


def test_hamiltonian_certificate_n64():
    g, cert = gen_hamiltonian(64, 4, 11)
    assert len(cert.hamiltonian_cycles) == 2
    for cyc in cert.hamiltonian_cycles:
        assert sorted(cyc) == list(range(64))
    assert valid_cycles(g, cert.hamiltonian_cycles)
    assert np.array_equal(degree_oracle(g), np.full(64, 4))


@pytest.mark.parametrize("n,d", [(5, 3), (4, 4), (6, 0)])
def test_bad_degree_rejected(n, d):
    with pytest.raises(ValueError):
        gen_standard(n, d, 0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(list(Variant)), st.integers(3, 40), st.sampled_from([2, 4, 6]), st.integers(0, 2 ** 32))
def test_regular_and_symmetric_for_every_variant(variant, n, d, seed):
    if d >= n:
        return
    g, cycles = draw(n, d, variant, np.random.default_rng(seed))
    assert np.array_equal(degree_oracle(g), np.full(n, d))
    A = g.adjacency()
    assert np.array_equal(A, A.T)
    if variant is Variant.HAMILTONIAN:
        assert valid_cycles(g, cycles)
    else:
        assert cycles is None


# -- verified generation ------------------------------------------------------------

def test_verified_standard_accepts_quickly():
    g, cert = generate_verified(ExpanderConfig(256, 6, Variant.STANDARD, seed=1, strip_self_loops=False))
    assert cert.passed_spectral and cert.retries <= 3
    assert cert.achieved_bound <= 2 * math.sqrt(5) + 0.6


def test_c4_accepted_at_zero_slack():
    # C4 spectrum {2,0,0,-2}: second_abs = 2 = 2*sqrt(1)
    _, cert = generate_verified(ExpanderConfig(4, 2, Variant.HAMILTONIAN, seed=0, slack=0.0))
    assert cert.passed_spectral and cert.achieved_bound == pytest.approx(2.0)


def test_retries_exhausted_reports_best():
    with pytest.raises(RetriesExhausted) as info:
        generate_verified(ExpanderConfig(40, 4, seed=16, slack=0.0, max_retries=2))
    assert info.value.best_bound > 2 * math.sqrt(3)


@pytest.mark.parametrize("variant", list(Variant))
def test_acceptance_soundness_and_determinism(variant):
    cfg = ExpanderConfig(64, 4, variant, seed=5, strip_self_loops=False)
    g, cert = generate_verified(cfg)
    ok, achieved = is_near_ramanujan(g, cfg.slack)
    assert ok and achieved == pytest.approx(cert.achieved_bound, abs=1e-9)
    assert achieved <= cert.threshold
    g2, cert2 = generate_verified(cfg)
    assert g2 == g and cert2 == cert
    assert (cert.hamiltonian_cycles is not None) == (variant is Variant.HAMILTONIAN)


def test_stripping_records_post_strip_spectrum():
    cfg = ExpanderConfig(20, 6, Variant.STANDARD, seed=3, slack=10.0)
    raw, _ = generate_verified(ExpanderConfig(20, 6, seed=3, slack=10.0, strip_self_loops=False))
    g, cert = generate_verified(cfg)
    loops = sum(m for u, v, m in raw.edges() if u == v)
    assert cert.loops_removed == loops
    assert all(u != v for u, v, _ in g.edges())
    if loops == 0:
        assert g == raw
    assert cert.post_strip_bound == pytest.approx(adjacency_spectrum(g).second_abs)


def test_default_slack_is_tenth_of_degree():
    assert ExpanderConfig(100, 6).slack == pytest.approx(0.6)
    with pytest.raises(ValueError):
        ExpanderConfig(100, 6, slack=-1)
    with pytest.raises(ValueError):
        ExpanderConfig(100, 7)


def test_certificate_text_round_trip(tmp_path):
    _, cert = generate_verified(ExpanderConfig(16, 4, Variant.HAMILTONIAN, seed=2))
    path = tmp_path / "c.cert"
    cert.save(path)
    assert GenerationCertificate.load(path) == cert
