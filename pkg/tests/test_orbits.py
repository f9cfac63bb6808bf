from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import brentq

from corrtherm.correspondence import Correspondence
from corrtherm.errors import ConfigError, PreconditionError, ResourceError
from corrtherm.maps import CircleLinear, CirclePerturbed
from corrtherm.orbits import (
    Potential,
    build_backward_tree,
    epsilon_net,
    extrapolate_inverse_n,
    gibbs_ratio,
    gibbs_ratio_sequence,
    phi_n,
    phi_sequence,
    phi_table,
    pressure_separated_lower,
    pressure_spanning_upper,
    pressure_spanning_upper_sequence,
    pressure_via_growth,
)

L = CircleLinear
J = Potential.jacobian()
LOG2 = math.log(2)


def doubling_pair():
    return Correspondence([L(2, 0), L(2, 0.5)])


def perturbed_pair():
    return Correspondence([CirclePerturbed(2, 0.0, 0.3), CirclePerturbed(2, 0.5, 0.3)])


def _naive_phi(shifts, eps, x, n):
    """Recursive Phi_n for x -> 2x + c + eps/(2 pi) sin(2 pi x), roots by brentq."""
    if n == 0:
        return 1.0
    amp = eps / (2 * math.pi)
    total = 0.0
    for c in shifts:
        for s in range(-1, 4):
            target = x + s - c
            if not 0.0 <= target < 2.0:
                continue
            x1 = brentq(lambda t: 2 * t + amp * math.sin(2 * math.pi * t) - target, 0.0, 1.0, xtol=1e-15)
            jac = 2 + eps * math.cos(2 * math.pi * x1)
            total += _naive_phi(shifts, eps, x1, n - 1) / jac
    return total


def test_tree_constant_jacobian_weights():
    tree = build_backward_tree(doubling_pair(), J, 0.0, 3)
    assert tree.size == 64
    assert np.allclose(tree.weights, 2.0**-3, rtol=1e-14)


def test_tree_zero_potential():
    tree = build_backward_tree(Correspondence([L(2, 0)]), Potential.zero(), 0.7, 5)
    assert tree.size == 32
    assert np.all(tree.weights == 1.0)


def test_tree_replay():
    for T in (doubling_pair(), perturbed_pair(), Correspondence([L(2, 0), L(3, 0)])):
        tree = build_backward_tree(T, Potential.zero(), 0.41, 6)
        assert tree.size == T.total_degree**6
        assert tree.replay_error(T) <= tree.replay_tolerance(T)


def test_tree_symbols_forward_order():
    T = Correspondence([L(2, 0), L(3, 0)])
    tree = build_backward_tree(T, Potential.zero(), 0.3, 3)
    for sym, x1 in zip(tree.symbols[:50], tree.x1[:50]):
        x = x1
        for j in sym:
            x = T.generators[j](x)
        assert abs(x - 0.3) < 1e-12


def _measurable_oracle_two_three(n):
    """Exact enumeration for {2x, 3x} with E = {0}: weight 1/2 on E, 1/p_j off it."""
    total = Fraction(0)
    frontier = [(Fraction(0), Fraction(1))]
    for _ in range(n):
        nxt = []
        for y, w in frontier:
            for p in (2, 3):
                for i in range(p):
                    x1 = (y + i) / p
                    weight = Fraction(1, 2) if x1 == 0 else Fraction(1, p)
                    nxt.append((x1, w * weight))
        frontier = nxt
    for _, w in frontier:
        total += w
    return total, frontier


def test_measurable_potential_tree_two_three():
    T = Correspondence([L(2, 0), L(3, 0)])
    tree = build_backward_tree(T, Potential.torus_measurable(), 0.0, 2)
    assert tree.size == 25
    total, leaves = _measurable_oracle_two_three(2)
    assert tree.total() == pytest.approx(float(total), rel=1e-14)
    assert sorted(np.round(tree.weights, 12)) == sorted(round(float(w), 12) for _, w in leaves)
    # the branch 2x, 2x through x1 = 1/4 carries 2^-2
    sel = (tree.symbols[:, 0] == 0) & (tree.symbols[:, 1] == 0) & np.isclose(tree.x1, 0.25)
    assert tree.weights[sel] == pytest.approx([0.25])


def test_phi_n_closed_forms():
    assert phi_n(doubling_pair(), J, 0.123, 5) == pytest.approx(32.0, rel=1e-13)
    T3 = Correspondence([L(3, 0), L(3, Fraction(1, 3)), L(3, Fraction(2, 3))])
    assert phi_n(T3, J, 0.77, 4) == pytest.approx(81.0, rel=1e-13)


def test_phi_n_perturbed_against_brentq_oracle():
    for x in (0.0, 0.37, 0.81):
        got = phi_n(perturbed_pair(), J, x, 4)
        want = _naive_phi((0.0, 0.5), 0.3, x, 4)
        assert got == pytest.approx(want, rel=1e-12)


def test_tree_recursion_identity():
    # Phi_{n+1}(x) = sum over one-step preimages of exp(phi) Phi_n(x1)
    T = perturbed_pair()
    x = 0.29
    tree1 = build_backward_tree(T, J, x, 1)
    rhs = sum(w * phi_n(T, J, x1, 5) for w, x1 in zip(tree1.weights, tree1.x1))
    assert phi_n(T, J, x, 6) == pytest.approx(rhs, rel=1e-12)


def test_phi_sequence_matches_individual_depths():
    T = perturbed_pair()
    seq = phi_sequence(T, J, 0.61, 6)
    for n in (1, 3, 6):
        assert seq[n - 1] == pytest.approx(phi_n(T, J, 0.61, n), rel=1e-13)


def test_streaming_is_deterministic_across_threads():
    T = perturbed_pair()
    a = phi_sequence(T, J, 0.37, 8, threads=1, chunk=512)
    b = phi_sequence(T, J, 0.37, 8, threads=4, chunk=512)
    assert np.array_equal(a, b)


def test_chunking_changes_only_rounding():
    T = perturbed_pair()
    a = phi_sequence(T, J, 0.37, 8, chunk=2**20)
    b = phi_sequence(T, J, 0.37, 8, chunk=100)
    assert np.allclose(a, b, rtol=1e-13)


def test_budget_errors_name_max_depth():
    with pytest.raises(ResourceError, match="admissible max n = 4"):
        phi_n(perturbed_pair(), J, 0.1, 6, budget=300)


def test_budget_env_override(monkeypatch):
    monkeypatch.setenv("CORRTHERM_BUDGET", "100")
    with pytest.raises(ResourceError):
        phi_n(perturbed_pair(), J, 0.1, 5)


def test_materialization_cap():
    with pytest.raises(ResourceError):
        build_backward_tree(doubling_pair(), J, 0.1, 11)


def test_closed_form_reuse_beyond_budget():
    assert phi_n(doubling_pair(), J, 0.3, 30) == pytest.approx(2.0**30, rel=1e-12)


def test_pressure_via_growth_constant_cases():
    est, seq = pressure_via_growth(doubling_pair(), J, 0.1, 1, 10)
    assert abs(est - LOG2) <= 1e-12
    assert np.allclose(seq, LOG2, atol=1e-13)
    T4 = Correspondence([L(2, Fraction(i, 4)) for i in range(4)])
    est4, _ = pressure_via_growth(T4, J, 0.1, 1, 8)
    assert abs(est4 - math.log(4)) <= 1e-12


def test_pressure_via_growth_perturbed():
    est, seq = pressure_via_growth(perturbed_pair(), J, 0.37, 1, 10)
    assert abs(est - LOG2) <= 0.02


def test_pressure_k1_is_zero():
    est, _ = pressure_via_growth(Correspondence([L(2, 0)]), J, 0.3, 1, 10)
    assert abs(est) <= 1e-12


def test_jacobian_pressure_needs_coincidence_free():
    with pytest.raises(PreconditionError):
        pressure_via_growth(Correspondence([L(2, 0), L(3, 0)]), J, 0.1, 1, 3)


def test_extrapolation_recovers_linear_model():
    ns = np.arange(1, 11)
    assert extrapolate_inverse_n(ns, 0.7 + 0.3 / ns) == pytest.approx(0.7, abs=1e-13)


def test_spanning_upper_closed_form():
    T = doubling_pair()
    with pytest.warns(UserWarning):
        v6 = pressure_spanning_upper(T, J, 0.1, 6)
    assert v6 == pytest.approx(LOG2 + math.log(10) / 6, abs=1e-12)
    with pytest.warns(UserWarning):
        v30 = pressure_spanning_upper(T, J, 0.1, 30)
    assert v30 == pytest.approx(LOG2 + math.log(10) / 30, abs=1e-12)
    assert v30 == pytest.approx(0.7699, abs=1e-4)


def test_spanning_upper_doubling_zero_potential():
    # ten net points, 2^6 backward orbits each with weight 1
    v = pressure_spanning_upper(Correspondence([L(2, 0)]), Potential.zero(), 0.1, 6)
    assert v == pytest.approx(math.log(640) / 6, abs=1e-12)


def test_spanning_sequence_decreases_to_log2():
    seq = pressure_spanning_upper_sequence(doubling_pair(), J, 0.05, 8)
    assert np.all(np.diff(seq) < 0)
    assert seq[-1] > LOG2


def test_epsilon_net_covers():
    net = epsilon_net(doubling_pair(), 0.1)
    assert len(net) == 10
    gaps = np.diff(np.r_[net, 1.0])
    assert np.all(gaps <= 0.1 + 1e-15)


def test_separated_lower():
    assert pressure_separated_lower(doubling_pair(), J, 0.2, 8) == pytest.approx(LOG2, abs=1e-13)
    T3 = Correspondence([L(3, 0), L(3, Fraction(1, 3)), L(3, Fraction(2, 3))])
    assert pressure_separated_lower(T3, J, 0.2, 6) == pytest.approx(math.log(3), abs=1e-13)


def test_separated_below_spanning_plus_net_term():
    T = perturbed_pair()
    eps = T.constants.eta
    net = len(epsilon_net(T, eps))
    for n in (3, 5):
        lower = pressure_separated_lower(T, J, 0.5, n)
        upper = pressure_spanning_upper(T, J, eps, n)
        assert lower <= upper + math.log(net) / n


def test_gibbs_ratio_trivial_cases():
    assert gibbs_ratio(doubling_pair(), J, 5, 8) == pytest.approx(1.0, abs=1e-13)
    assert gibbs_ratio(Correspondence([L(3, 0)]), J, 5, 8) == pytest.approx(1.0, abs=1e-13)


def test_gibbs_sandwich_and_band():
    T = perturbed_pair()
    ratios = gibbs_ratio_sequence(T, J, 8, 16)
    C = ratios[-1] * 1.05
    table = phi_table(T, J, 8, 16)
    for n in range(4, 9):
        vals = table[:, n - 1]
        assert np.all(vals <= C * 2.0**n) and np.all(vals >= 2.0**n / C)
    lower = pressure_separated_lower(T, J, 0.5, 8)
    assert abs(lower - LOG2) <= math.log(C) / 8


def test_potential_validation():
    with pytest.raises(ConfigError):
        Potential("bogus")
    with pytest.raises(ConfigError):
        Potential("custom")
    with pytest.raises(PreconditionError):
        phi_n(perturbed_pair(), Potential.torus_measurable(), 0.1, 2)


def test_custom_potential_constant_table():
    pot = Potential("custom", table=np.full((2, 16), -math.log(2)))
    assert phi_n(doubling_pair(), pot, 0.3, 4) == pytest.approx(16.0)
