from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import kstest

from corrtherm.correspondence import Correspondence
from corrtherm.errors import ConfigError, PreconditionError, ResourceError
from corrtherm.kernel import (
    CylinderSpec,
    Kernel,
    SymbolStream,
    cylinder_measure,
    cylinder_table,
    orbit_projection,
    pushforward,
    sample_markov,
    sample_markov_many,
    skew_product_orbit,
    skew_product_step,
)
from corrtherm.maps import CircleLinear, CirclePerturbed, TorusLinear
from corrtherm.operator import GridDensity

L = CircleLinear
SEED = 0x5EED


def two_three():
    return Correspondence([L(2, 0), L(3, 0)])


def doubling_pair():
    return Correspondence([L(2, 0), L(2, Fraction(1, 2))])


def _pullback(intervals, p, c):
    out = []
    for a, b in intervals:
        for s in range(p):
            lo = (a - c + s) / p
            hi = (b - c + s) / p
            shift = lo - (lo % 1)
            lo, hi = lo - shift, hi - shift
            if hi <= 1:
                out.append((lo, hi))
            else:
                out.extend([(lo, Fraction(1)), (Fraction(0), hi - 1)])
    return out


def _intersect(intervals, a, b):
    return [(max(x, a), min(y, b)) for x, y in intervals if min(y, b) > max(x, a)]


def _length(intervals):
    return sum((b - a for a, b in intervals), Fraction(0))


def _oracle_cylinder(gens, weights, m, word):
    """Lebesgue start; exact pullback of the cylinder through every symbol path."""
    cells = [(Fraction(i, m), Fraction(i + 1, m)) for i in word]
    total = Fraction(0)
    for path in itertools.product(range(len(gens)), repeat=len(word) - 1):
        S = [cells[-1]]
        w = Fraction(1)
        for step in range(len(word) - 2, -1, -1):
            p, c = gens[path[step]]
            w *= weights[path[step]]
            S = _intersect(_pullback(S, p, c), *cells[step])
        total += w * _length(S)
    return total


def test_two_three_cylinder_seven_24ths():
    v = cylinder_measure(None, Kernel.uniform(2), two_three(), CylinderSpec.uniform(2, (0, 0)), mode="exact")
    assert v == Fraction(7, 24)
    assert _oracle_cylinder([(2, 0), (3, 0)], [Fraction(1, 2)] * 2, 2, (0, 0)) == Fraction(7, 24)


def test_doubling_pair_cylinder_quarter():
    v = cylinder_measure(None, Kernel.uniform(2), doubling_pair(), CylinderSpec.uniform(2, (0, 1)), mode="exact")
    assert v == Fraction(1, 4)


def test_length_one_word_is_cell_mass():
    assert cylinder_measure(None, Kernel.uniform(2), two_three(), CylinderSpec.uniform(2, (1,))) == Fraction(1, 2)


@pytest.mark.parametrize("word", [(0, 1, 1), (2, 0, 1), (1, 2, 2, 0), (0, 0, 0, 0)])
def test_exact_cylinders_match_pullback_oracle(word):
    gens = [(2, Fraction(0)), (3, Fraction(1, 3))]
    weights = [Fraction(3, 10), Fraction(7, 10)]
    T = Correspondence([L(2, 0), L(3, Fraction(1, 3))])
    got = cylinder_measure(None, Kernel(weights), T, CylinderSpec.uniform(3, word), mode="exact")
    assert got == _oracle_cylinder(gens, weights, 3, word)


def test_quadrature_agrees_with_exact():
    spec = CylinderSpec.uniform(4, (1, 3, 0))
    exact = cylinder_measure(None, Kernel.uniform(2), two_three(), spec, mode="exact")
    quad = cylinder_measure(None, Kernel.uniform(2), two_three(), spec, mode="quadrature", resolution=2**16)
    assert abs(quad - float(exact)) <= 1e-4


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_cylinders_sum_to_one(n):
    table = cylinder_table(None, Kernel.uniform(2), two_three(), 3, n)
    assert sum(table.values()) == 1


def test_marginal_consistency():
    T = two_three()
    K = Kernel.uniform(2)
    for word in itertools.product(range(3), repeat=2):
        parent = cylinder_measure(None, K, T, CylinderSpec.uniform(3, word))
        children = sum(cylinder_measure(None, K, T, CylinderSpec.uniform(3, word + (i,))) for i in range(3))
        assert parent == children


def test_perturbed_cylinders_use_quadrature():
    T = Correspondence([CirclePerturbed(2, 0.0, 0.3), CirclePerturbed(2, 0.5, 0.3)])
    v = cylinder_measure(None, Kernel.uniform(2), T, CylinderSpec.uniform(2, (0,)))
    assert isinstance(v, float) and v == pytest.approx(0.5, abs=1e-4)
    with pytest.raises(PreconditionError):
        cylinder_measure(None, Kernel.uniform(2), T, CylinderSpec.uniform(2, (0,)), mode="exact")


def test_cylinder_limits_and_validation():
    with pytest.raises(ResourceError):
        cylinder_measure(None, Kernel.uniform(2), two_three(), CylinderSpec.uniform(2, (0,) * 20))
    with pytest.raises(ConfigError):
        CylinderSpec.uniform(2, (2,))
    with pytest.raises(ConfigError):
        CylinderSpec.from_breaks([0, 0.5, 0.4, 1], (0,))
    with pytest.raises(ConfigError):
        cylinder_measure(None, Kernel.uniform(3), two_three(), CylinderSpec.uniform(2, (0,)))


def test_kernel_validation():
    with pytest.raises(ConfigError):
        Kernel([0.7, 0.4])
    with pytest.raises(ConfigError):
        Kernel([1.2, -0.2])
    with pytest.raises(ConfigError):
        Kernel()
    assert Kernel.uniform(4).is_uniform
    assert not Kernel([0.7, 0.3]).is_uniform
    assert Kernel.from_config({"weights": ["1/3", "2/3"]}, 2).exact_weights == (Fraction(1, 3), Fraction(2, 3))


def test_tabulated_kernel():
    K = Kernel(table=[[1.0, 0.0], [0.0, 1.0]])
    assert not K.is_constant
    assert K.probability(0, np.array([0.1, 0.7])).tolist() == [1.0, 0.0]
    with pytest.raises(PreconditionError):
        K.exact_weights


def test_pushforward_half_interval_density():
    mu = GridDensity(np.r_[np.full(256, 2.0), np.zeros(256)])
    out = pushforward(mu, Kernel.uniform(2), doubling_pair())
    assert np.median(np.abs(out.values - 1.0)) <= 1e-12


def test_markov_rational_orbit():
    s = sample_markov(Correspondence([L(2, 0)]), Kernel.uniform(1), Fraction(1, 3), 6, seed=1)
    assert s.engine == "rational"
    assert s.points.tolist() == [1 / 3, 2 / 3] * 3 + [1 / 3]
    assert np.all(s.symbols == 0)


def test_markov_float_start_one_third():
    # 1/3 given as a float is read as the rational 1/3, so the orbit never decays to 0
    s = sample_markov(Correspondence([L(2, 0)]), Kernel.uniform(1), 1 / 3, 200, seed=1)
    assert s.points[-1] == pytest.approx(1 / 3)


def test_markov_transitions_follow_symbols():
    T = two_three()
    s = sample_markov(T, Kernel.uniform(2), Fraction(1, 7), 50, seed=SEED)
    for i in range(50):
        assert T.generators[s.symbols[i]](s.points[i]) == pytest.approx(s.points[i + 1], abs=1e-12)


def test_markov_golden_run():
    s = sample_markov(two_three(), Kernel.uniform(2), None, 10**5, seed=SEED)
    assert s.engine == "fixed64"
    assert s.points[:3].tolist() == [0.21801600190428627, 0.43603200380857254, 0.30809601142571763]
    assert s.symbols[:10].tolist() == [0, 1, 1, 1, 0, 0, 0, 0, 1, 1]
    assert float(kstest(s.points[1:], "uniform").statistic) == pytest.approx(0.004421198932932913, abs=1e-15)


def test_markov_determinism_and_streams():
    T = two_three()
    a = sample_markov(T, Kernel.uniform(2), None, 1000, seed=7)
    b = sample_markov(T, Kernel.uniform(2), None, 1000, seed=7)
    c = sample_markov(T, Kernel.uniform(2), None, 1000, seed=7, trajectory=1)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    many1 = sample_markov_many(T, Kernel.uniform(2), 4, 200, seed=7, threads=1)
    many4 = sample_markov_many(T, Kernel.uniform(2), 4, 200, seed=7, threads=4)
    assert all(np.array_equal(x.points, y.points) for x, y in zip(many1, many4))
    assert np.array_equal(many1[0].points, sample_markov(T, Kernel.uniform(2), None, 200, seed=7).points)


def test_markov_biased_kernel_symbol_frequency():
    s = sample_markov(doubling_pair(), Kernel([0.7, 0.3]), None, 20000, seed=3)
    assert np.mean(s.symbols == 0) == pytest.approx(0.7, abs=0.02)


def test_markov_float_engine_and_torus():
    P = Correspondence([CirclePerturbed(2, 0.0, 0.3), CirclePerturbed(2, 0.5, 0.3)])
    assert sample_markov(P, Kernel.uniform(2), None, 100, seed=1).engine == "float64"
    A = [[3, 1], [1, 3]]
    Tt = Correspondence([TorusLinear(A), TorusLinear(A, [0.5, 0.0])])
    s = sample_markov(Tt, Kernel.uniform(2), None, 5000, seed=1)
    assert s.points.shape == (5001, 2)
    assert float(kstest(s.points[1:, 0], "uniform").statistic) < 0.03


def test_markov_rejects_bad_input():
    with pytest.raises(ConfigError):
        sample_markov(two_three(), Kernel.uniform(2), None, 0)
    with pytest.raises(ConfigError):
        sample_markov(two_three(), Kernel.uniform(3), None, 10)


def test_symbol_stream_random_access():
    s = SymbolStream(3, seed=11)
    prefix = s.take(9000)
    assert s[8500] == prefix[8500]
    assert SymbolStream(3, seed=11)[8500] == prefix[8500]
    t = s.shift(4100)
    assert t[0] == prefix[4100]
    assert set(np.unique(prefix)) == {0, 1, 2}


def test_symbol_stream_probabilities():
    s = SymbolStream(2, seed=2, probs=[0.9, 0.1])
    assert np.mean(s.take(20000) == 0) == pytest.approx(0.9, abs=0.01)


def test_skew_product_factor_relation():
    T = two_three()
    stream = SymbolStream(2, seed=SEED)
    syms = stream.take(30)
    orbit = skew_product_orbit(T, stream, 0.1234, 30)
    proj = orbit_projection(syms, 0.1234, T, 30)
    assert np.allclose(orbit[:30], proj, atol=0)
    s, x = skew_product_step(tuple(syms), 0.1234, T)
    assert len(s) == 29 and x == proj[1]


def test_skew_product_lebesgue_golden():
    o = skew_product_orbit(two_three(), SymbolStream(2, seed=SEED), None, 10**5, seed=SEED)
    assert float(kstest(o[1:], "uniform").statistic) == pytest.approx(0.0017050738628781037, abs=1e-15)


def test_skew_step_exhausted():
    with pytest.raises(ConfigError):
        skew_product_step((), 0.1, two_three())
