from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from corrtherm.correspondence import Correspondence
from corrtherm.kernel import CylinderSpec, Kernel, cylinder_measure
from corrtherm.maps import CircleLinear, CirclePerturbed, distance, mod1
from corrtherm.orbits import Potential, phi_n, phi_sequence

points = st.floats(min_value=0.0, max_value=1.0, exclude_max=True, allow_nan=False)
degrees = st.integers(min_value=2, max_value=5)
shifts = st.fractions(min_value=0, max_value=Fraction(19, 20), max_denominator=20)
amplitudes = st.floats(min_value=-0.95, max_value=0.95, allow_nan=False)


@given(degrees, shifts, points)
def test_linear_preimages_map_back(p, c, y):
    f = CircleLinear(p, c)
    pre = np.asarray(f.inverse_branches(y))
    assert len(pre) == p
    assert np.all(distance(f(pre), y) <= f.tol_root)


@settings(max_examples=50, deadline=None)
@given(degrees, st.floats(0.0, 0.99), amplitudes, points)
def test_perturbed_preimages_map_back(p, c, eps, y):
    f = CirclePerturbed(p, c, eps)
    pre = np.asarray(f.inverse_branches(y))
    assert len(pre) == p
    assert np.all(distance(f(pre), y) <= f.tol_root)


@given(points, points)
def test_distance_is_a_metric_on_the_circle(x, y):
    d = float(distance(x, y))
    assert 0 <= d <= 0.5
    assert abs(d - float(distance(y, x))) <= 1e-15
    assert abs(float(distance(mod1(x + 0.25), mod1(y + 0.25))) - d) <= 1e-15


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(degrees, shifts), min_size=1, max_size=3), points, st.integers(1, 4))
def test_jacobian_tree_sum_is_k_to_n_for_linear_maps(gens, x, n):
    T = Correspondence([CircleLinear(p, c) for p, c in gens])
    # each branch weight is 1/p, and p preimages per generator
    assert phi_n(T, Potential.zero(), x, n) == math.prod([sum(p for p, _ in gens)] * n)
    if T.coincidence_free or T.k == 1:
        assert abs(phi_n(T, Potential.jacobian(), x, n) - T.k**n) <= 1e-9 * T.k**n


@settings(max_examples=20, deadline=None)
@given(points, st.integers(1, 6))
def test_phi_sequence_is_positive_and_thread_independent(x, n):
    T = Correspondence([CirclePerturbed(2, 0.0, 0.3), CirclePerturbed(2, 0.5, 0.3)])
    a = phi_sequence(T, Potential.jacobian(), x, n, threads=1)
    b = phi_sequence(T, Potential.jacobian(), x, n, threads=3)
    assert np.array_equal(a, b)
    assert all(v > 0 for v in a)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.integers(0, 2), min_size=1, max_size=4),
    st.fractions(min_value=0, max_value=1, max_denominator=10),
)
def test_cylinder_children_sum_to_parent(word, w0):
    T = Correspondence([CircleLinear(2, 0), CircleLinear(3, Fraction(1, 3))])
    K = Kernel([w0, 1 - w0])
    parent = cylinder_measure(None, K, T, CylinderSpec.uniform(3, word))
    kids = sum(cylinder_measure(None, K, T, CylinderSpec.uniform(3, word + [i])) for i in range(3))
    assert parent == kids
    assert isinstance(parent, Fraction)
    assert 0 <= parent <= 1
