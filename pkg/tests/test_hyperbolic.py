"""Half-plane geometry: isometry action, distance, classification, axes."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adsmax.hyperbolic import (
    Mobius,
    axis,
    axis_chart,
    classify,
    dist,
    geodesic_eval,
    translation_length,
    transvection_to,
)
from adsmax.errors import DegenerateInput, NotHyperbolic

from helpers import min_displacement, random_hyperbolic, random_mobius, random_point


points = st.builds(
    complex,
    st.floats(-5.0, 5.0, allow_nan=False),
    st.floats(0.05, 20.0, allow_nan=False),
)
angles = st.floats(0.0, np.pi, allow_nan=False)
isometries = st.builds(
    lambda p, phi: transvection_to(p)
    @ Mobius(np.array([[np.cos(phi), np.sin(phi)], [-np.sin(phi), np.cos(phi)]])),
    points,
    angles,
)


class TestMobiusBasics:
    def test_identity_fixes_i(self):
        assert Mobius.identity()(1j) == 1j

    def test_diagonal_scaling(self):
        e = np.exp(1.0)
        T = Mobius(np.array([[e, 0.0], [0.0, 1.0 / e]]))
        assert T(1j) == pytest.approx(1j * e * e)

    def test_normalization_unit_det_and_sign(self):
        T = Mobius(np.array([[-2.0, 0.0], [0.0, -2.0]]))
        assert T.det_defect() <= 1e-12
        assert T.to_list() == pytest.approx([1.0, 0.0, 0.0, 1.0])

    def test_first_nonzero_entry_positive(self):
        T = Mobius(np.array([[0.0, -1.0], [1.0, 0.0]]))
        # first nonzero entry in (a, b, c, d) order is b; must be positive
        assert T.to_list()[1] > 0

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            T = random_mobius(rng)
            assert Mobius.from_list(T.to_list()) == T

    def test_composition_law(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            S, T = random_mobius(rng), random_mobius(rng)
            z = random_point(rng)
            assert (S @ T)(z) == pytest.approx(S(T(z)), abs=1e-10)

    @given(isometries, points, points)
    @settings(max_examples=80, deadline=None)
    def test_action_is_isometric(self, T, z, w):
        assert dist(T(z), T(w)) == pytest.approx(dist(z, w), abs=1e-10)


class TestDistance:
    def test_vertical_segment(self):
        assert dist(1j, 1j * np.exp(1.0)) == pytest.approx(1.0, abs=1e-12)

    def test_coincident_points(self):
        assert dist(2.0 + 3.0j, 2.0 + 3.0j) == 0.0

    @given(points, points, points)
    @settings(max_examples=120, deadline=None)
    def test_triangle_inequality(self, a, b, c):
        assert dist(a, c) <= dist(a, b) + dist(b, c) + 1e-12

    @given(points, points)
    @settings(max_examples=80, deadline=None)
    def test_symmetry(self, a, b):
        assert dist(a, b) == pytest.approx(dist(b, a), abs=1e-13)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(11)
        zs = np.array([random_point(rng) for _ in range(16)])
        ws = np.array([random_point(rng) for _ in range(16)])
        d = dist(zs, ws)
        for k in range(16):
            assert d[k] == pytest.approx(dist(zs[k], ws[k]), abs=1e-14)


class TestClassify:
    def test_unipotent_is_parabolic(self):
        cls = classify(Mobius(np.array([[1.0, 1.0], [0.0, 1.0]])))
        assert cls.kind == "Parabolic" and cls.length == 0.0

    def test_diagonal_is_hyperbolic(self):
        e = np.exp(1.0)
        cls = classify(Mobius(np.array([[e, 0.0], [0.0, 1.0 / e]])))
        assert cls.kind == "Hyperbolic"
        assert cls.length == pytest.approx(2.0, abs=1e-12)

    def test_identity(self):
        assert classify(Mobius.identity()).kind == "Identity"

    def test_rotation_is_elliptic(self):
        c, s = np.cos(0.7), np.sin(0.7)
        cls = classify(Mobius(np.array([[c, s], [-s, c]])))
        assert cls.kind == "Elliptic" and cls.length == 0.0

    def test_trace_three_conjugated_length_vs_oracle(self):
        # trace 3 element, conjugated by a random isometry; the length
        # 2*arccosh(1.5) must match direct minimization of displacement
        rng = np.random.default_rng(5)
        lam = (3.0 + np.sqrt(5.0)) / 2.0
        D = Mobius(np.array([[lam, 0.0], [0.0, 1.0 / lam]]))
        S = random_mobius(rng)
        T = S @ D @ S.inv()
        cls = classify(T)
        assert cls.kind == "Hyperbolic"
        assert cls.length == pytest.approx(2.0 * np.arccosh(1.5), abs=1e-9)
        assert cls.length == pytest.approx(min_displacement(T), abs=1e-6)

    def test_conjugation_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            T = random_hyperbolic(rng, 2.05, 12.0)
            S = random_mobius(rng)
            a, b = classify(T), classify(S @ T @ S.inv())
            assert a.kind == b.kind
            assert abs(a.length - b.length) < 1e-9

    def test_trace_formula_vs_minimization_sample(self):
        rng = np.random.default_rng(17)
        for _ in range(8):
            T = random_hyperbolic(rng)
            assert translation_length(T) == pytest.approx(
                min_displacement(T, rng=rng), abs=1e-6)


class TestAxis:
    def test_diagonal_axis_endpoints(self):
        lam = np.exp(1.0)
        T = Mobius(np.array([[lam, 0.0], [0.0, 1.0 / lam]]))
        u, v = axis(T).endpoints
        assert u == 0.0 and np.isinf(v)  # repelling 0, attracting infinity

    def test_conjugated_endpoints(self):
        rng = np.random.default_rng(23)
        lam = 2.0
        T = Mobius(np.array([[lam, 0.0], [0.0, 1.0 / lam]]))
        S = random_mobius(rng)
        u, v = axis(S @ T @ S.inv()).endpoints
        assert u == pytest.approx(S(0.0), abs=1e-9)
        assert v == pytest.approx(S._apply_ideal(np.inf), abs=1e-9)

    def test_displacement_minimized_on_axis(self):
        rng = np.random.default_rng(29)
        for _ in range(10):
            T = random_hyperbolic(rng, 2.2, 10.0)
            M = axis_chart(T)
            z_on = M(1j * np.exp(rng.uniform(-1, 1)))
            assert dist(T(z_on), z_on) == pytest.approx(
                translation_length(T), abs=1e-9)
            z_off = random_point(rng)
            assert dist(T(z_off), z_off) >= translation_length(T) - 1e-9

    def test_axis_chart_diagonalizes_with_positive_direction(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            T = random_hyperbolic(rng, 2.2, 10.0)
            M = axis_chart(T)
            D = (M.inv() @ T @ M).m
            ell = translation_length(T)
            assert D[0, 1] == pytest.approx(0.0, abs=1e-8)
            assert D[1, 0] == pytest.approx(0.0, abs=1e-8)
            assert D[0, 0] == pytest.approx(np.exp(ell / 2.0), rel=1e-9)

    def test_not_hyperbolic_raises(self):
        with pytest.raises(NotHyperbolic):
            axis(Mobius(np.array([[1.0, 1.0], [0.0, 1.0]])))


class TestGeodesicEval:
    def test_vertical_line(self):
        e = np.exp(1.0)
        assert geodesic_eval(1j, e * 1j, 1.0) == pytest.approx(e * 1j, abs=1e-12)

    def test_endpoint_recovery(self):
        rng = np.random.default_rng(37)
        for _ in range(20):
            p, q = random_point(rng), random_point(rng)
            if p == q:
                continue
            d = dist(p, q)
            assert geodesic_eval(p, q, 0.0) == pytest.approx(p, abs=1e-10)
            assert geodesic_eval(p, q, d) == pytest.approx(q, abs=1e-9)

    def test_midpoint_equidistance(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            p, q = random_point(rng), random_point(rng)
            if p == q:
                continue
            m = geodesic_eval(p, q, dist(p, q) / 2.0)
            assert dist(p, m) == pytest.approx(dist(m, q), abs=1e-10)

    def test_unit_speed(self):
        p, q = -1.0 + 0.7j, 2.5 + 1.9j
        for t in (0.3, 0.9, 1.7):
            assert dist(p, geodesic_eval(p, q, t)) == pytest.approx(t, abs=1e-10)

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateInput):
            geodesic_eval(1j, 1j, 0.5)
