import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from picard_lod.expr import Arity, parse_expression
from picard_lod.funcspace import (
    Domain,
    FuncSpaceError,
    Radii,
    SepFunc,
    ball_check,
    graded_norm,
    graded_norms_upto,
    interpolate,
    iterated_time_integral,
    joint_norm,
    partial_derivative,
)

AX = Arity(s=1)
HALF = Domain(0.0, 0.5, 0.5)          # time only, tbar = 1/2
SQUARE = Domain(0.0, 0.5, 0.5, ((-1.0, 1.0),))
UNIT_T = Domain(0.0, 1.0, 1.0, ((-1.0, 1.0),))


def expr(text, s=1):
    return parse_expression(text, Arity(s=s))


class TestDomain:
    def test_tbar(self):
        d = Domain(0.0, 0.25, 0.5, ((-1, 1),))
        assert d.tbar == 0.5
        assert d.t_interval == (-0.25, 0.5)

    def test_invalid(self):
        with pytest.raises(FuncSpaceError):
            Domain(0.0, 0.0, 1.0)
        with pytest.raises(FuncSpaceError):
            Domain(0.0, 1.0, 1.0, ((2.0, 2.0),))


class TestInterpolate:
    def test_polynomial_is_exact(self):
        f = interpolate(expr("x1^2"), Domain(0.0, 0.5, 0.5, ((-1, 1),)), (0, 2))
        assert f.interp_error <= 1e-13
        assert np.allclose(f.coeffs[0, 0], [0.5, 0.0, 0.5])

    def test_zero(self):
        f = interpolate(expr("0"), SQUARE, (0, 4))
        assert np.max(np.abs(f.coeffs)) == 0.0

    def test_sin_to_spectral_accuracy(self):
        dom = Domain(0.0, 0.5, 0.5, ((-math.pi, math.pi),))
        f = interpolate(expr("sin(x1)"), dom, (0, 20))
        xs = np.linspace(-math.pi, math.pi, 200)
        vals = f.eval_grid(np.array([0.0]), [xs])[0, 0]
        assert np.max(np.abs(vals - np.sin(xs))) <= 1e-10
        assert f.interp_error <= 1e-10

    def test_undeclared_variable_rejected(self):
        with pytest.raises(FuncSpaceError):
            interpolate(expr("x1", s=1), HALF, (4,))


class TestDerivative:
    def test_exact_on_coefficients(self):
        f = interpolate(expr("x1^2"), SQUARE, (0, 2))
        df = partial_derivative(f, (0, 1))
        xs = np.linspace(-1, 1, 50)
        assert np.allclose(df.eval_grid(np.array([0.0]), [xs])[0, 0], 2 * xs)

    def test_t_derivative_of_t_independent_is_zero(self):
        f = interpolate(expr("x1^2"), SQUARE, (0, 2))
        dt = partial_derivative(f, (1, 0))
        assert np.max(np.abs(dt.coeffs)) == 0.0

    def test_second_derivative_of_sin_interpolant(self):
        dom = Domain(0.0, 0.5, 0.5, ((-math.pi, math.pi),))
        f = interpolate(expr("sin(x1)"), dom, (0, 20))
        d2 = partial_derivative(f, (0, 2))
        xs = np.linspace(-math.pi, math.pi, 200)
        vals = d2.eval_grid(np.array([0.0]), [xs])[0, 0]
        assert np.max(np.abs(vals + np.sin(xs))) <= 1e-8


class TestTimeIntegral:
    def test_zero_integrand(self):
        z = SepFunc.zeros(HALF, 1, 0, (0,))
        assert np.max(np.abs(iterated_time_integral(z, 1).coeffs)) == 0.0

    def test_two_fold_of_one(self):
        one = interpolate(expr("1", s=0), Domain(0.0, 1.0, 1.0), (0,))
        g = iterated_time_integral(one, 2)
        assert g.eval_grid(np.array([1.0]))[0, 0] == pytest.approx(0.5, abs=1e-14)

    def test_saturates_the_time_width_bound(self):
        one = interpolate(expr("1", s=0), HALF, (0,))
        g = iterated_time_integral(one, 1)
        assert graded_norm(g, 0) == pytest.approx(0.5, abs=1e-14)

    def test_degree_cap(self):
        f = SepFunc.zeros(HALF, 1, 0, (127,))
        with pytest.raises(FuncSpaceError, match="cap"):
            iterated_time_integral(f, 3)


class TestGradedNorm:
    def test_zero(self):
        z = SepFunc.zeros(SQUARE, 1, 0, (0, 0))
        for k in range(4):
            assert graded_norm(z, k) == 0.0

    def test_x_squared(self):
        # sup over {x^2, |2x|, 2} on [0,1]x[-1,1] with p = 0
        dom = Domain(0.5, 0.5, 0.5, ((-1.0, 1.0),))
        f = interpolate(expr("x1^2"), dom, (0, 2))
        assert graded_norm(f, 2) == pytest.approx(2.0, abs=1e-12)

    def test_antiderivative_of_one(self):
        one = interpolate(expr("1", s=0), HALF, (0,))
        g = iterated_time_integral(one, 1)
        assert graded_norm(g, 1) == pytest.approx(0.5, abs=1e-14)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(3)
        f = SepFunc(SQUARE, 1, 2, rng.standard_normal((1, 4, 5)))
        norms = graded_norms_upto(f, 6)
        assert np.all(np.diff(norms) >= -1e-15)


class TestJointNorm:
    def test_integral_of_one(self):
        one = interpolate(expr("1", s=0), HALF, (0,))
        g = iterated_time_integral(one, 1)
        assert joint_norm(g, 1) == pytest.approx(1.0, abs=1e-14)

    def test_constant_one(self):
        one = interpolate(expr("1", s=0), HALF, (0,))
        assert joint_norm(one, 1) == pytest.approx(1.0, abs=1e-14)

    def test_zero(self):
        assert joint_norm(SepFunc.zeros(HALF, 1, 0, (0,)), 2) == 0.0


class TestSupNormSeparation:
    def test_integral_counterexample_vs_graded_bound(self):
        # the jointly graded norm breaks the time-width bound, the separated
        # one does not (with equality on this instance)
        one = interpolate(expr("1", s=0), HALF, (0,))
        g = iterated_time_integral(one, 1)
        tbar = HALF.tbar
        assert joint_norm(g, 1) > tbar * joint_norm(one, 1)
        assert graded_norm(g, 1) <= tbar * graded_norm(one, 1) + 1e-14
        assert graded_norm(g, 1) == pytest.approx(tbar * graded_norm(one, 1))


class TestIntegralNormBound:
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_random_polynomials(self, d):
        rng = np.random.default_rng(100 + d)
        for _ in range(5):
            degs = (int(rng.integers(0, 5)), int(rng.integers(0, 5)))
            f = SepFunc(SQUARE, 1, 0, rng.standard_normal((1, degs[0] + 1, degs[1] + 1)))
            g = iterated_time_integral(f, d)
            nf = graded_norms_upto(f, 6)
            ng = graded_norms_upto(g, 6)
            for k in range(7):
                assert ng[k] <= SQUARE.tbar * nf[k] + 1e-10


def test_derivative_inverts_time_integral_exactly():
    rng = np.random.default_rng(11)
    for j in (1, 2, 3):
        f = SepFunc(SQUARE, 1, 0, rng.standard_normal((1, 4, 3)))
        g = iterated_time_integral(f, j)
        back = partial_derivative(g, (j, 0))
        a, b = back.coeffs, f.coeffs
        assert a.shape == b.shape
        assert np.max(np.abs(a - b)) <= 1e-12


coeff_arrays = st.lists(
    st.floats(-10, 10, allow_nan=False), min_size=6, max_size=6
).map(lambda v: np.array(v).reshape(1, 2, 3))


class TestNormAxioms:
    @settings(max_examples=25, deadline=None)
    @given(coeff_arrays, coeff_arrays, st.integers(0, 3))
    def test_triangle_and_homogeneity(self, a, b, k):
        f = SepFunc(SQUARE, 1, 1, a)
        g = SepFunc(SQUARE, 1, 1, b)
        nf, ng = graded_norm(f, k), graded_norm(g, k)
        assert nf >= 0.0
        assert graded_norm(f + g, k) <= nf + ng + 1e-9
        assert graded_norm(f * -2.5, k) == pytest.approx(2.5 * nf, rel=1e-12)


class TestBallCheck:
    def test_center_is_member(self):
        f = interpolate(expr("x1^2"), SQUARE, (0, 2))
        rep = ball_check(f, f, Radii.constant(0.5), 3)
        assert rep.member and all(r.distance == 0.0 for r in rep.rows)

    def test_constant_offset_fails_at_k0(self):
        f = interpolate(expr("x1^2"), SQUARE, (0, 2))
        g = f + interpolate(expr("1"), SQUARE, (0, 0))
        rep = ball_check(g, f, Radii.constant(0.5), 2)
        assert not rep.member
        assert rep.rows[0].k == 0 and not rep.rows[0].within

    def test_infinite_radii(self):
        f = interpolate(expr("x1^2"), SQUARE, (0, 2))
        g = f + interpolate(expr("100"), SQUARE, (0, 0))
        assert ball_check(g, f, Radii.infinite(), 4).member

    def test_domain_mismatch(self):
        f = interpolate(expr("x1"), SQUARE, (0, 1))
        g = interpolate(expr("x1"), UNIT_T, (0, 1))
        with pytest.raises(FuncSpaceError):
            ball_check(f, g, Radii.infinite(), 1)


class TestRadii:
    def test_sentinel_and_extension(self):
        r = Radii.from_list([1.0, 2.0])
        assert r.value(0) == 1.0 and r.value(5) == 2.0
        assert math.isinf(Radii.infinite().value(10))

    def test_strict_list(self):
        r = Radii.from_list([1.0], extend="strict")
        with pytest.raises(FuncSpaceError):
            r.value(1)

    def test_positive_required(self):
        with pytest.raises(FuncSpaceError):
            Radii.from_list([0.0])


def test_serialization_round_trip():
    f = interpolate(expr("sin(x1)"), SQUARE, (0, 12))
    g = SepFunc.loads(f.dumps())
    assert g == f  # domain, m, p compare; coefficients checked below
    assert np.array_equal(np.asarray(g.coeffs), np.asarray(f.coeffs))


def test_trim_drops_negligible_tail():
    c = np.zeros((1, 3, 5))
    c[0, 0, 0] = 1.0
    c[0, 2, 4] = 1e-20
    f = SepFunc(SQUARE, 1, 0, c)
    assert f.trim().degrees == (0, 0)
