import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from pamlab.covariance import (
    CovarianceError,
    CovarianceSpec,
    SpaceCovariance,
    TimeCovariance,
    dalang_check,
    gamma0_eval,
    gamma_eval,
    gamma_fourier,
    kernel_eval,
    mollify_gamma,
    regime_classify,
    space_cell_covariance,
    spec_from_text,
    spec_to_text,
)

alphas = st.floats(0.05, 0.95)
points = st.floats(-50, 50).filter(lambda v: abs(v) > 1e-3)


# --- gamma0 -----------------------------------------------------------------

def test_gamma0_fractional_value():
    assert gamma0_eval(TimeCovariance.fractional(0.5), 4.0) == 0.5


def test_gamma0_constant():
    assert gamma0_eval(TimeCovariance.one(), 7.3) == 1.0


def test_gamma0_singularity():
    with pytest.raises(CovarianceError, match="singularity"):
        gamma0_eval(TimeCovariance.fractional(0.25), 0.0)


def test_gamma0_white_is_distributional():
    with pytest.raises(CovarianceError, match="distributional covariance; use weighted quadrature"):
        gamma0_eval(TimeCovariance.white(), 1.0)


def test_time_constraints():
    with pytest.raises(CovarianceError):
        TimeCovariance.fractional(1.0)
    with pytest.raises(CovarianceError):
        TimeCovariance.fractional(-0.1)


# --- gamma ------------------------------------------------------------------

def test_riesz_value():
    assert gamma_eval(SpaceCovariance.riesz(1, 2), [3.0, 4.0]) == pytest.approx(0.2, rel=1e-15)


def test_riesz_halving():
    # alpha = 1 needs d >= 2 (0 < alpha < d); the ratio depends on alpha only
    s = SpaceCovariance.riesz(1, 2)
    x = np.array([1.7, -0.4])
    assert gamma_eval(s, 2 * x) / gamma_eval(s, x) == pytest.approx(0.5, rel=1e-15)


def test_riesz_alpha_equal_d_rejected():
    with pytest.raises(CovarianceError):
        SpaceCovariance.riesz(1, 1)


def test_smooth_at_origin():
    assert gamma_eval(SpaceCovariance.smooth(2.0, 1.0), 0.0) == 2.0


def test_dirac_pointwise_errors():
    with pytest.raises(CovarianceError, match="distributional"):
        gamma_eval(SpaceCovariance.dirac(), 0.3)


def test_singular_point_errors():
    with pytest.raises(CovarianceError):
        gamma_eval(SpaceCovariance.riesz(0.5), 0.0)
    with pytest.raises(CovarianceError):
        gamma_eval(SpaceCovariance.product([0.7, 0.8]), [1.0, 0.0])


def test_space_constraints():
    with pytest.raises(CovarianceError):
        SpaceCovariance.riesz(1.0, 1)
    with pytest.raises(CovarianceError):
        SpaceCovariance.product([0.4, 0.8])
    with pytest.raises(CovarianceError):
        SpaceCovariance("dirac", d=2)


@settings(max_examples=100, deadline=None)
@given(a=alphas, x=points, y=points)
def test_symmetry(a, x, y):
    for s, p in [(SpaceCovariance.riesz(a, 1), x), (SpaceCovariance.riesz(2 * a, 2), [x, y]),
                 (SpaceCovariance.product([0.5 + a / 2, 0.75]), [x, y]),
                 (SpaceCovariance.smooth(1.3, 2.0, 2), [x, y])]:
        p = np.asarray(p)
        assert gamma_eval(s, p) == gamma_eval(s, -p)


@settings(max_examples=50, deadline=None)
@given(a=alphas, x=points, y=points, c=st.sampled_from([2.0, 10.0]))
def test_scaling(a, x, y, c):
    for s, p in [(SpaceCovariance.riesz(a, 1), np.array(x)),
                 (SpaceCovariance.riesz(2 * a, 2), np.array([x, y])),
                 (SpaceCovariance.product([0.5 + a / 2, 0.75]), np.array([x, y]))]:
        lhs = gamma_eval(s, c * p)
        rhs = c ** (-s.alpha) * gamma_eval(s, p)
        assert lhs == pytest.approx(rhs, rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(x=points, y=points)
def test_smooth_maximal_at_origin(x, y):
    s = SpaceCovariance.smooth(1.7, 0.8, 2)
    assert gamma_eval(s, [x, y]) <= gamma_eval(s, [0.0, 0.0])


# --- Fourier ----------------------------------------------------------------

def test_dirac_fourier_flat():
    assert np.all(gamma_fourier(SpaceCovariance.dirac(), np.linspace(-9, 9, 11)) == 1.0)


def test_riesz_fourier_homogeneity():
    s = SpaceCovariance.riesz(1.0, 2)
    lam = np.array([0.7, -1.1])
    assert gamma_fourier(s, 2 * lam) / gamma_fourier(s, lam) == pytest.approx(0.5, rel=1e-14)


def test_smooth_fourier_quadrature():
    s = SpaceCovariance.smooth(1.5, 0.7)
    lam = np.random.default_rng(0).uniform(-8, 8, 50)
    for l in lam:
        num = integrate.quad(lambda x: gamma_eval(s, x) * math.cos(l * x), -20, 20, limit=200)[0]
        f = gamma_fourier(s, l)
        assert f >= 0
        assert f == pytest.approx(num, abs=1e-9)


def test_riesz_fourier_quadrature():
    # 1-d: int |x|^-a cos(l x) dx = 2 Gamma(1-a) sin(pi a / 2) |l|^(a-1)
    a, l = 0.5, 1.3
    s = SpaceCovariance.riesz(a)
    ref = 2 * math.gamma(1 - a) * math.sin(math.pi * a / 2) * l ** (a - 1)
    assert gamma_fourier(s, l) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(a=alphas, l=st.floats(0.01, 100))
def test_fourier_nonnegative(a, l):
    for s, p in [(SpaceCovariance.riesz(a), l), (SpaceCovariance.riesz(2 * a, 2), [l, -l / 3]),
                 (SpaceCovariance.product([0.5 + a / 2, 0.9]), [l, 2 * l])]:
        assert gamma_fourier(s, p) >= 0


# --- kernel factorization -----------------------------------------------------

def test_dirac_kernel_is_distributional():
    k = kernel_eval(SpaceCovariance.dirac(), 0.0)
    assert k.distributional
    with pytest.raises(CovarianceError):
        k(0.0)


@pytest.mark.parametrize("a", [0.3, 0.5, 0.8])
def test_riesz_kernel_convolution(a):
    s = SpaceCovariance.riesz(a)
    K = kernel_eval(s)
    e = K.exponent

    def conv(x0):
        f = lambda y: K.constant**2 * abs(y) ** -e * abs(x0 - y) ** -e
        tot = 0.0
        for lo, hi in [(-np.inf, -x0), (-x0, 0), (0, x0 / 2), (x0 / 2, x0), (x0, 2 * x0),
                       (2 * x0, np.inf)]:
            tot += integrate.quad(f, lo, hi, limit=400)[0]
        return tot

    for x0 in [0.5, 1.0, 2.0, 3.0, 5.0]:
        assert conv(x0) / gamma_eval(s, x0) == pytest.approx(1.0, abs=1e-2)


def test_product_kernel_convolution_axis():
    s = SpaceCovariance.product([0.7, 0.8])
    K = kernel_eval(s)
    # the product kernel factorizes; check one axis by quadrature
    a = s.axis_alphas[0]
    e = (1 + a) / 2
    c1 = K.constant / kernel_eval(SpaceCovariance.riesz(s.axis_alphas[1])).constant
    x0 = 1.5
    f = lambda y: c1**2 * abs(y) ** -e * abs(x0 - y) ** -e
    tot = sum(integrate.quad(f, lo, hi, limit=400)[0] for lo, hi in
              [(-np.inf, 0), (0, x0 / 2), (x0 / 2, x0), (x0, np.inf)])
    assert tot == pytest.approx(x0 ** -a, rel=1e-2)


def test_smooth_kernel_convolution():
    s = SpaceCovariance.smooth(2.0, 0.6)
    K = kernel_eval(s)
    for x0 in [0.0, 0.4, 1.1]:
        v = integrate.quad(lambda y: K(y) * K(x0 - y), -10, 10)[0]
        assert v == pytest.approx(gamma_eval(s, x0), rel=1e-8)


def test_riesz_mollified_kernel_finite():
    k = kernel_eval(SpaceCovariance.riesz(0.5), 0.1)
    v = k(0.0)
    assert np.isfinite(v) and v > 0


# --- mollification -----------------------------------------------------------

@pytest.mark.parametrize("eps", [0.001, 0.01, 0.3])
def test_mollified_dirac_at_zero(eps):
    assert mollify_gamma(SpaceCovariance.dirac(), eps, 0.0) == pytest.approx(
        (4 * math.pi * eps) ** -0.5, rel=1e-14)


def test_mollified_riesz_near_unmollified():
    v = mollify_gamma(SpaceCovariance.riesz(0.5), 0.01, 1.0)
    assert abs(v - 1.0) < 0.02


def test_mollified_riesz_quadrature():
    eps, a = 0.05, 0.5
    var = 2 * eps
    for x in [0.0, 0.2, 1.0, 3.0]:
        p = lambda y: math.exp(-y * y / (2 * var)) / math.sqrt(2 * math.pi * var)
        f = lambda y: p(y) * abs(x - y) ** -a
        num = sum(integrate.quad(f, lo, hi, limit=200)[0]
                  for lo, hi in [(-np.inf, x - 1), (x - 1, x), (x, x + 1), (x + 1, np.inf)])
        assert mollify_gamma(SpaceCovariance.riesz(a), eps, x) == pytest.approx(num, rel=1e-7)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-20, 20), eps=st.floats(1e-3, 1.0), a=alphas)
def test_mollified_symmetry(x, eps, a):
    for s in [SpaceCovariance.dirac(), SpaceCovariance.riesz(a), SpaceCovariance.smooth(1, 2)]:
        assert mollify_gamma(s, eps, x) == mollify_gamma(s, eps, -x)


def test_mollified_exhaustion():
    eps = [1.0, 0.3, 0.1, 0.03, 0.01]
    for s in [SpaceCovariance.dirac(), SpaceCovariance.riesz(0.6), SpaceCovariance.riesz(1.2, 2)]:
        v = [float(mollify_gamma(s, e, np.zeros(s.d))) for e in eps]
        assert all(b > a for a, b in zip(v, v[1:]))


def test_mollify_needs_positive_eps():
    with pytest.raises(CovarianceError):
        mollify_gamma(SpaceCovariance.riesz(0.5), 0.0, 1.0)


# --- admissibility -----------------------------------------------------------

def test_dalang():
    assert dalang_check(SpaceCovariance.riesz(1, 2))
    assert not dalang_check(SpaceCovariance.riesz(2.5, 3))
    assert dalang_check(SpaceCovariance.dirac())


def test_dalang_radial_oracle():
    # int_0^R r^(alpha - 1) / (1 + r^2) dr: bounded in R iff alpha < 2
    def partial(a, R):
        return integrate.quad(lambda r: r ** (a - 1) / (1 + r * r), 0, R, limit=400)[0]

    grow = partial(2.5, 1e4) - partial(2.5, 1e2)
    settle = partial(1.0, 1e4) - partial(1.0, 1e2)
    assert grow > 5 and settle < 0.01


def test_regime_violation_reported():
    r = regime_classify(CovarianceSpec(TimeCovariance.fractional(0.6), SpaceCovariance.riesz(0.9, 2)))
    assert r.label == "(1)x(I)"
    assert not r.admissible
    assert any("2*alpha0+alpha<2" in v for v in r.violations)


def test_regime_boundary_case_is_admissible():
    # 2 * 0.5 + 0.8 = 1.8 < 2
    r = regime_classify(CovarianceSpec(TimeCovariance.fractional(0.5), SpaceCovariance.riesz(0.8, 2)))
    assert r.admissible


def test_regime_white_dirac():
    r = regime_classify(CovarianceSpec(TimeCovariance.white(), SpaceCovariance.dirac()))
    assert r.label == "(2)x(III)" and r.admissible


def test_regime_smooth():
    r = regime_classify(CovarianceSpec(TimeCovariance.one(), SpaceCovariance.smooth(1.0, 1.0)))
    assert r.label == "Theorem-1.1-class" and r.admissible


def test_regime_product():
    ok = CovarianceSpec(TimeCovariance.fractional(0.2), SpaceCovariance.product([0.8, 0.9]))
    bad = CovarianceSpec(TimeCovariance.fractional(0.9), SpaceCovariance.product([0.55, 0.55]))
    assert regime_classify(ok).admissible
    assert not regime_classify(bad).admissible


def test_regime_white_riesz_bound():
    r = regime_classify(CovarianceSpec(TimeCovariance.white(), SpaceCovariance.riesz(2.2, 3)))
    assert not r.admissible


# --- cells and serialization ---------------------------------------------------

def test_cell_covariance_far_lags():
    c = space_cell_covariance(SpaceCovariance.riesz(0.5), 0.1, 200)
    k = np.arange(30, 200)
    assert np.allclose(c[30:], (k * 0.1) ** -0.5, rtol=2e-3)


def test_cell_covariance_2d_matches_quadrature():
    h, a = 0.5, 1.0
    c = space_cell_covariance(SpaceCovariance.riesz(a, 2), h, 4)
    # lag (1, 2): average of |x - y|^-a over two cells = tent-weighted integral
    f = lambda y, x: ((1 + x) ** 2 + (2 + y) ** 2) ** (-a / 2) * (1 - abs(x)) * (1 - abs(y))
    ref = integrate.dblquad(f, -1, 1, -1, 1)[0] * h ** -a
    assert c[1, 2] == pytest.approx(ref, rel=1e-6)


def test_spec_text_roundtrip():
    for spec in [CovarianceSpec(TimeCovariance.fractional(0.3), SpaceCovariance.riesz(0.7, 2), 1.5),
                 CovarianceSpec(TimeCovariance.white(), SpaceCovariance.dirac(), 2.0),
                 CovarianceSpec(TimeCovariance.one(), SpaceCovariance.smooth(0.5, 3.0), 0.1),
                 CovarianceSpec(TimeCovariance.fractional(0.1), SpaceCovariance.product([0.6, 0.7]))]:
        assert spec_from_text(spec_to_text(spec)) == spec


def test_spec_unknown_key():
    with pytest.raises(CovarianceError, match="valid keys"):
        spec_from_text("space.kind = dirac\nspace.colour = red\n")
