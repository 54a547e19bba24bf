import math

import numpy as np
import pytest
from scipy import optimize

from pamlab import rng
from pamlab.asymptotics import (
    LIMIT_IDS,
    TAIL_IDS,
    MissingInput,
    Params,
    ScanRecord,
    TheoremId,
    admissible_for,
    default_moment_estimator,
    fit_exponent,
    half_moment_rate,
    half_moment_rate_numeric,
    legendre,
    legendre_numeric,
    limit_constant,
    limit_constant_via_tail,
    moment_constant,
    moment_growth,
    moment_growth_experiment,
    params_from_spec,
    scan_experiment,
    second_moment_rate,
    spatial_scan,
    tail_exponent,
    tail_rate,
    write_gnuplot,
    write_growth_csv,
    write_scan_csv,
)
from pamlab.covariance import CovarianceSpec, SpaceCovariance, TimeCovariance
from pamlab.feynman_kac import annealed_moment_fractional
from pamlab.spde import AdmissibilityError, SolveConfig, second_moment_exact

WHITE_DIRAC = CovarianceSpec(TimeCovariance.white(), SpaceCovariance.dirac(), 1.0)


def random_params(g, tid):
    """Admissible random inputs for ``tid``."""
    p = Params(theta=g.uniform(0.3, 3), t=g.uniform(0.2, 5), d=1,
               alpha0=g.uniform(0, 0.4), alpha=g.uniform(0.1, 1.0), gamma0=g.uniform(0.2, 3),
               time_integral=g.uniform(0.2, 5), E=g.uniform(0.05, 2))
    return p


# --- limit constants ---------------------------------------------------------------

def test_white_dirac_limit_constant():
    assert limit_constant("Th1.7", theta=1, t=1) == pytest.approx(0.75 * (2 / 3) ** (1 / 3),
                                                                   rel=1e-14)
    assert limit_constant("Th1.7", theta=1, t=1) == pytest.approx(0.65518, abs=1e-5)


def test_bounded_limit_constant():
    v = limit_constant("Th1.1", theta=1, d=1, gamma0=1, time_integral=1, t=1)
    assert v == pytest.approx(math.sqrt(2), rel=1e-14)


def test_time_independent_white_dirac_matches_at_t1():
    assert limit_constant("Cor1.5c", theta=1, t=1) == limit_constant("Th1.7", theta=1, t=1)


def test_riesz_law_reduces_to_dirac_law():
    for theta, t in [(1, 1), (2.3, 0.4), (0.7, 5.0)]:
        a = limit_constant("Th1.6", theta=theta, t=t, alpha=1.0, d=1, E=1 / 6)
        assert a == pytest.approx(limit_constant("Th1.7", theta=theta, t=t), rel=1e-14)


def test_time_dependent_dirac_law_at_alpha0_zero():
    # alpha0 = 0 and E(1, delta) = 1/6: the time-dependent law with t^1 scaling
    a = limit_constant("Th1.3", theta=1.4, t=2.0, alpha0=0.0, E=1 / 6)
    assert a == pytest.approx(0.75 * 1.4 ** (4 / 3) * 2.0 * (2 / 3) ** (1 / 3), rel=1e-14)


def test_fractional_law_at_alpha0_zero_is_time_independent():
    for theta, t, a, E in [(1, 1, 0.5, 1.56), (2, 0.3, 1.2, 0.4)]:
        x = limit_constant("Cor1.4b", theta=theta, t=t, alpha0=0.0, alpha=a, E=E)
        y = limit_constant("Cor1.5b", theta=theta, t=t, alpha=a, E=E)
        assert x == pytest.approx(y, rel=1e-12)


def test_missing_input_names_problem():
    with pytest.raises(MissingInput, match="E\\(d, gamma\\)"):
        limit_constant("Th1.6", theta=1, t=1, alpha=0.5)
    with pytest.raises(MissingInput, match="gamma"):
        limit_constant("Th1.1", theta=1, t=1)


def test_inadmissible_params():
    with pytest.raises(AdmissibilityError):
        limit_constant("Th1.2", alpha0=0.7, alpha=0.8, E=1.0)
    with pytest.raises(AdmissibilityError):
        limit_constant("Th1.7", theta=-1)


def test_not_a_limit_theorem():
    with pytest.raises(ValueError):
        limit_constant("Th5.4")


@pytest.mark.parametrize("tid", LIMIT_IDS)
def test_limit_literal_matches_tail_route(tid):
    g = rng.stream(7, rng.MISC, LIMIT_IDS.index(tid))
    for _ in range(5):
        p = random_params(g, tid)
        if tid in (TheoremId.COR1_5A, TheoremId.COR1_5B, TheoremId.COR1_5C):
            p.alpha0 = 0.0
            p.time_integral = p.t**2
        if tid in (TheoremId.COR1_5C, TheoremId.TH1_7, TheoremId.COR1_8):
            p.E = 1 / 6
        assert limit_constant_via_tail(tid, p) == pytest.approx(limit_constant(tid, p), rel=1e-10)


def test_theorem_id_parse():
    assert TheoremId.parse("th1.7") is TheoremId.TH1_7
    assert TheoremId.parse("Prop3.3'") is TheoremId.PROP3_3P
    assert TheoremId.parse(TheoremId.TH5_1) is TheoremId.TH5_1
    with pytest.raises(ValueError):
        TheoremId.parse("Th9.9")


def test_admissible_for():
    white_dirac = CovarianceSpec(TimeCovariance.white(), SpaceCovariance.dirac())
    assert admissible_for("Th1.7", white_dirac)
    assert not admissible_for("Th1.1", white_dirac)
    flat = CovarianceSpec(TimeCovariance.one(), SpaceCovariance.smooth(1.0, 1.0))
    assert admissible_for("Th1.1", flat)
    assert admissible_for("Cor1.5a", flat)
    frac = CovarianceSpec(TimeCovariance.fractional(0.5), SpaceCovariance.smooth(1.0, 1.0))
    assert admissible_for("Th1.1", frac)
    assert not admissible_for("Cor1.5a", frac)


def test_params_from_spec_bounded():
    spec = CovarianceSpec(TimeCovariance.one(), SpaceCovariance.smooth(2.0, 1.0), 1.5)
    p = params_from_spec(spec, 2.0)
    assert p.gamma0 == 2.0 and p.time_integral == pytest.approx(4.0)
    assert limit_constant("Th1.1", p) == pytest.approx(1.5 * math.sqrt(2 * 2.0 * 4.0))


def test_params_from_spec_solves_E():
    p = params_from_spec(WHITE_DIRAC, 1.0, L=20, nx=256)
    assert p.E == pytest.approx(1 / 6, abs=2e-3)


# --- moment constants ----------------------------------------------------------------------

def test_white_dirac_moment_constant():
    assert moment_constant("Prop3.3", theta=1, t=2) == pytest.approx(1 / 12, rel=1e-14)


def test_bounded_moment_constant():
    assert moment_constant("Prop3.1", gamma0=1, time_integral=1, t=1, theta=1) == 0.5


def test_second_moment_rates_differ():
    exact, leading = second_moment_rate(1.3)
    assert exact == pytest.approx(1.3**4 / 4)
    assert leading == pytest.approx(1.3**4 / 3)
    # long-time oracle: log E u^2 / t -> theta^4 / 4
    t = 400.0
    assert math.log(second_moment_exact(1.3, t)) / t == pytest.approx(exact, rel=0.01)


def test_moment_growth_powers():
    assert moment_growth("Prop3.1", gamma0=1, time_integral=1)[1] == 2.0
    assert moment_growth("Prop3.3", alpha=0.5, E=1.0)[1] == pytest.approx(3.5 / 1.5)
    assert moment_growth("Prop3.3p")[1] == 3.0


# --- tail rates ------------------------------------------------------------------------------

def test_white_dirac_tail_rate():
    assert tail_rate("Th5.4", 3.0, theta=1, t=6) == pytest.approx(-4.0, rel=1e-14)


def test_tail_needs_positive_lambda():
    with pytest.raises(ValueError):
        tail_rate("Th5.4", 0.0)


@pytest.mark.parametrize("tid,power", [("Th5.1", 2.0), ("Th5.2", None), ("Th5.3", None),
                                       ("Th5.4", 1.5), ("Th5.2p", 1.5)])
def test_tail_homogeneity(tid, power):
    p = Params(theta=1.2, t=0.8, alpha0=0.2, alpha=0.6, gamma0=1.0, time_integral=0.7, E=0.9)
    q = power if power is not None else (4 - p.alpha) / 2
    r1, r4 = tail_rate(tid, 0.5, p), tail_rate(tid, 2.0, p)
    assert r4 / r1 == pytest.approx(4**q, rel=1e-12)


@pytest.mark.parametrize("tid", TAIL_IDS)
def test_tail_literal_equals_legendre(tid):
    g = rng.stream(11, rng.MISC, TAIL_IDS.index(tid))
    for _ in range(10):
        p = random_params(g, tid)
        lam = g.uniform(0.1, 5)
        lit = tail_rate(tid, lam, p)
        leg = tail_rate(tid, lam, p, via="legendre")
        assert abs(lit - leg) <= 1e-8 * max(1.0, abs(lit))


def test_tail_exponent():
    assert tail_exponent("Th5.4") == pytest.approx(1.5)
    assert tail_exponent("Th5.1", gamma0=1, time_integral=1) == pytest.approx(2.0)


# --- Legendre transforms -----------------------------------------------------------------------

def grid_sup(f, lo, hi, n=200001):
    """Grid search followed by bounded refinement around the best node."""
    s = np.linspace(lo, hi, n)
    v = f(s)
    i = int(np.argmax(v))
    a, b = s[max(i - 1, 0)], s[min(i + 1, n - 1)]
    r = optimize.minimize_scalar(lambda z: -f(np.array([z]))[0], bounds=(a, b),
                                 method="bounded", options={"xatol": 1e-14})
    return -r.fun, r.x


def test_legendre_example():
    val, arg = legendre(2, 1, 2)
    assert val == pytest.approx(1.0, rel=1e-14) and arg == pytest.approx(1.0, rel=1e-14)
    ref, b = grid_sup(lambda b: 2 * b - b**2, 0, 5)
    assert ref == pytest.approx(1.0, abs=1e-10) and b == pytest.approx(1.0, abs=1e-6)


def test_legendre_vs_grid_search():
    g = rng.stream(3, rng.MISC)
    for _ in range(20):
        p, C0, lam = g.uniform(1.2, 4), g.uniform(0.1, 3), g.uniform(0.1, 5)
        val, arg = legendre(p, C0, lam)
        # search in log b so that small and large maximizers are resolved alike
        ref, s = grid_sup(lambda s: np.exp(s) * lam - C0 * np.exp(s) ** p, -20, 10)
        assert val == pytest.approx(ref, rel=1e-6)
        assert math.log(arg) == pytest.approx(s, abs=1e-5)
        assert legendre_numeric(p, C0, lam)[0] == pytest.approx(val, rel=1e-12)


def test_legendre_small_lambda():
    vals = [legendre(2.5, 1.0, lam)[0] for lam in [1e-2, 1e-4, 1e-8]]
    assert vals[0] > vals[1] > vals[2] > 0
    assert vals[2] < 1e-12
    assert legendre(2.5, 1.0, 0.0)[0] == 0.0


def test_half_moment_example():
    assert half_moment_rate(2, 1, 2) == pytest.approx(1.5 * 2 ** (1 / 3), rel=1e-14)
    assert half_moment_rate(2, 1, 2) == pytest.approx(1.8899, abs=5e-5)


def test_half_moment_vs_grid_search():
    g = rng.stream(4, rng.MISC)
    for _ in range(10):
        p, C0, beta = g.uniform(1.2, 4), g.uniform(0.1, 3), g.uniform(0.1, 5)
        k, q = legendre(p, C0, 1.0)[0], p / (p - 1)
        ref, _ = grid_sup(lambda s: beta * np.exp(s / 2) - k * np.exp(s) ** q, -30, 10)
        assert half_moment_rate(p, C0, beta) == pytest.approx(ref, rel=1e-6)
        assert half_moment_rate_numeric(p, C0, beta) == pytest.approx(ref, rel=1e-6)


def test_half_moment_zero():
    assert half_moment_rate(2, 1, 0) == 0.0
    assert half_moment_rate_numeric(2, 1, 0) == 0.0


# --- spatial scans -----------------------------------------------------------------------------

def test_scan_constant_field():
    x = np.arange(-50, 51) * 0.5
    recs = spatial_scan(np.full(x.size, 3.0), x, [1, 5, 20])
    assert [r.max_log_u for r in recs] == [math.log(3.0)] * 3


def test_scan_monotone():
    g = np.random.default_rng(0)
    x = np.arange(-1000, 1001) * 0.1
    recs = spatial_scan(g.lognormal(0, 2, x.size), x, np.geomspace(0.5, 90, 30))
    v = [r.max_log_u for r in recs]
    assert all(b >= a for a, b in zip(v, v[1:]))


def test_scan_matches_brute_force():
    g = np.random.default_rng(1)
    x = np.arange(200) * 0.1
    lv = g.standard_normal(200)
    for rec in spatial_scan(lv, x, [0.3, 2.0, 7.5], x0=10.0, log_values=True):
        assert rec.max_log_u == lv[np.abs(x - 10.0) <= rec.R].max()


def test_scan_radius_too_large():
    x = np.arange(-10, 11) * 1.0
    with pytest.raises(ValueError, match="exceeds the covered domain"):
        spatial_scan(np.ones(21), x, [5, 11])


def test_scan_torus_wraps():
    n, dx = 100, 1.0
    x = np.arange(n) * dx
    lv = np.zeros(n)
    lv[98] = 5.0
    recs = spatial_scan(lv, x, [1, 3], x0=1.0, log_values=True, period=n * dx)
    assert [r.max_log_u for r in recs] == [0.0, 5.0]


def test_gumbel_oracle():
    # log-values iid standard Gumbel: the max over n = 2R + 1 sites is
    # log n + Gumbel, so the mean curve is log(2R + 1) + Euler gamma.  Its
    # local exponent in log R is log R / (log R + log 2 + gamma) -> 1.
    R = np.array([10.0, 100.0, 1e3, 1e4, 1e5])
    x = np.arange(-100001, 100002) * 1.0
    recs = []
    for r in range(30):
        lv = rng.stream(5, rng.MISC, r).gumbel(size=x.size)
        recs += spatial_scan(lv, x, R, seed=5, realization=r, log_values=True)
    fit = fit_exponent(recs)

    def mean_curve(R):
        return [ScanRecord(float(r), math.log(2 * r + 1) + np.euler_gamma) for r in R]

    exact = fit_exponent(mean_curve(R), n_boot=10).exponent
    assert 0.7 < exact < 1.0
    assert abs(fit.exponent - exact) < fit.half_width
    far = fit_exponent(mean_curve(np.logspace(40, 200, 5)), n_boot=10).exponent
    assert exact < far < 1.0 and far > 0.98


# --- fits --------------------------------------------------------------------------------------

def synthetic(a, b, R, noise=None):
    y = a * np.log(R) ** b
    if noise is not None:
        y = y * (1 + noise)
    return [ScanRecord(float(r), float(v)) for r, v in zip(R, y)]


def test_fit_noiseless():
    R = np.logspace(1, 5, 9)
    f = fit_exponent(synthetic(0.65, 2 / 3, R))
    assert abs(f.exponent - 2 / 3) < 1e-6
    assert abs(f.prefactor - 0.65) < 1e-6
    assert f.half_width >= 0


def test_fit_coverage():
    R = np.logspace(1, 5, 5)
    hits = 0
    for k in range(100):
        z = rng.stream(12, rng.MISC, k).standard_normal(R.size)
        f = fit_exponent(synthetic(0.65, 2 / 3, R, 0.05 * z), n_boot=500, seed=k)
        hits += abs(f.exponent - 2 / 3) <= f.half_width
    assert hits >= 90


def test_fit_insufficient_spread():
    with pytest.raises(ValueError, match="insufficient spread"):
        fit_exponent(synthetic(0.65, 2 / 3, np.logspace(1, 5, 3)))
    with pytest.raises(ValueError, match="insufficient spread"):
        fit_exponent(synthetic(0.65, 2 / 3, np.logspace(1, 2.5, 6)))


def test_fit_nonpositive_fallback():
    R = np.logspace(1, 5, 8)
    recs = synthetic(0.65, 2 / 3, R)
    recs = [ScanRecord(r.R, r.max_log_u - 1.2) for r in recs]
    f = fit_exponent(recs, n_boot=50)
    assert f.method == "nonlinear"
    assert any("fallback" in s for s in f.flags)


def test_fit_grouped_by_realization():
    R = np.logspace(1, 5, 5)
    recs = []
    for r in range(8):
        z = rng.stream(13, rng.MISC, r).standard_normal(R.size)
        for rec in synthetic(0.65, 2 / 3, R, 0.02 * z):
            rec.realization = r
            recs.append(rec)
    f = fit_exponent(recs, n_boot=500)
    assert abs(f.exponent - 2 / 3) <= f.half_width
    assert f.n == 40


# --- scan experiment ----------------------------------------------------------------------------

def test_scan_experiment_worker_independent():
    cfg = SolveConfig(t_final=0.05, dx=0.1, nx=256, theta=2.0)
    R = [0.5, 2.0, 8.0]
    a = scan_experiment(cfg, 3, 4, R, centers=(0.0, 6.4), workers=1)
    b = scan_experiment(cfg, 3, 4, R, centers=(0.0, 6.4), workers=2, batch=1)
    assert len(a) == 4 * 2 * 3
    assert [(r.realization, r.x0, r.R, r.max_log_u) for r in a] == \
           [(r.realization, r.x0, r.R, r.max_log_u) for r in b]


# --- moment growth ------------------------------------------------------------------------------

def test_growth_constant_covariance_exact():
    theta, t, g0 = 1.2, 0.8, 1.5
    spec = CovarianceSpec(TimeCovariance.one(), SpaceCovariance.smooth(g0, math.inf), theta)
    est = lambda m: annealed_moment_fractional(m, t, spec, 200, 0, n_steps=4)
    res = moment_growth_experiment([1, 2, 3, 4], est)
    assert res.q == pytest.approx(2.0, rel=1e-10)
    assert res.c == pytest.approx(0.5 * theta**2 * g0 * t**2, rel=1e-10)
    for row in res.rows:
        assert row.log_moment == pytest.approx(0.5 * theta**2 * g0 * t**2 * row.m**2, rel=1e-12)


@pytest.fixture(scope="module")
def white_growth():
    est = default_moment_estimator(WHITE_DIRAC, 0.5, n_mc=2000, seed=21)
    return moment_growth_experiment([2, 3, 4], est)


def test_growth_white_dirac_power(white_growth):
    assert 2.2 <= white_growth.q <= 3.5


def test_growth_second_moment_row(white_growth):
    row = white_growth.rows[0]
    exact = math.log(second_moment_exact(1.0, 0.5))
    assert abs(row.log_moment - exact) < 4 * row.log_se


def test_growth_unreliable_row_excluded():
    class Fake:
        def __init__(self, m, flags):
            self.value = math.exp(m**2)
            self.log_value = float(m**2)
            self.stderr = 0.01 * self.value
            self.flags = flags

    res = moment_growth_experiment([1, 2, 3, 4], lambda m: Fake(m, ["heavy-tail"] if m == 4 else []))
    assert [r.reliable for r in res.rows] == [True, True, True, False]
    assert res.q == pytest.approx(2.0, rel=1e-10)
    short = moment_growth_experiment([1, 2], lambda m: Fake(m, ["heavy-tail"]))
    assert math.isnan(short.q)


# --- output -------------------------------------------------------------------------------------

def test_csv_headers(tmp_path):
    recs = [ScanRecord(10.0, 1.5, 3, 1.0, 0.1, 2, 0.0)]
    write_scan_csv(tmp_path / "s.csv", recs)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "seed,realization,x0,t,dx,R,max_log_u"
    assert lines[1].split(",")[:2] == ["3", "2"]
    class Fake:
        value, log_value, stderr, flags = math.e, 1.0, 0.01, []
    res = moment_growth_experiment([1, 2], lambda m: Fake())
    write_growth_csv(tmp_path / "g.csv", res)
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "m,log_moment,log_se,reliable"
    write_gnuplot(tmp_path / "s.gp", "s.csv", "R", "max_log_u", "scan", logx=True)
    gp = (tmp_path / "s.gp").read_text()
    assert "plot 's.csv'" in gp and "set logscale x" in gp
