"""Limit constants, tail rates and the desk-scale experiments around them.

Every limit law has the form

    lim (log R)^{-1/q} log max_{|x|<=R} u(t,x) = lambda*,

where q = p/(p-1) and log E u^m ~ C m^p.  The tail rate is the Legendre
transform of the moment growth, I(lambda) = sup_b {b lambda - C b^p}, and
lambda* solves I(lambda*) = d.  Each constant below is coded literally and
can be recomputed through that chain; the two must agree.
"""

from dataclasses import dataclass, field
from enum import Enum
import csv
import math

import numpy as np
from scipy import optimize, stats

from . import rng
from .spde import AdmissibilityError


class MissingInput(ValueError):
    """A constant needs a variational value that was not supplied."""


class TheoremId(Enum):
    TH1_1 = "Th1.1"
    TH1_2 = "Th1.2"
    TH1_3 = "Th1.3"
    COR1_4A = "Cor1.4a"
    COR1_4B = "Cor1.4b"
    COR1_4C = "Cor1.4c"
    COR1_5A = "Cor1.5a"
    COR1_5B = "Cor1.5b"
    COR1_5C = "Cor1.5c"
    TH1_6 = "Th1.6"
    TH1_7 = "Th1.7"
    COR1_8 = "Cor1.8"
    PROP3_1 = "Prop3.1"
    PROP3_2 = "Prop3.2"
    PROP3_2P = "Prop3.2p"
    PROP3_3 = "Prop3.3"
    PROP3_3P = "Prop3.3p"
    TH5_1 = "Th5.1"
    TH5_2 = "Th5.2"
    TH5_2P = "Th5.2p"
    TH5_3 = "Th5.3"
    TH5_4 = "Th5.4"

    @classmethod
    def parse(cls, s):
        if isinstance(s, cls):
            return s
        key = str(s).strip().lower().replace("_", ".").replace("'", "p")
        for m in cls:
            if m.value.lower() == key:
                return m
        raise ValueError(f"unknown theorem id {s!r}; valid: {', '.join(m.value for m in cls)}")


T = TheoremId

LIMIT_IDS = (T.TH1_1, T.TH1_2, T.TH1_3, T.COR1_4A, T.COR1_4B, T.COR1_4C, T.COR1_5A,
             T.COR1_5B, T.COR1_5C, T.TH1_6, T.TH1_7, T.COR1_8)
MOMENT_IDS = (T.PROP3_1, T.PROP3_2, T.PROP3_2P, T.PROP3_3, T.PROP3_3P)
TAIL_IDS = (T.TH5_1, T.TH5_2, T.TH5_2P, T.TH5_3, T.TH5_4)

# regime cells in which each statement holds (labels as in regime_classify)
REGIMES = {
    T.TH1_1: ("Theorem-1.1-class",),
    T.TH1_2: ("(1)x(I)", "(1)x(II)"),
    T.TH1_3: ("(1)x(III)",),
    T.TH1_6: ("(2)x(I)", "(2)x(II)"),
    T.TH1_7: ("(2)x(III)",),
}
REGIMES[T.COR1_4A] = REGIMES[T.COR1_5A] = REGIMES[T.PROP3_1] = REGIMES[T.TH5_1] = REGIMES[T.TH1_1]
REGIMES[T.COR1_4B] = REGIMES[T.COR1_5B] = REGIMES[T.PROP3_2] = REGIMES[T.TH5_2] = REGIMES[T.TH1_2]
REGIMES[T.COR1_4C] = REGIMES[T.COR1_5C] = REGIMES[T.PROP3_2P] = REGIMES[T.TH5_2P] = REGIMES[T.TH1_3]
REGIMES[T.PROP3_3] = REGIMES[T.TH5_3] = REGIMES[T.TH1_6]
REGIMES[T.PROP3_3P] = REGIMES[T.TH5_4] = REGIMES[T.COR1_8] = REGIMES[T.TH1_7]

# tail theorem <-> moment proposition <-> limit theorem
TAIL_OF_MOMENT = {T.PROP3_1: T.TH5_1, T.PROP3_2: T.TH5_2, T.PROP3_2P: T.TH5_2P,
                  T.PROP3_3: T.TH5_3, T.PROP3_3P: T.TH5_4}
MOMENT_OF_TAIL = {v: k for k, v in TAIL_OF_MOMENT.items()}
TAIL_OF_LIMIT = {T.TH1_1: T.TH5_1, T.TH1_2: T.TH5_2, T.TH1_3: T.TH5_2P, T.TH1_6: T.TH5_3,
                 T.TH1_7: T.TH5_4, T.COR1_4A: T.TH5_1, T.COR1_4B: T.TH5_2,
                 T.COR1_4C: T.TH5_2P, T.COR1_8: T.TH5_4}


@dataclass
class Params:
    """Inputs of the constants.

    gamma0: gamma(0); time_integral: int_0^t int_0^t gamma_0(r-s) dr ds;
    E: the relevant variational value (E(alpha0,d,gamma) in regime (1),
    E(d,gamma) in regime (2) and for the time-independent corollaries).
    """

    theta: float = 1.0
    t: float = 1.0
    d: int = 1
    alpha0: float = 0.0
    alpha: float = None
    gamma0: float = None
    time_integral: float = None
    E: float = None


def _params(params, kw):
    if params is None:
        params = Params()
    if kw:
        params = Params(**{**params.__dict__, **kw})
    return params


def _need(p, name, problem):
    v = getattr(p, name)
    if v is None:
        raise MissingInput(f"missing input {name!r}: supply the value of {problem}")
    return float(v)


def _alpha(p):
    a = _need(p, "alpha", "the scaling exponent alpha")
    if not 0 < a < 2:
        raise AdmissibilityError(f"need 0 < alpha < 2, got {a}")
    return a


def check_params(tid, p):
    """Numeric admissibility violations of ``p`` for ``tid``."""
    v = []
    if not p.theta > 0:
        v.append("theta > 0 required")
    if not p.t > 0:
        v.append("t > 0 required")
    if REGIMES[tid][0].startswith("(1)") and not 0 <= p.alpha0 < 1:
        v.append(f"0 <= alpha0 < 1 required (alpha0={p.alpha0})")
    if tid in (T.TH1_2, T.COR1_4B, T.PROP3_2, T.TH5_2) and p.alpha is not None:
        if not 2 * p.alpha0 + p.alpha < 2:
            v.append(f"2*alpha0+alpha<2 violated ({2 * p.alpha0 + p.alpha})")
    if REGIMES[tid][0] in ("(1)x(III)", "(2)x(III)") and p.d != 1:
        v.append("d=1 required")
    return v


def admissible_for(tid, spec):
    """True when the covariance spec lies in a regime where ``tid`` applies."""
    from .covariance import regime_classify

    rep = regime_classify(spec)
    tid = TheoremId.parse(tid)
    ok = rep.admissible and rep.label in REGIMES[tid]
    if tid in (T.COR1_5A, T.COR1_5B, T.COR1_5C):
        ok = ok and spec.time.is_constant
    return ok


def _check(tid, p):
    v = check_params(tid, p)
    if v:
        raise AdmissibilityError(f"{tid.value}: " + "; ".join(v))


# ---------------------------------------------------------------------------
# limit constants


def _th11(p):
    g0 = _need(p, "gamma0", "gamma(0)")
    I0 = _need(p, "time_integral", "the double integral of gamma_0 over [0,t]^2")
    return p.theta * math.sqrt(2.0 * p.d * g0 * I0)


def _th12(p):
    a = _alpha(p)
    E = _need(p, "E", "E(alpha0, d, gamma) (variational problem E, time-dependent)")
    return ((4 - a) / 4 * (4.0 * E / (2 - a)) ** ((2 - a) / (4 - a))
            * p.theta ** (4 / (4 - a)) * p.d ** (2 / (4 - a))
            * p.t ** ((4 - a - 2 * p.alpha0) / (4 - a)))


def _th13(p):
    E = _need(p, "E", "E(alpha0, 1, delta) (variational problem E, time-dependent, dirac)")
    return 0.75 * p.theta ** (4 / 3) * p.t ** ((3 - 2 * p.alpha0) / 3) * (4.0 * E) ** (1 / 3)


def _cor15a(p):
    g0 = _need(p, "gamma0", "gamma(0)")
    return p.t * p.theta * math.sqrt(2.0 * p.d * g0)


def _cor15b(p):
    a = _alpha(p)
    E = _need(p, "E", "E(d, gamma) (variational problem E, time-independent)")
    return ((4 - a) / 4 * p.t * (4.0 * E / (2 - a)) ** ((2 - a) / (4 - a))
            * p.theta ** (4 / (4 - a)) * p.d ** (2 / (4 - a)))


def _cor15c(p):
    return 0.75 * p.t * p.theta ** (4 / 3) * (2 / 3) ** (1 / 3)


def _th16(p):
    a = _alpha(p)
    E = _need(p, "E", "E(d, gamma) (variational problem E, time-independent)")
    return ((4 - a) / 4 * ((4.0 * E) * p.t / (2 - a)) ** ((2 - a) / (4 - a))
            * p.theta ** (4 / (4 - a)) * p.d ** (2 / (4 - a)))


def _th17(p):
    return 0.75 * ((2 / 3) * p.t) ** (1 / 3) * p.theta ** (4 / 3)


_LIMIT = {T.TH1_1: _th11, T.TH1_2: _th12, T.TH1_3: _th13, T.COR1_4A: _th11,
          T.COR1_4B: _th12, T.COR1_4C: _th13, T.COR1_5A: _cor15a, T.COR1_5B: _cor15b,
          T.COR1_5C: _cor15c, T.TH1_6: _th16, T.TH1_7: _th17, T.COR1_8: _th17}


def limit_constant(tid, params=None, **kw):
    """Right-hand side of the spatial limit law ``tid``.

    >>> round(limit_constant("th1.7", theta=1, t=1), 5)
    0.65518
    """
    tid = TheoremId.parse(tid)
    if tid not in _LIMIT:
        raise ValueError(f"{tid.value} is not a limit theorem")
    p = _params(params, kw)
    _check(tid, p)
    return float(_LIMIT[tid](p))


# ---------------------------------------------------------------------------
# moment growth constants: log E u(t,0)^m ~ C m^p


def _moment(tid, p):
    """(C, p) for a moment proposition."""
    if tid is T.PROP3_1:
        g0 = _need(p, "gamma0", "gamma(0)")
        I0 = _need(p, "time_integral", "the double integral of gamma_0 over [0,t]^2")
        return 0.5 * p.theta**2 * g0 * I0, 2.0
    if tid is T.PROP3_2:
        a = _alpha(p)
        E = _need(p, "E", "E(alpha0, d, gamma) (variational problem E, time-dependent)")
        C = (p.theta**2 / 2) ** (2 / (2 - a)) * p.t ** ((4 - a - 2 * p.alpha0) / (2 - a)) * E
        return C, (4 - a) / (2 - a)
    if tid is T.PROP3_2P:
        E = _need(p, "E", "E(alpha0, 1, delta) (variational problem E, time-dependent, dirac)")
        return p.theta**4 / 4 * p.t ** (3 - 2 * p.alpha0) * E, 3.0
    if tid is T.PROP3_3:
        a = _alpha(p)
        E = _need(p, "E", "E(d, gamma) (variational problem E, time-independent)")
        return p.t * (p.theta**2 / 2) ** (2 / (2 - a)) * E, (4 - a) / (2 - a)
    if tid is T.PROP3_3P:
        return p.t * p.theta**4 / 24, 3.0
    raise ValueError(f"{tid.value} is not a moment proposition")


def moment_growth(tid, params=None, **kw):
    """(C, p) with log E u^m ~ C m^p."""
    tid = TheoremId.parse(tid)
    p = _params(params, kw)
    _check(tid, p)
    return _moment(tid, p)


def moment_constant(tid, params=None, **kw):
    """Coefficient of the leading power of m in log E u(t,0)^m.

    Prop3.3 with gamma = delta (id Prop3.3p, or Prop3.3 without E and
    alpha) gives t theta^4 / 24.
    """
    tid = TheoremId.parse(tid)
    p = _params(params, kw)
    if tid is T.PROP3_3 and p.E is None and p.alpha in (None, 1, 1.0) and p.d == 1:
        tid = T.PROP3_3P
    return float(moment_growth(tid, p)[0])


def second_moment_rate(theta):
    """Large-t growth rate of log E u(t,0)^2 under space-time white noise.

    Returns (exact, leading) where exact = theta^4/4 is the true m = 2 rate
    and leading = 2^3 theta^4/24 = theta^4/3 is what the large-m law gives
    when m = 2 is plugged in.  They differ; the large-m law is not exact at
    small m.
    """
    return theta**4 / 4.0, 8.0 * theta**4 / 24.0


# ---------------------------------------------------------------------------
# tail rates


def _tail_literal(tid, p, lam):
    th = p.theta
    if tid is T.TH5_1:
        g0 = _need(p, "gamma0", "gamma(0)")
        I0 = _need(p, "time_integral", "the double integral of gamma_0 over [0,t]^2")
        return -lam**2 / (2 * th**2) / (g0 * I0)
    if tid is T.TH5_2:
        a = _alpha(p)
        E = _need(p, "E", "E(alpha0, d, gamma) (variational problem E, time-dependent)")
        return (-4 / th**2 * ((2 - a) / E) ** ((2 - a) / 2) * (lam / (4 - a)) ** ((4 - a) / 2)
                * p.t ** (-(4 - a - 2 * p.alpha0) / 2))
    if tid is T.TH5_2P:
        E = _need(p, "E", "E(alpha0, 1, delta) (variational problem E, time-dependent, dirac)")
        return -4 / th**2 * math.sqrt(1 / E) * (lam / 3) ** 1.5 * p.t ** (-(3 - 2 * p.alpha0) / 2)
    if tid is T.TH5_3:
        a = _alpha(p)
        E = _need(p, "E", "E(d, gamma) (variational problem E, time-independent)")
        return -4 / th**2 * ((2 - a) / (p.t * E)) ** ((2 - a) / 2) * (lam / (4 - a)) ** ((4 - a) / 2)
    if tid is T.TH5_4:
        return -4 / th**2 * (6 / p.t) ** 0.5 * (lam / 3) ** 1.5
    raise ValueError(f"{tid.value} is not a tail theorem")


def tail_rate(tid, lam, params=None, via="literal", **kw):
    """lim a^{-q} log P{log u(t,0) >= lam a}  (a negative number).

    ``via="legendre"`` recomputes it as minus the numerical Legendre
    transform of the matching moment growth.
    """
    tid = TheoremId.parse(tid)
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    p = _params(params, kw)
    _check(tid, p)
    if via == "literal":
        return float(_tail_literal(tid, p, lam))
    if via == "legendre":
        C, pw = _moment(MOMENT_OF_TAIL[tid], p)
        return -legendre_numeric(pw, C, lam)[0]
    raise ValueError("via must be 'literal' or 'legendre'")


def tail_exponent(tid, params=None, **kw):
    """q in a^{-q}: p/(p-1) for the matching moment growth."""
    tid = TheoremId.parse(tid)
    pw = moment_growth(MOMENT_OF_TAIL[tid], _params(params, kw))[1]
    return pw / (pw - 1)


def limit_constant_via_tail(tid, params=None, **kw):
    """lambda* with |rate(lambda*)| = d, i.e. the limit constant rebuilt from the tail."""
    tid = TheoremId.parse(tid)
    p = _params(params, kw)
    if tid in (T.COR1_5A, T.COR1_5B, T.COR1_5C):
        base = {T.COR1_5A: T.TH1_1, T.COR1_5B: T.TH1_2, T.COR1_5C: T.TH1_3}[tid]
        q = Params(**{**p.__dict__, "alpha0": 0.0, "time_integral": p.t**2})
        if tid is T.COR1_5C:
            q.E = 1.0 / 6.0
        return limit_constant_via_tail(base, q)
    tail = TAIL_OF_LIMIT[tid]
    _check(tail, p)
    C, pw = _moment(MOMENT_OF_TAIL[tail], p)
    qexp = pw / (pw - 1)
    rate1 = legendre(pw, C, 1.0)[0]  # rate is homogeneous: rate1 * lam^q
    return (p.d / rate1) ** (1 / qexp)


# ---------------------------------------------------------------------------
# Legendre transforms


def legendre(p, C0, lam):
    """sup_b {b lam - C0 b^p} in closed form; returns (value, argmax)."""
    if not (p > 1 and C0 > 0 and lam >= 0):
        raise ValueError("need p > 1, C0 > 0, lam >= 0")
    b = (lam / (p * C0)) ** (1 / (p - 1))
    val = (p - 1) / p * (C0 * p) ** (-1 / (p - 1)) * lam ** (p / (p - 1))
    return val, b


def legendre_numeric(p, C0, lam):
    """The same supremum located by root finding on the derivative."""
    if lam == 0:
        return 0.0, 0.0

    def dphi(s):  # derivative in log b
        b = math.exp(s)
        return lam - p * C0 * b ** (p - 1)

    lo, hi = -50.0, 50.0
    s = optimize.brentq(dphi, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    b = math.exp(s)
    return b * lam - C0 * b**p, b


def half_moment_rate(p, C0, beta):
    """((p+1)/p) (p C0)^{1/(p+1)} (beta/2)^{2p/(p+1)}."""
    if beta == 0:
        return 0.0
    return (p + 1) / p * (p * C0) ** (1 / (p + 1)) * (beta / 2) ** (2 * p / (p + 1))


def half_moment_rate_numeric(p, C0, beta):
    """sup_lam {beta lam^{1/2} - rate(lam)} with rate = legendre(p, C0, .)."""
    if beta == 0:
        return 0.0
    k = (p - 1) / p * (C0 * p) ** (-1 / (p - 1))
    q = p / (p - 1)

    def dphi(s):  # derivative of the objective w.r.t. lam, scaled by lam
        lam = math.exp(s)
        return 0.5 * beta * math.sqrt(lam) - q * k * lam**q

    s = optimize.brentq(dphi, -60.0, 60.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    lam = math.exp(s)
    return beta * math.sqrt(lam) - k * lam**q


# ---------------------------------------------------------------------------
# inputs from a covariance spec


def params_from_spec(spec, t, solve=True, **solver_kw):
    """Fill Params from a covariance spec, solving for E when ``solve``."""
    from . import variational

    s, tm = spec.space, spec.time
    p = Params(theta=spec.theta, t=t, d=spec.d)
    if tm.kind != "white":
        p.alpha0 = 0.0 if tm.kind == "one" else float(tm.alpha0)
    if s.bounded:
        p.gamma0 = s.gamma_at_zero
        if tm.kind != "white":
            p.time_integral = tm.double_integral(t)
        return p
    p.alpha = spec.alpha
    if not solve:
        return p
    if tm.kind == "white" or tm.is_constant:
        p.E = variational.solve_E_time_independent(s, **solver_kw).value
    else:
        p.E = variational.solve_E_time_dependent(spec, **solver_kw).value
    return p


# ---------------------------------------------------------------------------
# spatial scans


@dataclass
class ScanRecord:
    R: float
    max_log_u: float
    seed: int = 0
    t: float = float("nan")
    dx: float = float("nan")
    realization: int = 0
    x0: float = 0.0


def spatial_scan(values, x, R_grid, x0=0.0, seed=0, t=float("nan"), realization=0,
                 log_values=False, period=None):
    """max_{|x - x0| <= R} log u for each R (one-dimensional lattice).

    ``values`` are u (or log u with ``log_values``) at positions ``x``.
    With ``period`` the lattice is a torus and distances wrap.
    """
    v = np.asarray(values, dtype=float)
    x = np.asarray(x, dtype=float)
    if v.shape != x.shape or v.ndim != 1:
        raise ValueError("values and x must be 1-d arrays of equal length")
    R_grid = np.asarray(R_grid, dtype=float)
    if np.any(np.diff(R_grid) <= 0) or R_grid[0] < 0:
        raise ValueError("R grid must be nonnegative and increasing")
    dx = float(np.min(np.diff(np.sort(x)))) if x.size > 1 else float("nan")
    if period is None:
        reach = min(x0 - x.min(), x.max() - x0)
        r = np.abs(x - x0)
    else:
        reach = period / 2 - dx
        r = np.abs((x - x0 + period / 2) % period - period / 2)
    if R_grid[-1] > reach:
        raise ValueError(f"R_max={R_grid[-1]} exceeds the covered domain (|x - x0| <= {reach})")
    lv = v if log_values else np.log(v)
    order = np.argsort(r, kind="stable")
    cm = np.maximum.accumulate(lv[order])
    idx = np.searchsorted(r[order], R_grid, side="right") - 1
    if np.any(idx < 0):
        raise ValueError("no lattice site within the smallest radius")
    return [ScanRecord(float(R), float(cm[i]), seed, t, dx, realization, float(x0))
            for R, i in zip(R_grid, idx)]


def scan_experiment(cfg, seed, n_real, R_grid, centers=(0.0,), workers=1, batch=None):
    """Solve n_real SHE realizations on the torus and scan each one.

    Each realization is scanned around every point of ``centers``; with
    constant initial data the field is stationary, so extra centers reuse
    the same solve to lower the variance of the mean maximum.  Realizations
    are split across ``workers`` threads; realization r always sees the same
    noise, so the records do not depend on the split.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .spde import solve_batch

    x = cfg.grid.x
    reals = list(range(n_real))
    batch = batch or max(1, math.ceil(n_real / max(workers, 1)))
    chunks = [reals[i:i + batch] for i in range(0, n_real, batch)]

    def run(chunk):
        u = solve_batch(cfg, seed, chunk)
        out = []
        for r, row in zip(chunk, u):
            for c in centers:
                out += spatial_scan(row, x, R_grid, c, seed, cfg.nt * cfg.dt, r,
                                    period=cfg.grid.L)
        return out

    if workers <= 1 or len(chunks) == 1:
        res = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(run, chunks))
    return [rec for part in res for rec in part]


# ---------------------------------------------------------------------------
# exponent fits


@dataclass
class FitResult:
    exponent: float
    intercept: float  # log a in max_log_u = a (log R)^b
    half_width: float
    n: int
    method: str = "log-log"
    flags: list = field(default_factory=list)

    @property
    def prefactor(self):
        return math.exp(self.intercept)


def _ols(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


def _powerfit(lx, y):
    """Nonlinear LS of y = a exp(b lx); returns (log a, b)."""
    pos = y > 0
    b0 = 1.0
    if pos.sum() >= 2:
        b0, _ = np.polyfit(lx[pos], np.log(y[pos]), 1)
    a0 = max(np.mean(np.abs(y)) / np.mean(np.exp(b0 * lx)), 1e-12)
    (a, b), _ = optimize.curve_fit(lambda s, a, b: a * np.exp(b * s), lx, y, p0=(a0, b0),
                                   maxfev=20000)
    if a <= 0:
        raise ValueError("nonlinear fit gave a nonpositive prefactor")
    return math.log(a), b


def fit_exponent(records, level=0.95, n_boot=2000, seed=0, min_decades=2.0):
    """Fit max_log_u = a (log R)^b by least squares on (log log R, log max_log_u).

    Several realizations (distinct seed/realization labels) are resampled as
    whole scans; a single scan uses a residual bootstrap with
    leverage-corrected residuals.  The half-width is the bootstrap standard
    error times the t quantile (n - 2 or groups - 1 degrees of freedom).
    Nonpositive values switch to a direct nonlinear fit (flagged).
    """
    recs = list(records)
    R = np.array([r.R for r in recs], dtype=float)
    y = np.array([r.max_log_u for r in recs], dtype=float)
    if len(recs) < 4 or np.unique(R).size < 2 or R.min() <= 1:
        raise ValueError("insufficient spread: need >= 4 records with R > 1")
    if math.log10(R.max() / R.min()) < min_decades - 1e-12:
        raise ValueError(f"insufficient spread: R covers < {min_decades} decades")
    lx = np.log(np.log(R))
    X = np.column_stack([np.ones_like(lx), lx])
    loglog = bool(np.all(y > 0))
    flags = []
    if loglog:
        ly = np.log(y)

        def fit(idx):
            return _ols(X[idx], ly[idx])
    else:
        flags.append("nonlinear fallback: nonpositive max_log_u")

        def fit(idx):
            return np.array(_powerfit(lx[idx], y[idx]))

    allidx = np.arange(len(recs))
    c0 = fit(allidx)
    g = rng.stream(seed, rng.BOOTSTRAP)
    groups = {}
    for i, r in enumerate(recs):
        groups.setdefault((r.seed, r.realization), []).append(i)
    bs = []
    if len(groups) >= 4 and np.unique(R).size >= 2:
        keys = list(groups)
        df = len(keys) - 1
        for _ in range(n_boot):
            pick = g.integers(0, len(keys), len(keys))
            idx = np.concatenate([groups[keys[k]] for k in pick])
            if np.unique(R[idx]).size < 2:
                continue
            try:
                bs.append(fit(idx)[1])
            except (ValueError, RuntimeError):
                continue
    else:
        df = max(len(recs) - 2, 1)
        yy = ly if loglog else y
        if loglog:
            fitted = X @ c0
        else:
            fitted = np.exp(c0[0]) * np.exp(c0[1] * lx)
        res = yy - fitted
        H = X @ np.linalg.pinv(X)
        h = np.clip(np.diag(H), 0, 1 - 1e-12)
        adj = res / np.sqrt(1 - h)
        adj -= adj.mean()
        for _ in range(n_boot):
            yb = fitted + adj[g.integers(0, len(adj), len(adj))]
            try:
                if loglog:
                    bs.append(_ols(X, yb)[1])
                else:
                    bs.append(_powerfit(lx, yb)[1])
            except (ValueError, RuntimeError):
                continue
    se = float(np.std(bs, ddof=1)) if len(bs) > 1 else float("nan")
    hw = float(stats.t.ppf(0.5 + level / 2, df) * se)
    return FitResult(float(c0[1]), float(c0[0]), hw, len(recs),
                     "log-log" if loglog else "nonlinear", flags)


# ---------------------------------------------------------------------------
# moment growth


@dataclass
class GrowthRow:
    m: int
    log_moment: float
    log_se: float
    reliable: bool
    flags: list = field(default_factory=list)


@dataclass
class GrowthResult:
    rows: list
    q: float
    c: float
    q_half_width: float
    note: str = ""


def default_moment_estimator(spec, t, n_mc=4000, seed=0, **kw):
    """m -> MomentEstimate using the annealed path-integral estimators."""
    from . import feynman_kac as fk

    if spec.white_time:
        return lambda m: fk.annealed_moment_white_time(m, t, spec, n_mc=n_mc, seed=seed,
                                                       **kw).extrapolated
    return lambda m: fk.annealed_moment_fractional(m, t, spec, n_mc, seed, **kw)


def moment_growth_experiment(ms, estimator, level=0.95):
    """Table of log E u^m and a fit log E u^m = c m^q over the reliable rows."""
    rows = []
    for m in ms:
        e = estimator(int(m))
        ok = not e.flags and e.value > 0 and np.isfinite(e.log_value)
        lse = e.stderr / e.value if e.value > 0 else float("inf")
        rows.append(GrowthRow(int(m), float(e.log_value), float(lse), ok, list(e.flags)))
    good = [r for r in rows if r.reliable and r.log_moment > 0]
    if len(good) < 2:
        return GrowthResult(rows, float("nan"), float("nan"), float("nan"),
                            "fewer than two reliable positive rows")
    lm = np.log([r.m for r in good])
    ly = np.log([r.log_moment for r in good])
    # error of log(log E) from the delta method
    s = np.array([max(r.log_se / r.log_moment, 1e-15) for r in good])
    w = 1 / s
    X = np.column_stack([np.ones_like(lm), lm])
    coef, *_ = np.linalg.lstsq(X * w[:, None], ly * w, rcond=None)
    cov = np.linalg.inv((X * w[:, None]).T @ (X * w[:, None]))
    hw = stats.norm.ppf(0.5 + level / 2) * math.sqrt(cov[1, 1])
    return GrowthResult(rows, float(coef[1]), float(math.exp(coef[0])), float(hw))


# ---------------------------------------------------------------------------
# output


def write_scan_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "realization", "x0", "t", "dx", "R", "max_log_u"])
        for r in records:
            w.writerow([r.seed, r.realization, f"{r.x0:.17g}", f"{r.t:.17g}", f"{r.dx:.17g}", f"{r.R:.17g}",
                        f"{r.max_log_u:.17g}"])


def write_growth_csv(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "log_moment", "log_se", "reliable"])
        for r in result.rows:
            w.writerow([r.m, f"{r.log_moment:.17g}", f"{r.log_se:.17g}", int(r.reliable)])


def write_gnuplot(path, csv_name, xcol, ycol, title, logx=False, logy=False, xlabel=None,
                  ylabel=None):
    """Plain gnuplot script plotting two columns of a CSV written alongside."""
    lines = [
        "set datafile separator ','",
        f"set title '{title}'",
        f"set xlabel '{xlabel or xcol}'",
        f"set ylabel '{ylabel or ycol}'",
        "set key autotitle columnhead",
        "set terminal pngcairo size 800,600",
        f"set output '{csv_name.rsplit('.', 1)[0]}.png'",
    ]
    if logx:
        lines.append("set logscale x")
    if logy:
        lines.append("set logscale y")
    lines.append(f"plot '{csv_name}' using '{xcol}':'{ycol}' with points pt 7")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
