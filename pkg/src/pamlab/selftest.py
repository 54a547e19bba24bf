"""Quick property checks at reduced sizes (``pamlab selftest``)."""

import math
import time

import numpy as np


def _legendre():
    from . import asymptotics as asy

    g = np.random.default_rng(0)
    for _ in range(20):
        p, C, lam = 1.1 + 3 * g.random(), 0.1 + 2 * g.random(), 0.1 + 3 * g.random()
        a, b = asy.legendre(p, C, lam)[0], asy.legendre_numeric(p, C, lam)[0]
        if abs(a - b) > 1e-10 * max(1, abs(a)):
            return False
    return True


def _tails():
    from . import asymptotics as asy

    g = np.random.default_rng(1)
    for tid in asy.TAIL_IDS:
        for _ in range(10):
            a = 0.2 + 1.2 * g.random()
            kw = dict(theta=0.5 + g.random(), t=0.2 + 2 * g.random(), d=1,
                      alpha0=0.4 * (1 - a / 2) * g.random(), alpha=a, gamma0=0.5 + g.random(),
                      time_integral=0.1 + g.random(), E=0.05 + g.random())
            lam = 0.1 + 3 * g.random()
            x = asy.tail_rate(tid, lam, **kw)
            y = asy.tail_rate(tid, lam, via="legendre", **kw)
            if abs(x - y) > 1e-8 * abs(x):
                return False
    return True


def _specialization():
    from . import asymptotics as asy

    return all(asy.limit_constant("Th1.6", alpha=1, d=1, E=1 / 6, theta=th, t=t)
               == asy.limit_constant("Th1.7", theta=th, t=t)
               for th in (0.5, 1.0, 2.0) for t in (0.3, 1.0, 7.0))


def _scaling():
    from .covariance import SpaceCovariance, gamma_eval

    s = SpaceCovariance.riesz(0.7, 2)
    x = np.array([[0.3, -1.2], [2.0, 0.5]])
    return np.allclose(gamma_eval(s, 3.0 * x), 3.0**-0.7 * gamma_eval(s, x), rtol=1e-13)


def _rng():
    from . import rng

    return np.array_equal(rng.normals(7, rng.MISC, 3, (4, 5)), rng.normals(7, rng.MISC, 3, (4, 5)))


def _backends():
    from . import _fallback, kernels

    g = np.random.default_rng(2)
    u = 1 + g.random((3, 16))
    xi = g.standard_normal((3, 16))
    a = kernels.heat_step(u, xi, 0.25, 1.0, 0.1, 0)
    b = _fallback.heat_step(u, xi, 0.25, 1.0, 0.1, 0)
    return np.allclose(a, b, rtol=1e-13)


def _positivity_and_order():
    from .spde import SolveConfig, solve_batch

    lo = SolveConfig(nx=64, dx=0.1, t_final=0.2, u0=1.0)
    hi = SolveConfig(nx=64, dx=0.1, t_final=0.2, u0=2.0)
    a, b = solve_batch(lo, 3, range(20)), solve_batch(hi, 3, range(20))
    return bool(np.all(a > 0) and np.all(b >= a))


def _scan():
    from .asymptotics import spatial_scan

    g = np.random.default_rng(3)
    x = np.arange(-500, 501) * 1.0
    recs = spatial_scan(np.exp(g.standard_normal(x.size)), x, [1, 10, 100, 400])
    v = [r.max_log_u for r in recs]
    return all(b >= a for a, b in zip(v, v[1:]))


def _energy():
    from .covariance import SpaceCovariance
    from .variational import solve_E_time_independent

    r = solve_E_time_independent(SpaceCovariance.dirac(), L=20, nx=256, n_starts=2)
    return abs(r.value - 1 / 6) < 5e-3


def _second_moment():
    from .spde import SolveConfig, ensemble_sites, second_moment_exact

    cfg = SolveConfig(theta=1.0, t_final=0.1, nx=40, dx=0.1, dt=0.005)
    u = ensemble_sites(cfg, 11, 2000)[:, 0]
    m2, se = np.mean(u**2), np.std(u**2, ddof=1) / math.sqrt(u.size)
    # coarse lattice: compare with a loose tolerance (bias ~ dx)
    return abs(m2 - second_moment_exact(1.0, 0.1)) < 4 * se + 0.05


CHECKS = [
    ("legendre closed form vs root finding", _legendre),
    ("tail rates literal vs legendre", _tails),
    ("Th1.6 specializes to Th1.7", _specialization),
    ("riesz scaling", _scaling),
    ("rng reproducibility", _rng),
    ("compiled vs numpy kernels", _backends),
    ("positivity and monotone coupling", _positivity_and_order),
    ("scan monotonicity", _scan),
    ("E(1, delta) = 1/6 at reduced size", _energy),
    ("second moment (small lattice)", _second_moment),
]


def run_all(verbose=True):
    ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            good = bool(fn())
        except Exception as e:  # report and continue
            good = False
            name = f"{name} ({type(e).__name__}: {e})"
        ok &= good
        if verbose:
            print(f"{'PASS' if good else 'FAIL'}  {name}  [{time.perf_counter() - t0:.2f}s]")
    return ok
