"""Brownian-path Monte Carlo: quenched path integrals and annealed moments.

Annealed moments use the pair-interaction representation

    E u(t,0)^m = E exp{ theta^2/2 sum_{j,k} Q_jk }          (pointwise time)
    E u(t,0)^m = E exp{ theta^2 sum_{j<k} Q_jk }            (white time)

with Q_jk the double (resp. equal-time) integral of the covariance along
pairs of independent Brownian paths.  Singular space covariances are
replaced by their heat-smoothed versions gamma_eps.
"""

from dataclasses import dataclass, field
import csv
import math
import warnings

import numpy as np
from scipy.special import logsumexp

from . import kernels, rng
from .covariance import (
    CovarianceError,
    gaussian_smoothed_power,
    mollified_gamma_function,
    time_cell_covariance,
)

BLOCK = 256  # ensembles per random-stream block


class FieldDomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# paths


@dataclass
class PathEnsemble:
    """m paths sampled at times k dt, k = 0..n_steps; positions (m, n_steps + 1, d)."""

    positions: np.ndarray
    dt: float

    @property
    def m(self):
        return self.positions.shape[0]

    @property
    def n_steps(self):
        return self.positions.shape[1] - 1

    @property
    def d(self):
        return self.positions.shape[2]

    @property
    def t(self):
        return self.n_steps * self.dt

    @property
    def increments(self):
        return np.diff(self.positions, axis=1)

    @property
    def start(self):
        return self.positions[:, 0]


def _brownian(g, shape, n_steps, dt, start):
    inc = g.standard_normal(shape + (n_steps,) + start.shape[-1:]) * math.sqrt(dt)
    pos = np.empty(shape + (n_steps + 1,) + start.shape[-1:])
    pos[..., 0, :] = start
    np.cumsum(inc, axis=-2, out=pos[..., 1:, :])
    pos[..., 1:, :] += start[..., None, :]
    return pos


def sample_paths(m, n_steps, dt, d=1, seed=0, start=None, index=0):
    """One ensemble of m independent Brownian paths (block ``index`` of the stream)."""
    start = np.zeros((m, d)) if start is None else np.broadcast_to(
        np.asarray(start, dtype=float).reshape(-1, d), (m, d))
    g = rng.stream(seed, rng.PATHS, index)
    return PathEnsemble(_brownian(g, (m,), n_steps, dt, start), dt)


def sample_path_blocks(n_mc, m, n_steps, dt, d, seed, tag=rng.PATHS):
    """Yield (S, m, n_steps + 1, d) arrays covering n_mc ensembles in fixed blocks."""
    start = np.zeros((d,))
    for b in range(0, n_mc, BLOCK):
        S = min(BLOCK, n_mc - b)
        g = rng.stream(seed, tag, b // BLOCK)
        pos = _brownian(g, (BLOCK, m), n_steps, dt, np.broadcast_to(start, (BLOCK, m, d)))
        yield pos[:S]


# ---------------------------------------------------------------------------
# pair interactions


class PairEvaluator:
    """Covariance (possibly heat-smoothed) packaged for the pair kernels."""

    def __init__(self, space, eps=0.0):
        self.space, self.eps = space, float(eps)
        k = space.kind
        self.mode, self.ell, self.ds = 1, 1.0, 1.0
        self.tables = np.zeros((1, 2))
        self.amp, self.var = 1.0, 1.0
        if k == "smooth":
            w2 = space.width**2
            v = w2 + 2 * self.eps
            self.amp = space.amp * (1.0 if math.isinf(w2) else (w2 / v) ** (space.d / 2))
            self.var = v
        elif self.eps <= 0:
            raise CovarianceError(f"{k} covariance needs eps > 0 along paths")
        elif k == "dirac":
            self.amp = (4 * math.pi * self.eps) ** -0.5
            self.var = 2 * self.eps
        elif k == "riesz":
            _, (ell, ds, vals) = mollified_gamma_function(space, self.eps)
            self.mode, self.ell, self.ds = 0, ell, ds
            self.tables = np.ascontiguousarray(vals[None, :])
        else:
            ell, s = math.sqrt(2 * self.eps), np.linspace(0.0, 12.0, 6001)
            r = ell * np.sinh(s)
            self.mode, self.ell, self.ds = 0, ell, s[1]
            self.tables = np.ascontiguousarray(np.stack(
                [gaussian_smoothed_power(r, a, 2 * self.eps, 1) for a in space.axis_alphas]))

    def args(self):
        return (self.mode, self.ell, self.ds, self.tables, self.amp, self.var)

    @property
    def at_zero(self):
        if self.mode == 1:
            return self.amp
        return float(np.prod(self.tables[:, 0]))


def time_weights(time, n_steps, dt):
    """Cell-pair weights W_ab = int_cell_a int_cell_b gamma0(r - s) dr ds."""
    c = time_cell_covariance(time, dt, n_steps) * dt * dt
    idx = np.arange(n_steps)
    return c[np.abs(idx[:, None] - idx[None, :])]


def trapezoid_weights(n_steps, dt):
    w = np.full(n_steps + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass
class HamiltonianMatrix:
    Q: np.ndarray
    regime: int

    def __getitem__(self, jk):
        j, k = jk
        if self.regime == 2 and j == k:
            raise ValueError("diagonal of the equal-time interaction is undefined")
        return self.Q[j, k]

    @property
    def diagonal_defined(self):
        return self.regime == 1

    def total(self):
        """sum_{j,k} Q_jk (regime 1) or sum_{j<k} Q_jk (regime 2)."""
        if self.regime == 1:
            return float(self.Q.sum())
        return float(np.triu(self.Q, 1).sum())


def _midpoints(pos):
    return np.ascontiguousarray(0.5 * (pos[..., 1:, :] + pos[..., :-1, :]))


def _default_eps(space, dt):
    return 0.0 if space.kind == "smooth" else dt


def _batch_q(pos, spec, ev, dt):
    n = pos.shape[-2] - 1
    if spec.white_time:
        w = trapezoid_weights(n, dt)
        return kernels.pair_equal_time(np.ascontiguousarray(pos), w, ev)
    W = time_weights(spec.time, n, dt)
    return kernels.pair_double_time(_midpoints(pos), W, ev)


def hamiltonian_matrix(paths, spec, eps=None):
    """Pair-interaction matrix of one path ensemble.

    Pointwise time covariance: Q_jk = sum_ab W_ab gamma_eps(B_j(a) - B_k(b))
    with cell-pair weights W and path positions at cell midpoints.  White
    time: Q_jk = trapezoid sum of gamma_eps(B_j(s) - B_k(s)), j != k.
    """
    eps = _default_eps(spec.space, paths.dt) if eps is None else eps
    ev = PairEvaluator(spec.space, eps)
    Q = _batch_q(paths.positions[None], spec, ev, paths.dt)[0]
    return HamiltonianMatrix(Q, 2 if spec.white_time else 1)


# ---------------------------------------------------------------------------
# moment estimators


@dataclass
class MomentEstimate:
    m: int
    value: float
    log_value: float
    stderr: float
    n_samples: int
    epsilon: float = 0.0
    max_share: float = 0.0
    ess: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def log_stderr(self):
        return self.stderr / self.value


def _summarize(m, logw, eps, flags=None):
    logw = np.asarray(logw, dtype=float)
    n = logw.size
    lse = logsumexp(logw)
    log_mean = float(lse - math.log(n))
    w = np.exp(logw - lse)  # normalized weights
    value = math.exp(log_mean)
    se = value * math.sqrt(float(np.sum((n * w - 1.0) ** 2)) / (n * max(n - 1, 1)))
    share = float(w.max())
    flags = list(flags or [])
    if share > 0.5:
        flags.append("heavy-tail: top sample carries over half the mean")
    return MomentEstimate(m, value, log_mean, se, n, eps, share, 1.0 / float(np.sum(w * w)), flags)


def annealed_moment_fractional(m, t, spec, n_mc, seed, n_steps=32, eps=None):
    """E u(t,0)^m for a pointwise time covariance."""
    if spec.white_time:
        raise ValueError("use annealed_moment_white_time for white time covariance")
    dt = t / n_steps
    eps = _default_eps(spec.space, dt) if eps is None else eps
    ev = PairEvaluator(spec.space, eps)
    logw = []
    for pos in sample_path_blocks(n_mc, m, n_steps, dt, spec.d, seed):
        Q = _batch_q(pos, spec, ev, dt)
        logw.append(0.5 * spec.theta**2 * Q.sum(axis=(1, 2)))
    return _summarize(m, np.concatenate(logw), eps)


@dataclass
class WhiteTimeEstimate:
    extrapolated: MomentEstimate
    per_eps: list
    monotone: bool
    note: str = "eps->0 by a + b sqrt(eps) fit through the three smallest eps (heuristic)"

    @property
    def smallest(self):
        return self.per_eps[-1]


def annealed_moment_white_time(m, t, spec, eps_schedule=None, n_mc=20000, seed=0,
                               n_steps=None):
    """E u(t,0)^m for white time, with eps -> 0 extrapolation.

    All eps share the same paths, so differences across eps and the
    extrapolated combination have small variance.  The default schedule is
    t * (0.01, 0.005, 0.0025, 0.00125) with dt = eps_min / 4.
    """
    if not spec.white_time:
        raise ValueError("annealed_moment_white_time needs white time covariance")
    if eps_schedule is None:
        eps_schedule = t * np.array([0.01, 0.005, 0.0025, 0.00125])
    eps = np.array(sorted(eps_schedule, reverse=True), dtype=float)
    if len(eps) < 3:
        raise ValueError("need at least three eps values")
    if n_steps is None:
        n_steps = int(math.ceil(4 * t / eps[-1]))
    dt = t / n_steps
    evs = [PairEvaluator(spec.space, e) for e in eps]
    logw = [[] for _ in eps]
    for pos in sample_path_blocks(n_mc, m, n_steps, dt, spec.d, seed):
        pos = np.ascontiguousarray(pos)
        for i, ev in enumerate(evs):
            Q = _batch_q(pos, spec, ev, dt)
            logw[i].append(0.5 * spec.theta**2 * Q.sum(axis=(1, 2)))
    logw = [np.concatenate(l) for l in logw]
    per = [_summarize(m, lw, e) for lw, e in zip(logw, eps)]
    # paired monotonicity check: the estimate should grow as eps shrinks
    monotone = True
    for a, b in zip(logw[:-1], logw[1:]):
        diff = np.exp(b) - np.exp(a)
        if diff.mean() < -3 * diff.std(ddof=1) / math.sqrt(len(diff)):
            monotone = False
    if not monotone:
        warnings.warn("moment estimates are not monotone in eps beyond their errors")
    X = np.column_stack([np.ones(3), np.sqrt(eps[-3:])])
    coef = np.linalg.pinv(X)[0]
    y = sum(c * np.exp(lw) for c, lw in zip(coef, logw[-3:]))
    n = y.size
    val = float(y.mean())
    se = float(y.std(ddof=1) / math.sqrt(n))
    flags = [] if monotone else ["non-monotone in eps"]
    ext = MomentEstimate(m, val, math.log(val) if val > 0 else float("nan"), se, n, 0.0,
                         per[-1].max_share, per[-1].ess, flags)
    return WhiteTimeEstimate(ext, per, monotone)


# ---------------------------------------------------------------------------
# quenched estimates


def quenched_u_estimate(field, x, n_paths, seed, theta=None, u0=1.0, reverse=True,
                        return_se=False):
    """Path-integral estimate of u(t, x) in one field realization (d = 1).

    The field cell i covers [i dt, (i+1) dt]; each path cell uses the path
    midpoint and linear interpolation between lattice sites.  ``reverse``
    selects V(t - s, .) (True) or V(s, .) along the path.
    """
    V = np.asarray(field.values, dtype=float)
    grid = field.grid
    theta = field.spec.theta if theta is None else theta
    nt = V.shape[0]
    xs = grid.x
    g = rng.stream(seed, rng.PATHS, 0)
    pos = _brownian(g, (n_paths,), nt, grid.dt, np.full((n_paths, 1), float(x)))[..., 0]
    mid = 0.5 * (pos[:, 1:] + pos[:, :-1])
    if mid.min() < xs[0] or mid.max() > xs[-1]:
        raise FieldDomainError("enlarge field grid: a path left the field domain")
    q = (mid - xs[0]) / grid.dx
    i0 = np.minimum(np.floor(q).astype(int), len(xs) - 2)
    fr = q - i0
    rows = np.arange(nt)[::-1] if reverse else np.arange(nt)
    vals = (1 - fr) * V[rows[None, :], i0] + fr * V[rows[None, :], i0 + 1]
    expo = theta * vals.sum(axis=1) * grid.dt
    end = pos[:, -1]
    u0v = u0(end) if callable(u0) else np.full(n_paths, float(u0))
    w = np.exp(expo) * u0v
    est = float(w.mean())
    if return_se:
        return est, float(w.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return est


# ---------------------------------------------------------------------------
# eigenvalue bound for killed path integrals


def fk_eigenvalue_bound(f, t, L, d=1):
    """|D| exp(int_0^t lambda_D(f(s, .)) ds) for D = (-L, L)^d.

    ``f`` holds slices on a uniform time grid over [0, t] (shape (ns, sites))
    or a single time-independent slice.
    """
    from .variational import principal_eigenvalue

    f = np.asarray(f, dtype=float)
    if f.ndim == d:
        f = f[None]
    lam = np.array([principal_eigenvalue(fs, L, d=d) for fs in f])
    if len(lam) == 1:
        integral = t * lam[0]
    else:
        integral = t / (len(lam) - 1) * (lam.sum() - 0.5 * (lam[0] + lam[-1]))
    return (2.0 * L) ** d * math.exp(integral)


def killed_path_mass(f, t, L, n_paths, n_steps, seed):
    """Monte Carlo int_D E_x[exp(int_0^t f(s, x + B_s) ds); tau_D >= t] dx, d = 1.

    ``f(s, x)`` is vectorized.  Exit between grid times is accounted for by
    the Brownian-bridge crossing probability.  Returns (estimate, stderr).
    """
    g = rng.stream(seed, rng.MISC, 0)
    dt = t / n_steps
    x = g.uniform(-L, L, n_paths)
    logw = np.zeros(n_paths)
    alive = np.ones(n_paths)
    for k in range(n_steps):
        y = x + math.sqrt(dt) * g.standard_normal(n_paths)
        logw += 0.5 * dt * (f(k * dt, x) + f((k + 1) * dt, y))
        inside = np.abs(y) < L
        a, b = x + L, L - x
        a2, b2 = y + L, L - y
        p_exit = np.exp(-2 * a * a2 / dt) + np.exp(-2 * b * b2 / dt)
        alive *= inside * np.clip(1 - p_exit, 0, 1)
        x = y
    w = 2 * L * alive * np.exp(logw)
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(n_paths))


# ---------------------------------------------------------------------------
# output

MOMENT_HEADER = ["m", "t", "theta", "regime", "epsilon", "estimate", "log_estimate",
                 "stderr", "n_samples"]


def write_moment_csv(path, rows):
    """rows: iterables of (t, theta, regime, MomentEstimate)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MOMENT_HEADER)
        for t, theta, regime, e in rows:
            w.writerow([e.m, f"{t:.17g}", f"{theta:.17g}", regime, f"{e.epsilon:.17g}",
                        f"{e.value:.17g}", f"{e.log_value:.17g}", f"{e.stderr:.17g}",
                        e.n_samples])
