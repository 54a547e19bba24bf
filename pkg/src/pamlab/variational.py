"""Ground-state variational problems on a box with zero boundary values.

All problems share one discretization: nx interior points per axis on
(-L, L)^d, spacing dx = 2L / (nx + 1), the standard Dirichlet Laplacian
(diagonalized by the type-I sine transform) and interaction sums with
the cell-averaged covariance.  Maximization is a normalized gradient flow
with the Laplacian taken implicitly:

    g <- normalize(g + tau (I - tau Lap)^-1 (grad J - mu g)),

with mu = <grad J, g> the multiplier of the norm constraint.  tau starts at
0.1 and is halved until the objective does not decrease.
"""

from dataclasses import dataclass, field
import csv
import math

import numpy as np
from scipy import fft as sfft
from scipy.sparse import diags, identity, kron
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import splu

from . import rng
from .covariance import kernel_eval, space_cell_covariance, time_cell_covariance

TOL = 1e-8
MAX_ITER = 50000
TAU0 = 0.1
MASS_TOL = 1e-6
STALL_WINDOW = 100
STALL_RATIO = 0.9


class ConvergenceError(RuntimeError):
    pass


@dataclass
class Profile:
    g: np.ndarray
    dx: float
    L: float
    ds: float = None

    @property
    def x(self):
        n = self.g.shape[-1]
        return -self.L + self.dx * np.arange(1, n + 1)

    def norms(self):
        """Per-slice L^2 norms (a scalar for time-independent profiles)."""
        d = self.g.ndim - (1 if self.ds is not None else 0)
        axes = tuple(range(self.g.ndim - d, self.g.ndim))
        return np.sum(self.g**2, axis=axes) * self.dx**d


@dataclass
class VariationalResult:
    value: float
    profile: Profile
    iterations: int
    residual: float
    start_values: list = field(default_factory=list)
    history: np.ndarray = None
    L: float = None
    nx: int = None


# ---------------------------------------------------------------------------
# discretization


class Box:
    def __init__(self, L, nx, d=1):
        self.L, self.nx, self.d = float(L), int(nx), int(d)
        self.dx = 2.0 * self.L / (self.nx + 1)
        self.dv = self.dx**self.d
        k = np.arange(1, self.nx + 1)
        mu1 = (4.0 / self.dx**2) * np.sin(np.pi * k / (2 * (self.nx + 1))) ** 2
        mu = mu1
        for _ in range(self.d - 1):
            mu = np.add.outer(mu, mu1)
        self.mu = mu  # eigenvalues of -Lap
        self.x = -self.L + self.dx * k
        self.shape = (self.nx,) * self.d

    def ip(self, a, b):
        return float(np.sum(a * b)) * self.dv

    def normalize(self, g):
        return g / math.sqrt(self.ip(g, g))

    def lap(self, g):
        ax = tuple(range(-self.d, 0))
        return -sfft.idstn(self.mu * sfft.dstn(g, type=1, axes=ax), type=1, axes=ax)

    def implicit(self, v, tau):
        ax = tuple(range(-self.d, 0))
        return sfft.idstn(sfft.dstn(v, type=1, axes=ax) / (1.0 + tau * self.mu), type=1, axes=ax)

    def kinetic(self, g):
        """int |grad g|^2 with zero boundary values (forward differences)."""
        tot = 0.0
        for a in range(self.d):
            ax = g.ndim - self.d + a
            pad = [(0, 0)] * g.ndim
            pad[ax] = (1, 1)
            diff = np.diff(np.pad(g, pad), axis=ax)
            tot = tot + np.sum(diff * diff, axis=tuple(range(g.ndim - self.d, g.ndim)))
        return tot * self.dv / self.dx**2

    def outside_mass(self, g):
        """Mass of g^2 outside the half box |x|_inf <= L/2."""
        inner = np.abs(self.x) <= self.L / 2
        mask = inner
        for _ in range(self.d - 1):
            mask = np.logical_and.outer(mask, inner)
        return float(np.sum(g**2 * ~mask, axis=tuple(range(g.ndim - self.d, g.ndim))).max() * self.dv)


class Convolver:
    """h -> sum_j c(i - j) h_j dx^d for an even lag table c (zero padded FFT)."""

    def __init__(self, box, table=None, delta=False):
        self.box, self.delta = box, delta
        if delta:
            return
        n, d = box.nx, box.d
        M = 2 * n
        k = np.arange(M)
        idx = np.minimum(k, M - k)
        emb = table[np.ix_(*([idx] * d))] if d > 1 else table[idx]
        self.M = M
        self.fk = sfft.rfftn(emb * box.dv)

    def __call__(self, h):
        if self.delta:
            return h * 1.0
        d = self.box.d
        s = (self.M,) * d
        ax = tuple(range(-d, 0))
        out = sfft.irfftn(self.fk * sfft.rfftn(h, s=s, axes=ax), s=s, axes=ax)
        return out[(Ellipsis,) + (slice(0, self.box.nx),) * d]


def covariance_convolver(space, box):
    if space.kind == "dirac":
        return Convolver(box, delta=True)
    return Convolver(box, space_cell_covariance(space, box.dx, box.nx + 1))


def kernel_convolver(space, box, eps, N=None):
    """Convolution with the heat-smoothed kernel K_eps, optionally cut at |x| > N."""
    K = kernel_eval(space, eps)
    n = box.nx
    k = np.arange(n + 1) * box.dx
    if box.d == 1:
        tab = np.asarray(K(k), dtype=float)
        r = k
    else:
        X, Y = np.meshgrid(k, k, indexing="ij")
        pts = np.stack([X, Y], axis=-1)
        tab = np.asarray(K(pts), dtype=float)
        r = np.sqrt(X * X + Y * Y)
    if N is not None:
        tab = np.where(r <= N, tab, 0.0)
    return Convolver(box, tab)


# ---------------------------------------------------------------------------
# problems: value(g) and nonlinear gradient N(g)


class EnergyProblem:
    """int int gamma(x - y) g^2 g^2 - 1/2 int |grad g|^2."""

    def __init__(self, box, conv):
        self.box, self.conv = box, conv

    def value(self, g):
        return self.box.ip(self.conv(g * g), g * g) - 0.5 * self.box.kinetic(g)

    def nonlinear(self, g):
        return 4.0 * self.conv(g * g) * g


class RootProblem:
    """beta (int int gamma g^2 g^2)^{1/2} - 1/2 int |grad g|^2."""

    def __init__(self, box, conv, beta):
        self.box, self.conv, self.beta = box, conv, float(beta)

    def value(self, g):
        return self.beta * math.sqrt(self.box.ip(self.conv(g * g), g * g)) - 0.5 * self.box.kinetic(g)

    def nonlinear(self, g):
        phi = self.conv(g * g)
        return 2.0 * self.beta * phi * g / math.sqrt(self.box.ip(phi, g * g))


class KernelRootProblem:
    """beta (int [int K(y - x) g^2(y) dy]^2 dx)^{1/2} - 1/2 int |grad g|^2."""

    def __init__(self, box, kconv, beta):
        self.box, self.kconv, self.beta = box, kconv, float(beta)

    def value(self, g):
        psi = self.kconv(g * g)
        return self.beta * math.sqrt(self.box.ip(psi, psi)) - 0.5 * self.box.kinetic(g)

    def nonlinear(self, g):
        psi = self.kconv(g * g)
        return 2.0 * self.beta * self.kconv(psi) * g / math.sqrt(self.box.ip(psi, psi))


class SliceEnergyProblem:
    """Space-time functional on ns time slices with slice weights T_rs."""

    def __init__(self, box, conv, T, ds):
        self.box, self.conv, self.T, self.ds = box, conv, T, ds

    def _phi(self, g):
        return np.stack([self.conv(gs * gs) for gs in g])

    def value(self, g):
        phi = self._phi(g)
        g2 = (g * g).reshape(len(g), -1)
        I = g2 @ phi.reshape(len(g), -1).T * self.box.dv
        return float(np.sum(self.T * I)) - 0.5 * self.ds * float(np.sum(self.box.kinetic(g)))

    def nonlinear(self, g):
        phi = self._phi(g)
        pot = np.tensordot(self.T / self.ds, phi, axes=(1, 0))
        return 4.0 * pot * g


# ---------------------------------------------------------------------------
# gradient flow


def _slice_normalize(box, g, sliced):
    if not sliced:
        return box.normalize(g)
    n = np.sqrt(np.sum(g * g, axis=tuple(range(1, g.ndim))) * box.dv)
    return g / n.reshape((-1,) + (1,) * (g.ndim - 1))


def _projected_gradient(box, prob, g, sliced, weight=1.0):
    """Gradient minus its component along g (per slice); returns (R, norm)."""
    G = prob.nonlinear(g) + box.lap(g)
    if sliced:
        ax = tuple(range(1, g.ndim))
        mu = np.sum(G * g, axis=ax) * box.dv
        R = G - mu.reshape((-1,) + (1,) * (g.ndim - 1)) * g
        return R, math.sqrt(float(np.sum(R * R)) * box.dv * weight)
    R = G - box.ip(G, g) * g
    return R, math.sqrt(box.ip(R, R))


def _com_shift(box, g):
    """Whole-cell shifts (per axis) bringing the center of mass of g^2 within dx of 0."""
    w = g * g
    if w.ndim > box.d:
        w = w.sum(axis=tuple(range(w.ndim - box.d)))
    w = w / w.sum()
    out = []
    for a in range(box.d):
        other = tuple(q for q in range(box.d) if q != a)
        wa = w.sum(axis=other) if other else w
        out.append(-int(round(float(np.sum(wa * box.x)) / box.dx)))
    return out


def _shift(box, g, a, s):
    """Translate g by s along space axis a (spectral, on a zero padded grid)."""
    ax = g.ndim - box.d + a
    n = g.shape[ax]
    M = 2 * n
    k = 2 * np.pi * np.fft.rfftfreq(M, box.dx)
    ph = np.exp(-1j * k * s).reshape((-1,) + (1,) * (g.ndim - 1 - ax))
    out = np.fft.irfft(np.fft.rfft(g, M, axis=ax) * ph, M, axis=ax)
    return np.take(out, np.arange(n), axis=ax)


def _retranslate(box, prob, g, J, sliced):
    """Best translate of g: whole cells to the center, then a sub-cell search.

    Translations are a symmetry on R^d that the grid breaks only weakly, so
    the ascent moves along them at a rate far below its other modes.
    """
    for a, s in enumerate(_com_shift(box, g)):
        if s:
            gs = _slice_normalize(box, _shift(box, g, a, s * box.dx), sliced)
            Js = prob.value(gs)
            if Js >= J:
                g, J = gs, Js
    for a in range(box.d):
        f = lambda s: -prob.value(_slice_normalize(box, _shift(box, g, a, s), sliced))
        r = minimize_scalar(f, bounds=(-box.dx, box.dx), method="bounded",
                            options={"xatol": 1e-6 * box.dx})
        if -r.fun > J:
            g, J = _slice_normalize(box, _shift(box, g, a, r.x), sliced), -r.fun
    return g, J


def ascend(box, prob, g0, tol=TOL, max_iter=MAX_ITER, sliced=False, weight=1.0,
           keep_history=False):
    """Projected gradient ascent; returns (g, value, iterations, residual, history).

    Step: g <- normalize(g + tau (I - tau Lap)^-1 R) with R the projected
    gradient, so fixed points are exactly the constrained critical points.
    When the residual stalls the iterate is moved to its best translate.
    """
    g = _slice_normalize(box, np.asarray(g0, dtype=float), sliced)
    J = prob.value(g)
    hist = [J] if keep_history else None
    slack = 4 * np.finfo(float).eps
    R, res = _projected_gradient(box, prob, g, sliced, weight)
    res_mark = res
    it = 0
    while res >= tol and it < max_iter:
        it += 1
        tau = TAU0
        while True:
            gn = _slice_normalize(box, g + tau * box.implicit(R, tau), sliced)
            Jn = prob.value(gn)
            if Jn >= J - slack * abs(J):
                break
            tau *= 0.5
            if tau < 1e-12:
                gn = None
                break
        if gn is None:
            break  # no ascent left at working precision
        g, J = gn, Jn
        if it % STALL_WINDOW == 0:
            if res > STALL_RATIO * res_mark:
                g, J = _retranslate(box, prob, g, J, sliced)
            res_mark = res
        if keep_history:
            hist.append(J)
        R, res = _projected_gradient(box, prob, g, sliced, weight)
    return g, J, it, res, (np.array(hist) if keep_history else None)


def _starts(box, seed, n_starts, n_slices=None):
    """Centered bump of width L/8 followed by randomized perturbations."""
    x = box.x
    grids = np.meshgrid(*([x] * box.d), indexing="ij")
    r2 = sum(c * c for c in grids)
    w = box.L / 8
    base = np.exp(-r2 / (2 * w * w))
    out = []
    for i in range(n_starts):
        if i == 0:
            g = base
            if n_slices:
                g = np.broadcast_to(g, (n_slices,) + g.shape).copy()
        else:
            gen = rng.stream(seed, rng.MULTISTART, i)
            shift = gen.uniform(-box.L / 8, box.L / 8, box.d)
            r2s = sum((c - s) ** 2 for c, s in zip(grids, shift))
            g = np.exp(-r2s / (2 * w * w))
            shape = ((n_slices,) if n_slices else ()) + g.shape
            g = g * (1 + 0.3 * gen.uniform(-1, 1, shape))
        out.append(g)
    return out


def _multistart(box, prob, seed, n_starts, tol, max_iter, sliced=False, weight=1.0,
                n_slices=None, keep_history=False):
    best = None
    values = []
    for g0 in _starts(box, seed, n_starts, n_slices):
        g, J, it, res, hist = ascend(box, prob, g0, tol, max_iter, sliced, weight, keep_history)
        values.append(J)
        if best is None or J > best[1]:
            best = (g, J, it, res, hist)
    g, J, it, res, hist = best
    if res >= tol:
        raise ConvergenceError(f"no convergence after {it} iterations (residual {res:.3e})")
    return g, J, it, res, values, hist


def _auto_domain(run, L, nx, max_doublings=3):
    """Re-solve on a doubled box while too much mass sits near the boundary."""
    for _ in range(max_doublings + 1):
        box, out = run(L, nx)
        if box.outside_mass(out[0]) < MASS_TOL:
            return box, out
        L, nx = 2 * L, 2 * nx + 1
    return box, out


# ---------------------------------------------------------------------------
# public solvers


def solve_E_time_independent(space, L=20.0, nx=512, tol=TOL, seed=0, n_starts=5,
                             max_iter=MAX_ITER, keep_history=False):
    """sup over unit-norm g of int int gamma g^2 g^2 - 1/2 int |grad g|^2."""
    d = space.d
    if d not in (1, 2):
        raise ValueError("variational solves are implemented for d in {1, 2}")

    def run(L, nx):
        box = Box(L, nx, d)
        prob = EnergyProblem(box, covariance_convolver(space, box))
        return box, _multistart(box, prob, seed, n_starts, tol, max_iter,
                                keep_history=keep_history)

    box, (g, J, it, res, vals, hist) = _auto_domain(run, L, nx)
    return VariationalResult(J, Profile(g, box.dx, box.L), it, res, vals, hist, box.L, box.nx)


def slice_weights(alpha0, ns):
    """T_rs = int int over slice cells of |r - s|^-alpha0 on [0, 1]."""
    from .covariance import TimeCovariance

    ds = 1.0 / ns
    time = TimeCovariance.fractional(alpha0) if alpha0 > 0 else TimeCovariance.one()
    c = time_cell_covariance(time, ds, ns) * ds * ds
    i = np.arange(ns)
    return c[np.abs(i[:, None] - i[None, :])]


def solve_E_time_dependent(spec, L=20.0, nx=256, ns=8, tol=TOL, seed=0, n_starts=5,
                           max_iter=MAX_ITER):
    """Space-time problem over profiles g(s, x), s in [0, 1], unit norm per slice."""
    space = spec.space
    if space.d != 1:
        raise ValueError("time-dependent solves are implemented for d = 1")
    alpha0 = 0.0 if spec.time.kind == "one" else spec.time.alpha0
    T = slice_weights(alpha0, ns)
    ds = 1.0 / ns

    def run(L, nx):
        box = Box(L, nx, 1)
        prob = SliceEnergyProblem(box, covariance_convolver(space, box), T, ds)
        return box, _multistart(box, prob, seed, n_starts, tol, max_iter, sliced=True,
                                weight=ds, n_slices=ns)

    box, (g, J, it, res, vals, _) = _auto_domain(run, L, nx)
    return VariationalResult(J, Profile(g, box.dx, box.L, ds), it, res, vals, None, box.L, box.nx)


def solve_M(beta, space, L=20.0, nx=512, tol=TOL, seed=0, n_starts=5, eps=None, N=None,
            max_iter=MAX_ITER):
    """sup of beta (int [K * g^2]^2)^{1/2} - 1/2 int |grad g|^2 over unit-norm g.

    With ``eps`` unset the interaction is written through gamma = K * K
    (cell-averaged).  With ``eps`` set it uses the heat-smoothed kernel K_eps
    explicitly, cut off at |x| > N when N is given.
    """
    d = space.d

    def run(L, nx):
        box = Box(L, nx, d)
        if eps is None:
            prob = RootProblem(box, covariance_convolver(space, box), beta)
        else:
            prob = KernelRootProblem(box, kernel_convolver(space, box, eps, N), beta)
        return box, _multistart(box, prob, seed, n_starts, tol, max_iter)

    box, (g, J, it, res, vals, _) = _auto_domain(run, L, nx)
    return VariationalResult(J, Profile(g, box.dx, box.L), it, res, vals, None, box.L, box.nx)


def energy_from_M(M1, alpha):
    """E(d, gamma) expressed through M(1)."""
    a = alpha
    return (2 - a) / 2 * 2 ** (a / (2 - a)) * (4 * M1 / (4 - a)) ** ((4 - a) / (2 - a))


def dirichlet_hamiltonian(L, nx, d=1):
    """Sparse 1/2 Lap on the interior grid of (-L, L)^d with zero boundary values."""
    dx = 2.0 * L / (nx + 1)
    T = diags([np.ones(nx - 1), -2 * np.ones(nx), np.ones(nx - 1)], [-1, 0, 1]) / dx**2
    H = T
    I = identity(nx)
    for _ in range(d - 1):
        H = kron(H, I) + kron(identity(H.shape[0]), T)
    return 0.5 * H.tocsc()


def principal_eigenvalue(f, L, d=1, tol=1e-13, max_iter=20000):
    """Largest eigenvalue of 1/2 Lap + f on (-L, L)^d, zero boundary values.

    ``f`` is tabulated on the nx^d interior points.  Shift-invert power
    iteration with the shift at max f, which lies above the spectrum.
    """
    f = np.asarray(f, dtype=float)
    nx = f.shape[0]
    H = dirichlet_hamiltonian(L, nx, d) + diags(f.ravel())
    sigma = float(f.max())
    lu = splu((sigma * identity(H.shape[0]) - H).tocsc())
    v = np.ones(H.shape[0])
    v /= np.linalg.norm(v)
    lam = -np.inf
    for _ in range(max_iter):
        w = lu.solve(v)
        w /= np.linalg.norm(w)
        new = float(w @ (H @ w))
        v = w
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    return lam


# ---------------------------------------------------------------------------
# output

RESULT_HEADER = ["problem", "alpha0", "alpha", "d", "beta", "value", "residual",
                 "iterations", "L", "nx"]


def write_result_csv(path, rows):
    """rows: (problem, alpha0, alpha, d, beta, VariationalResult)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for prob, a0, a, d, beta, r in rows:
            w.writerow([prob, f"{a0:.17g}", f"{a:.17g}", d, f"{beta:.17g}", f"{r.value:.17g}",
                        f"{r.residual:.17g}", r.iterations, f"{r.L:.17g}", r.nx])
