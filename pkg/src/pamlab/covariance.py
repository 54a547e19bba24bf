"""Time and space covariance structures of the Gaussian potential.

The potential V(t, x) is centered Gaussian with covariance
gamma0(s - t) * gamma(x - y).  Time covariances are fractional |u|^-a0,
white (Dirac) or constant; space covariances are Riesz |x|^-alpha,
products of fractional factors, the 1-d Dirac delta, or a smooth Gaussian
bump that stands in for the bounded, continuous class.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy import integrate, special

SINGULAR_TOL = 1e-12


class CovarianceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class TimeCovariance:
    kind: str  # "fractional" | "white" | "one"
    alpha0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fractional", "white", "one"):
            raise CovarianceError(f"unknown time covariance kind {self.kind!r}")
        if self.kind == "fractional" and not 0.0 <= self.alpha0 < 1.0:
            raise CovarianceError("fractional time covariance needs 0 <= alpha0 < 1")
        if self.kind == "one" and self.alpha0 != 0.0:
            raise CovarianceError("constant time covariance has alpha0 = 0")

    @classmethod
    def fractional(cls, alpha0):
        return cls("fractional", float(alpha0))

    @classmethod
    def white(cls):
        return cls("white")

    @classmethod
    def one(cls):
        return cls("one")

    @property
    def hurst(self):
        """H0 with alpha0 = 2 - 2 H0 (1/2 for white time)."""
        if self.kind == "white":
            return 0.5
        return 1.0 - self.alpha0 / 2.0

    @property
    def is_constant(self):
        return self.kind == "one" or (self.kind == "fractional" and self.alpha0 == 0.0)

    def double_integral(self, t):
        """int_0^t int_0^t gamma0(r - s) dr ds (t for white time)."""
        if self.kind == "white":
            return float(t)
        a = self.alpha0
        return 2.0 * t ** (2.0 - a) / ((1.0 - a) * (2.0 - a))


@dataclass(frozen=True)
class SpaceCovariance:
    kind: str  # "riesz" | "product" | "dirac" | "smooth"
    d: int = 1
    alpha: float = 0.0
    H: tuple = field(default=())
    amp: float = 1.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("riesz", "product", "dirac", "smooth"):
            raise CovarianceError(f"unknown space covariance kind {self.kind!r}")
        if self.d < 1:
            raise CovarianceError("dimension must be >= 1")
        if self.kind == "riesz" and not 0.0 < self.alpha < self.d:
            raise CovarianceError("Riesz covariance needs 0 < alpha < d")
        if self.kind == "product":
            H = tuple(float(h) for h in self.H)
            object.__setattr__(self, "H", H)
            if len(H) != self.d:
                raise CovarianceError("product covariance needs one Hurst index per axis")
            if not all(0.5 < h < 1.0 for h in H):
                raise CovarianceError("product covariance needs 1/2 < H_j < 1")
            object.__setattr__(self, "alpha", 2.0 * self.d - 2.0 * sum(H))
        if self.kind == "dirac":
            if self.d != 1:
                raise CovarianceError("Dirac space covariance is only admitted for d = 1")
            object.__setattr__(self, "alpha", 1.0)
        if self.kind == "smooth":
            if self.amp <= 0 or self.width <= 0:
                raise CovarianceError("smooth bump needs positive amplitude and width")
            object.__setattr__(self, "alpha", 0.0)

    @classmethod
    def riesz(cls, alpha, d=1):
        return cls("riesz", d=int(d), alpha=float(alpha))

    @classmethod
    def product(cls, H):
        H = tuple(float(h) for h in H)
        return cls("product", d=len(H), H=H)

    @classmethod
    def dirac(cls):
        return cls("dirac", d=1)

    @classmethod
    def smooth(cls, amp=1.0, width=1.0, d=1):
        return cls("smooth", d=int(d), amp=float(amp), width=float(width))

    @property
    def axis_alphas(self):
        """Per-axis exponents 2 - 2 H_j of a product covariance."""
        return tuple(2.0 - 2.0 * h for h in self.H)

    @property
    def bounded(self):
        return self.kind == "smooth"

    @property
    def gamma_at_zero(self):
        return self.amp if self.kind == "smooth" else math.inf


@dataclass(frozen=True)
class CovarianceSpec:
    time: TimeCovariance
    space: SpaceCovariance
    theta: float = 1.0

    def __post_init__(self):
        if not self.theta > 0:
            raise CovarianceError("theta must be positive")

    @property
    def d(self):
        return self.space.d

    @property
    def alpha(self):
        return self.space.alpha

    @property
    def white_time(self):
        return self.time.kind == "white"


# ---------------------------------------------------------------------------
# pointwise evaluation


def gamma0_eval(time, u):
    """Evaluate the time covariance at lag ``u``."""
    if time.kind == "white":
        raise CovarianceError("distributional covariance; use weighted quadrature")
    u = np.asarray(u, dtype=float)
    if time.is_constant:
        out = np.ones_like(u)
    else:
        au = np.abs(u)
        if np.any(au < SINGULAR_TOL):
            raise CovarianceError("singularity of gamma0 at lag 0")
        out = au ** (-time.alpha0)
    return out[()] if out.ndim == 0 else out


def _as_points(space, x):
    x = np.asarray(x, dtype=float)
    if space.d == 1:
        return x[..., None] if (x.ndim == 0 or x.shape[-1] != 1) else x
    if x.shape[-1] != space.d:
        raise CovarianceError(f"points must have trailing dimension {space.d}")
    return x


def gamma_eval(space, x):
    """Evaluate the space covariance at ``x`` (shape (..., d), or any shape if d = 1)."""
    if space.kind == "dirac":
        raise CovarianceError("distributional covariance; pointwise value undefined")
    p = _as_points(space, x)
    if space.kind == "riesz":
        r = np.sqrt(np.sum(p * p, axis=-1))
        if np.any(r < SINGULAR_TOL):
            raise CovarianceError("singularity of gamma at the origin")
        out = r ** (-space.alpha)
    elif space.kind == "product":
        ap = np.abs(p)
        if np.any(ap < SINGULAR_TOL):
            raise CovarianceError("singularity of gamma on a coordinate hyperplane")
        out = np.prod(ap ** (2.0 * np.asarray(space.H) - 2.0), axis=-1)
    else:
        r2 = np.sum(p * p, axis=-1)
        out = space.amp * np.exp(-r2 / (2.0 * space.width**2))
    return out[()] if out.ndim == 0 else out


def riesz_fourier_constant(d, a):
    """c with FT(|x|^-a)(lam) = c |lam|^-(d - a) in R^d, 0 < a < d."""
    return math.pi ** (d / 2) * 2.0 ** (d - a) * math.gamma((d - a) / 2) / math.gamma(a / 2)


def gamma_fourier(space, lam):
    """Fourier transform int gamma(x) exp(i lam.x) dx."""
    p = _as_points(space, lam)
    if space.kind == "dirac":
        out = np.ones(p.shape[:-1])
    elif space.kind == "riesz":
        r = np.sqrt(np.sum(p * p, axis=-1))
        if np.any(r < SINGULAR_TOL):
            raise CovarianceError("Fourier transform singular at lambda = 0")
        d, a = space.d, space.alpha
        out = riesz_fourier_constant(d, a) * r ** (-(d - a))
    elif space.kind == "product":
        ap = np.abs(p)
        if np.any(ap < SINGULAR_TOL):
            raise CovarianceError("Fourier transform singular on a coordinate hyperplane")
        out = np.ones(p.shape[:-1])
        for j, a in enumerate(space.axis_alphas):
            out = out * riesz_fourier_constant(1, a) * ap[..., j] ** (-(1.0 - a))
    else:
        w, d = space.width, space.d
        r2 = np.sum(p * p, axis=-1)
        out = space.amp * (2.0 * math.pi * w * w) ** (d / 2) * np.exp(-0.5 * w * w * r2)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# kernel factorization gamma = K * K


def riesz_composition_constant(d, a, b):
    """int |y|^-(d-a) |x-y|^-(d-b) dy = C |x|^-(d-a-b), a, b > 0, a + b < d."""
    g = math.gamma
    return (
        math.pi ** (d / 2)
        * g(a / 2) * g(b / 2) * g((d - a - b) / 2)
        / (g((d - a) / 2) * g((d - b) / 2) * g((a + b) / 2))
    )


def gaussian_smoothed_power(x, a, var, d):
    """E|x + sqrt(var) Z|^-a for Z standard normal in R^d, 0 < a < d.

    ``x`` carries the norm |x| (any shape).
    """
    r = np.asarray(x, dtype=float)
    z = -(r * r) / (2.0 * var)
    pref = var ** (-a / 2) * 2.0 ** (-a / 2) * math.gamma((d - a) / 2) / math.gamma(d / 2)
    out = pref * special.hyp1f1(a / 2, d / 2, z)
    far = r * r > 400.0 * var
    if np.any(far):
        # hyp1f1 loses accuracy deep in the tail; use the asymptotic series
        rf = r[far] if r.ndim else r
        s = var / (rf * rf)
        c1 = a * (a + 2 - d) / 2.0
        c2 = a * (a + 2) * (a + 2 - d) * (a + 4 - d) / 8.0
        tail = rf ** (-a) * (1.0 + c1 * s + c2 * s * s)
        if r.ndim:
            out[far] = tail
        else:
            out = tail
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class KernelSpec:
    """The factor K (or its heat-smoothed version K_eps) with gamma = K * K."""

    space: SpaceCovariance
    eps: float = 0.0
    constant: float = 1.0

    @property
    def distributional(self):
        return self.space.kind == "dirac" and self.eps == 0.0

    @property
    def exponent(self):
        """Homogeneity exponent of the unmollified K (K ~ |x|^-exponent)."""
        s = self.space
        if s.kind == "riesz":
            return (s.d + s.alpha) / 2.0
        if s.kind == "dirac":
            return 1.0
        if s.kind == "product":
            return (s.d + s.alpha) / 2.0
        return 0.0

    def __call__(self, x):
        s = self.space
        p = _as_points(s, x)
        eps = self.eps
        if s.kind == "dirac":
            if eps == 0.0:
                raise CovarianceError("K = delta_0 is distributional")
            r2 = np.sum(p * p, axis=-1)
            out = np.exp(-r2 / (2 * eps)) / np.sqrt(2 * math.pi * eps)
        elif s.kind == "riesz":
            r = np.sqrt(np.sum(p * p, axis=-1))
            a = (s.d + s.alpha) / 2.0
            if eps == 0.0:
                if np.any(r < SINGULAR_TOL):
                    raise CovarianceError("singularity of K at the origin")
                out = self.constant * r ** (-a)
            else:
                out = self.constant * gaussian_smoothed_power(r, a, eps, s.d)
        elif s.kind == "product":
            out = np.full(p.shape[:-1], self.constant)
            for j, aj in enumerate(s.axis_alphas):
                a = (1.0 + aj) / 2.0
                xj = np.abs(p[..., j])
                if eps == 0.0:
                    if np.any(xj < SINGULAR_TOL):
                        raise CovarianceError("singularity of K on a coordinate hyperplane")
                    out = out * xj ** (-a)
                else:
                    out = out * gaussian_smoothed_power(xj, a, eps, 1)
        else:
            w2 = s.width**2
            v = w2 / 2.0 + eps
            r2 = np.sum(p * p, axis=-1)
            out = (
                self.constant * (math.pi * w2) ** (s.d / 2)
                * np.exp(-r2 / (2 * v)) / (2 * math.pi * v) ** (s.d / 2)
            )
        return out[()] if np.ndim(out) == 0 else out


def kernel_eval(spec, eps=0.0):
    """Factor the space covariance of ``spec`` as gamma = K * K.

    Accepts a CovarianceSpec or a SpaceCovariance.  The normalization of K
    comes from the Riesz composition formula (power laws) or the Gaussian
    convolution identity (smooth bump); ``eps > 0`` returns p_eps * K.
    """
    space = spec.space if isinstance(spec, CovarianceSpec) else spec
    if eps < 0:
        raise CovarianceError("mollification parameter must be nonnegative")
    if space.kind == "riesz":
        s = (space.d - space.alpha) / 2.0
        c = riesz_composition_constant(space.d, s, s) ** -0.5
    elif space.kind == "product":
        c = 1.0
        for a in space.axis_alphas:
            s = (1.0 - a) / 2.0
            c *= riesz_composition_constant(1, s, s) ** -0.5
    elif space.kind == "dirac":
        c = 1.0
    else:
        w2 = space.width**2
        c = math.sqrt(space.amp) * (math.pi * w2 / 2.0) ** (-space.d / 4)
    return KernelSpec(space=space, eps=float(eps), constant=c)


def mollify_gamma(spec, eps, x):
    """gamma_eps = p_{2 eps} * gamma evaluated at ``x``."""
    space = spec.space if isinstance(spec, CovarianceSpec) else spec
    if not eps > 0:
        raise CovarianceError("mollification needs eps > 0")
    p = _as_points(space, x)
    if space.kind == "dirac":
        r2 = np.sum(p * p, axis=-1)
        out = np.exp(-r2 / (4 * eps)) / np.sqrt(4 * math.pi * eps)
    elif space.kind == "riesz":
        r = np.sqrt(np.sum(p * p, axis=-1))
        out = gaussian_smoothed_power(r, space.alpha, 2 * eps, space.d)
    elif space.kind == "product":
        out = np.ones(p.shape[:-1])
        for j, a in enumerate(space.axis_alphas):
            out = out * gaussian_smoothed_power(np.abs(p[..., j]), a, 2 * eps, 1)
    else:
        w2 = space.width**2
        v = w2 + 2 * eps
        r2 = np.sum(p * p, axis=-1)
        out = space.amp * (w2 / v) ** (space.d / 2) * np.exp(-r2 / (2 * v))
    return out[()] if np.ndim(out) == 0 else out


def mollified_gamma_function(space, eps, rmax=None):
    """Fast radial evaluator r -> gamma_eps(r) backed by a lookup table.

    Returns ``(f, table)`` where ``table = (scale, values)`` samples
    gamma_eps at r = scale * asinh^-1 grid; used by the path kernels.
    """
    if space.kind == "product":
        raise CovarianceError("radial table needs an isotropic covariance")
    ell = math.sqrt(2 * eps)
    smax = 12.0  # asinh(r / ell) up to r ~ ell * 8e4
    n = 6001
    s = np.linspace(0.0, smax, n)

    def radial(r):
        pts = np.zeros(np.shape(r) + (space.d,))
        pts[..., 0] = r
        return np.asarray(mollify_gamma(space, eps, pts), dtype=float)

    vals = radial(ell * np.sinh(s))
    ds = s[1] - s[0]

    def f(rr):
        rr = np.asarray(rr, dtype=float)
        q = np.arcsinh(rr / ell)
        out = np.interp(q, s, vals)
        beyond = q >= smax
        if np.any(beyond):
            out = np.where(beyond, radial(np.where(beyond, rr, 1.0)), out)
        return out

    return f, (ell, ds, vals)


# ---------------------------------------------------------------------------
# cell-averaged covariances on a lattice


def _power_cell_1d(a, h, n):
    """c_k = h^-2 int_0^h int_0^h |k h + u - v|^-a du dv for k = 0..n-1, a < 1."""
    k = np.arange(n, dtype=float)

    def G(x):
        return np.abs(x) ** (2.0 - a) / ((1.0 - a) * (2.0 - a))

    c = (G(k + 1) - 2 * G(k) + G(k - 1))
    big = k >= 20
    kb = k[big]
    c[big] = kb ** (-a) * (
        1.0 + a * (a + 1) / (12 * kb**2) + a * (a + 1) * (a + 2) * (a + 3) / (360 * kb**4)
    )
    return c * h ** (-a)


def _gauss_cell_1d(w, h, n):
    if math.isinf(w):
        return np.ones(n)
    k = np.arange(n, dtype=float) * h
    rt = w * math.sqrt(2.0)

    def G(s):
        return w * math.sqrt(math.pi / 2) * s * special.erf(s / rt) + w * w * np.exp(-s * s / (2 * w * w))

    return (G(k + h) - 2 * G(k) + G(k - h)) / (h * h)


@lru_cache(maxsize=64)
def _riesz_cell_2d_unit(a, n):
    """Cell-averaged |x|^-a on the unit lattice in d = 2, lags 0..n-1 per axis."""
    gl_x, gl_w = np.polynomial.legendre.leggauss(12)
    # tent-weighted integral over w in [-1, 1]^2, split per axis at 0
    nodes = np.concatenate([(gl_x - 1) / 2, (gl_x + 1) / 2])
    wts = np.concatenate([gl_w / 2, gl_w / 2]) * (1 - np.abs(nodes))
    out = np.empty((n, n))
    W = np.outer(wts, wts)
    for i in range(n):
        for j in range(n):
            if i <= 2 and j <= 2:
                f = lambda y, x: (
                    ((i + x) ** 2 + (j + y) ** 2) ** (-a / 2) * (1 - abs(x)) * (1 - abs(y))
                )
                tot = 0.0
                for xl, xh in ((-1, 0), (0, 1)):
                    for yl, yh in ((-1, 0), (0, 1)):
                        tot += integrate.dblquad(f, xl, xh, yl, yh, epsabs=1e-10, epsrel=1e-8)[0]
                out[i, j] = tot
            else:
                X = i + nodes[:, None]
                Y = j + nodes[None, :]
                out[i, j] = np.sum(W * (X * X + Y * Y) ** (-a / 2))
    return out


def space_cell_covariance(space, h, n):
    """Cell-averaged space covariance for lags 0..n-1 along each axis.

    Returns an array of shape (n,) * d.  Dirac gives delta_{k0} / h.
    """
    d = space.d
    if space.kind == "dirac":
        c = np.zeros(n)
        c[0] = 1.0 / h
        return c
    if space.kind == "smooth":
        c1 = _gauss_cell_1d(space.width, h, n)
        out = space.amp * c1
        for _ in range(d - 1):
            out = np.multiply.outer(out, c1)
        return out
    if space.kind == "product":
        out = None
        for a in space.axis_alphas:
            c1 = _power_cell_1d(a, h, n)
            out = c1 if out is None else np.multiply.outer(out, c1)
        return out
    if d == 1:
        return _power_cell_1d(space.alpha, h, n)
    if d == 2:
        return _riesz_cell_2d_unit(float(space.alpha), int(n)) * h ** (-space.alpha)
    raise CovarianceError("cell-averaged Riesz covariance implemented for d <= 2")


def time_cell_covariance(time, h, n):
    """Cell-averaged time covariance for lags 0..n-1 (white: delta_{k0} / h)."""
    if time.kind == "white":
        c = np.zeros(n)
        c[0] = 1.0 / h
        return c
    if time.is_constant:
        return np.ones(n)
    return _power_cell_1d(time.alpha0, h, n)


def kernel_cell_1d(space, h, n):
    """Cell-averaged unmollified K on lags 0..n-1 (d = 1, power-law kinds)."""
    k = kernel_eval(space)
    if space.kind == "dirac":
        c = np.zeros(n)
        c[0] = 1.0 / h
        return c
    if space.kind == "smooth":
        return k(np.arange(n) * h)
    return k.constant * _power_cell_1d(k.exponent, h, n)


# ---------------------------------------------------------------------------
# regime bookkeeping


def dalang_check(spec):
    """Whether int gamma_hat / (1 + |lam|^2) < infinity (decided analytically)."""
    space = spec.space if isinstance(spec, CovarianceSpec) else spec
    if space.kind == "dirac":
        return space.d == 1
    if space.kind == "smooth":
        return True
    return space.alpha < 2.0


@dataclass
class RegimeReport:
    label: str
    violations: list

    @property
    def admissible(self):
        return not self.violations


def regime_classify(spec):
    """Label the covariance by its (time regime)x(space class) cell and list every violated constraint."""
    t, s = spec.time, spec.space
    v = []
    if s.kind == "smooth":
        return RegimeReport("Theorem-1.1-class", [])
    col = {"riesz": "I", "product": "II", "dirac": "III"}[s.kind]
    if t.kind == "white":
        label = f"(2)x({col})"
        if s.kind == "riesz" and not 0 < s.alpha < min(2, s.d):
            v.append(f"0<alpha<min(2,d) violated (alpha={s.alpha}, d={s.d})")
        if s.kind == "product" and not s.alpha < 2:
            v.append(f"Dalang condition violated (alpha={s.alpha} >= 2)")
        if s.kind == "dirac" and s.d != 1:
            v.append("d=1 required")
        return RegimeReport(label, v)
    label = f"(1)x({col})"
    a0 = t.alpha0
    if s.kind == "riesz":
        if not 0 < s.alpha < s.d:
            v.append(f"0<alpha<d violated (alpha={s.alpha}, d={s.d})")
        if not 2 * a0 + s.alpha < 2:
            v.append(f"2*alpha0+alpha<2 violated (2*{a0}+{s.alpha}={2 * a0 + s.alpha})")
    elif s.kind == "product":
        H0 = t.hurst
        if not 0.5 < H0 <= 1:
            v.append(f"1/2<H0<=1 violated (H0={H0})")
        if not 2 * H0 + sum(s.H) > s.d + 1:
            v.append(f"2*H0+sum(H)>d+1 violated ({2 * H0 + sum(s.H)} <= {s.d + 1})")
    else:
        if s.d != 1:
            v.append("d=1 required")
    return RegimeReport(label, v)


# ---------------------------------------------------------------------------
# flat key-value serialization

SPEC_KEYS = (
    "time.kind", "time.alpha0", "space.kind", "space.alpha", "space.H",
    "space.d", "space.amp", "space.width", "theta",
)


def spec_to_dict(spec):
    s = spec.space
    return {
        "time.kind": spec.time.kind,
        "time.alpha0": repr(spec.time.alpha0),
        "space.kind": s.kind,
        "space.alpha": repr(s.alpha),
        "space.H": ",".join(repr(h) for h in s.H),
        "space.d": str(s.d),
        "space.amp": repr(s.amp),
        "space.width": repr(s.width),
        "theta": repr(spec.theta),
    }


def spec_to_text(spec):
    return "".join(f"{k} = {v}\n" for k, v in spec_to_dict(spec).items())


def spec_from_dict(d):
    unknown = set(d) - set(SPEC_KEYS)
    if unknown:
        raise CovarianceError(
            f"unknown keys {sorted(unknown)}; valid keys: {', '.join(SPEC_KEYS)}"
        )
    tk = d.get("time.kind", "white")
    a0 = float(d.get("time.alpha0", 0.0) or 0.0)
    time = TimeCovariance(tk, a0 if tk == "fractional" else 0.0)
    sk = d.get("space.kind", "dirac")
    dim = int(d.get("space.d", 1) or 1)
    if sk == "riesz":
        space = SpaceCovariance.riesz(float(d["space.alpha"]), dim)
    elif sk == "product":
        H = tuple(float(h) for h in str(d["space.H"]).split(",") if h.strip())
        space = SpaceCovariance.product(H)
    elif sk == "dirac":
        space = SpaceCovariance.dirac()
    else:
        space = SpaceCovariance.smooth(
            float(d.get("space.amp", 1.0)), float(d.get("space.width", 1.0)), dim
        )
    return CovarianceSpec(time, space, float(d.get("theta", 1.0)))


def spec_from_text(text):
    d = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        k, _, v = line.partition("=")
        d[k.strip()] = v.strip()
    return spec_from_dict(d)
