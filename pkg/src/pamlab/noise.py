"""Gaussian noise on a space-time lattice.

White-noise sheets drive the finite-difference solver; stationary fields
with a prescribed (cell-averaged) covariance feed the quenched path
integrals.  All sampling is keyed through :mod:`pamlab.rng`.
"""

from dataclasses import dataclass
import struct

import numpy as np

from . import rng
from .covariance import (
    CovarianceSpec,
    space_cell_covariance,
    time_cell_covariance,
)

CLIP_TOL = 1e-8
MAGIC = b"PAML"
FORMAT_VERSION = 1


class GridTooCoarse(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    d: int = 1
    nx: int = 128
    dx: float = 0.1
    nt: int = 1
    dt: float = 0.01

    def __post_init__(self):
        if self.d < 1 or self.nx < 1 or self.nt < 1:
            raise ValueError("grid needs d, nx, nt >= 1")
        if not (self.dx > 0 and self.dt > 0):
            raise ValueError("grid needs dx, dt > 0")

    @property
    def L(self):
        return self.nx * self.dx

    @property
    def shape(self):
        return (self.nt,) + (self.nx,) * self.d

    @property
    def x(self):
        """Site coordinates along one axis, centered so that site nx//2 is 0."""
        return (np.arange(self.nx) - self.nx // 2) * self.dx


@dataclass
class NoiseSheet:
    increments: np.ndarray
    grid: GridSpec
    seed: int

    @property
    def values(self):
        return self.increments


@dataclass
class FieldRealization:
    values: np.ndarray
    grid: GridSpec
    spec: CovarianceSpec
    seed: int


def sample_white_sheet(grid, seed, realization=0):
    """Brownian-sheet increments over each space-time cell, N(0, dt dx^d)."""
    z = rng.stream(seed, rng.SHEET, realization).standard_normal(grid.shape)
    z *= np.sqrt(grid.dt * grid.dx**grid.d)
    return NoiseSheet(z, grid, seed)


def _embed(c, m):
    """Symmetric circulant first row of length m from lags c[0..m//2]."""
    k = np.arange(m)
    return c[np.minimum(k, m - k)]


def _clip_spectrum(lam):
    total = np.sum(np.abs(lam))
    neg = -np.sum(lam[lam < 0])
    if total > 0 and neg > CLIP_TOL * total:
        raise GridTooCoarse(
            f"grid too coarse for this covariance (negative spectral mass {neg / total:.2e})"
        )
    return np.maximum(lam, 0.0)


def embedding_spectrum(spec, grid, pad=2):
    """Eigenvalues of the circulant embedding of the lattice covariance.

    The covariance is separable, so the spectrum is an outer product of the
    time spectrum and the per-axis space spectra.
    """
    mt = pad * grid.nt
    mx = pad * grid.nx
    ct = time_cell_covariance(spec.time, grid.dt, mt // 2 + 1)
    lam = np.fft.fft(_embed(ct, mt)).real
    cs = space_cell_covariance(spec.space, grid.dx, mx // 2 + 1)
    # build the d-dimensional embedded covariance and transform it
    k = np.arange(mx)
    idx = np.minimum(k, mx - k)
    emb = cs[np.ix_(*([idx] * grid.d))] if grid.d > 1 else cs[idx]
    lam_s = np.fft.fftn(emb).real
    full = np.multiply.outer(lam, lam_s)
    return _clip_spectrum(full)


def sample_stationary_field(spec, grid, seed, realization=0, pad=2, spectrum=None):
    """Stationary Gaussian field with the cell-averaged covariance of ``spec``.

    Circulant embedding on a grid padded by ``pad`` per axis; the returned
    window has exactly the target lattice covariance.
    """
    if spec.white_time:
        raise ValueError("stationary fields need a pointwise time covariance")
    lam = embedding_spectrum(spec, grid, pad) if spectrum is None else spectrum
    g = rng.stream(seed, rng.FIELD, realization)
    z = g.standard_normal(lam.shape) + 1j * g.standard_normal(lam.shape)
    f = np.fft.fftn(np.sqrt(lam / lam.size) * z).real
    window = tuple(slice(0, n) for n in grid.shape)
    return FieldRealization(np.ascontiguousarray(f[window]), grid, spec, seed)


def empirical_covariance(realizations, lag):
    """Cross moment E[V(t, x) V(t + lag_t, x + lag_x)] with jackknife error.

    Each realization contributes its average over all admissible base
    points (no wraparound); the spread across realizations gives the error.
    """
    if len(realizations) == 0:
        raise ValueError("empirical_covariance needs at least one realization")
    arrs = [np.asarray(getattr(r, "values", r), dtype=float) for r in realizations]
    lag = tuple(int(v) for v in lag)
    nd = arrs[0].ndim
    lag = lag + (0,) * (nd - len(lag))
    a_sl, b_sl = [], []
    for n, l in zip(arrs[0].shape, lag):
        if l >= 0:
            a_sl.append(slice(0, n - l))
            b_sl.append(slice(l, n))
        else:
            a_sl.append(slice(-l, n))
            b_sl.append(slice(0, n + l))
    s = np.array([np.mean(a[tuple(a_sl)] * a[tuple(b_sl)]) for a in arrs])
    n = len(s)
    est = float(np.mean(s))
    if n < 2:
        return est, float("nan")
    loo = (np.sum(s) - s) / (n - 1)
    se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    return est, se


# ---------------------------------------------------------------------------
# binary grid format


def dump_binary(path, values):
    """Write a (nt, sites...) array as header + little-endian float64 rows."""
    a = np.asarray(values, dtype="<f8")
    if a.ndim == 1:
        a = a[None, :]
    nt = a.shape[0]
    nx = int(np.prod(a.shape[1:]))
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", FORMAT_VERSION, nt, nx))
        fh.write(np.ascontiguousarray(a).tobytes())


def load_binary(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != MAGIC:
            raise ValueError(f"{path}: not a pamlab grid file")
        version, nt, nx = struct.unpack("<III", head[4:])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != nt * nx:
        raise ValueError(f"{path}: truncated payload")
    return data.reshape(nt, nx).astype(float)
