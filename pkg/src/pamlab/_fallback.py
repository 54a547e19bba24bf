"""Pure-numpy versions of the compiled kernels (same signatures)."""

import numpy as np


def heat_step(u, xi, lam, theta, var, coupling):
    a = lam * np.roll(u, 1, axis=1) + (1.0 - 2.0 * lam) * u + lam * np.roll(u, -1, axis=1)
    if coupling == 0:
        return a * np.exp(theta * xi - 0.5 * theta * theta * var)
    return a + theta * u * xi


def _pair_values(diff, mode, ell, ds, tables, amp, var):
    """Covariance of displacement vectors ``diff`` (..., d)."""
    if mode == 1:
        return amp * np.exp(-0.5 * np.sum(diff * diff, axis=-1) / var)
    grid = np.arange(tables.shape[1]) * ds
    if tables.shape[0] == 1:
        r = np.sqrt(np.sum(diff * diff, axis=-1))
        return np.interp(np.arcsinh(r / ell), grid, tables[0])
    out = 1.0
    for q in range(diff.shape[-1]):
        out = out * np.interp(np.arcsinh(np.abs(diff[..., q]) / ell), grid, tables[q])
    return out


def pair_double_time(X, W, mode, ell, ds, tables, amp, var):
    S, m, n, _ = X.shape
    out = np.empty((S, m, m))
    for j in range(m):
        for k in range(j, m):
            diff = X[:, j, :, None, :] - X[:, k, None, :, :]
            g = _pair_values(diff, mode, ell, ds, tables, amp, var)
            q = np.einsum("ab,sab->s", W, g)
            out[:, j, k] = q
            out[:, k, j] = q
    return out


def pair_equal_time(X, w, mode, ell, ds, tables, amp, var):
    S, m, n, _ = X.shape
    out = np.zeros((S, m, m))
    for j in range(m):
        for k in range(j + 1, m):
            g = _pair_values(X[:, j] - X[:, k], mode, ell, ds, tables, amp, var)
            q = g @ w
            out[:, j, k] = q
            out[:, k, j] = q
    return out
