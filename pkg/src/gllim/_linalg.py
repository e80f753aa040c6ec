"""Small dense linear-algebra helpers used by the model and the EM steps."""

import numpy as np
import scipy.linalg as sla
from scipy.special import logsumexp

from .errors import IllConditionedError

LOG_2PI = np.log(2.0 * np.pi)
EIG_FLOOR = 1e-8
# normalized weights below exp(-700) are exact zeros
LOG_WEIGHT_CUTOFF = -700.0


def symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def floor_spd(M, rel=EIG_FLOOR, abs_floor=0.0):
    """Symmetrize ``M`` and raise its eigenvalues to ``rel * tr(M)/P``.

    Returns ``(M_floored, hit)`` where ``hit`` tells whether any eigenvalue
    had to be lifted.
    """
    M = symmetrize(np.asarray(M, dtype=float))
    P = M.shape[0]
    if P == 0:
        return M, False
    floor = max(rel * np.trace(M) / P, abs_floor)
    if floor <= 0.0:
        floor = max(abs_floor, np.finfo(float).tiny)
    vals, vecs = np.linalg.eigh(M)
    if vals[0] >= floor:
        return M, False
    vals = np.maximum(vals, floor)
    return symmetrize((vecs * vals) @ vecs.T), True


def cholesky(M, component=None, what="matrix"):
    """Lower Cholesky factor, raising :class:`IllConditionedError` on failure."""
    try:
        return sla.cholesky(M, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise IllConditionedError(
            f"{what} of component {component} is not positive definite",
            component=component,
        ) from exc


def spd_inv(M, component=None, what="matrix"):
    """Inverse of an SPD matrix through its Cholesky factor."""
    P = M.shape[0]
    if P == 0:
        return np.zeros((0, 0))
    L = cholesky(M, component, what)
    inv = sla.cho_solve((L, True), np.eye(P))
    return symmetrize(inv)


def spd_solve(M, B, component=None, what="matrix"):
    L = cholesky(M, component, what)
    return sla.cho_solve((L, True), B)


def log_gauss(X, mean, cov, component=None, what="covariance"):
    """Row-wise log N(x_n; mean_n, cov) for ``X`` of shape (N, P).

    ``mean`` may be a single P-vector or one row per sample.  P = 0 gives
    zeros, which lets empty blocks drop out of products of densities.
    """
    X = np.atleast_2d(X)
    P = X.shape[1]
    if P == 0:
        return np.zeros(X.shape[0])
    L = cholesky(cov, component, what)
    diff = X - mean
    z = sla.solve_triangular(L, diff.T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", z, z)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (P * LOG_2PI + logdet + maha)


def normalize_log_weights(logw):
    """Row-normalize log-weights; returns (weights, log_normalizer)."""
    lse = logsumexp(logw, axis=1)
    logr = logw - lse[:, None]
    w = np.exp(logr)
    w[logr < LOG_WEIGHT_CUTOFF] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    return w, lse


def fix_eigvec_signs(U):
    """Flip columns so each one's largest-magnitude entry is positive."""
    if U.size == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs
