"""Marginal hybrid EM (W integrated out), used to build starting parameters.

After the E-Z and M-GMM steps shared with the general algorithm, the
marginal variant splits the mapping update into a weighted affine regression
of y on t and a per-component probabilistic PCA of the regression residuals.
The PPCA step is closed-form only for isotropic per-component noise.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
from sklearn.cluster import KMeans

from ._linalg import fix_eigvec_signs, symmetrize
from .em import (
    FitConfig,
    Responsibilities,
    e_z_step,
    m_gmm_step,
    project_constraint,
)
from .errors import FitFailure, RankDeficiencyError, ShapeError
from .model import GLLiMParams

logger = logging.getLogger(__name__)

KMEANS_RETRIES = 5


@dataclass(frozen=True)
class ResidualStats:
    """Eigen-summary of one component's weighted residual covariance."""

    C: np.ndarray
    eigvals: np.ndarray  # descending
    U: np.ndarray  # (D, L_w) leading eigenvectors
    Lambda: np.ndarray  # (L_w, L_w)

    @classmethod
    def from_covariance(cls, C, L_w):
        C = symmetrize(np.asarray(C, dtype=float))
        vals, vecs = np.linalg.eigh(C)
        vals, vecs = vals[::-1], vecs[:, ::-1]
        vals = np.maximum(vals, 0.0)
        U = fix_eigvec_signs(vecs[:, :L_w])
        return cls(C, vals, U, np.diag(vals[:L_w]))


class RegressionUpdate(NamedTuple):
    A_t: np.ndarray  # (K, D, L_t)
    b: np.ndarray  # (K, D)


def m_regression_step(r, data, rcond=1e-12):
    """Weighted affine regression of y on t, one per component."""
    R, rk = r.r, r.r_col
    K, D, Lt = r.K, data.D, data.L_t
    A_t = np.empty((K, D, Lt))
    b = np.empty((K, D))
    for k in range(K):
        w = R[:, k] / rk[k]
        ybar = w @ data.Y
        if Lt == 0:
            b[k] = ybar
            continue
        tbar = w @ data.T
        Tc = data.T - tbar
        gram = symmetrize((Tc * w[:, None]).T @ Tc)
        scale = float(np.sum(w @ (data.T**2))) or 1.0
        if np.linalg.eigvalsh(gram)[0] <= rcond * scale:
            raise RankDeficiencyError(
                f"weighted Gram of t is singular for component {k}", component=k
            )
        cross = ((data.Y - ybar) * w[:, None]).T @ Tc
        Lg = sla.cholesky(gram, lower=True)
        A_t[k] = sla.cho_solve((Lg, True), cross.T).T
        b[k] = w @ (data.Y - data.T @ A_t[k].T)
    return RegressionUpdate(A_t, b)


def residual_covariances(r, data, A_t, b):
    """C_k = sum_n u_kn u_kn' with u_kn = sqrt(r_nk / r_k) (y_n - A_k^t t_n - b_k)."""
    R, rk = r.r, r.r_col
    C = np.empty((r.K, data.D, data.D))
    for k in range(r.K):
        w = R[:, k] / rk[k]
        e = data.Y - data.T @ A_t[k].T - b[k]
        C[k] = symmetrize((e * w[:, None]).T @ e)
    return C


class ResidualUpdate(NamedTuple):
    A_w: np.ndarray  # (D, L_w)
    sigma2: float
    stats: ResidualStats
    clamped: bool


def ppca_closed_form(C, L_w):
    """Global maximizer of the PPCA likelihood for residual covariance ``C``.

    sigma^2 is the mean of the trailing D - L_w eigenvalues and the factor
    loadings are U (Lambda - sigma^2 I)^{1/2}.
    """
    D = C.shape[0]
    if L_w >= D:
        raise ShapeError(f"need L_w < D for the closed-form residual step (L_w={L_w}, D={D})")
    stats = ResidualStats.from_covariance(C, L_w)
    sigma2 = float(np.mean(stats.eigvals[L_w:]))
    gap = stats.eigvals[:L_w] - sigma2
    clamped = bool(np.any(gap < 0))
    A_w = stats.U * np.sqrt(np.maximum(gap, 0.0))
    return ResidualUpdate(A_w, sigma2, stats, clamped)


def m_residual_step(C, L_w):
    """Closed-form (A_k^w, sigma_k^2) for every component's residual covariance."""
    C = np.asarray(C, dtype=float)
    out = [ppca_closed_form(C[k], L_w) for k in range(C.shape[0])]
    A_w = np.stack([u.A_w for u in out])
    sigma2 = np.array([u.sigma2 for u in out])
    clamped = np.array([u.clamped for u in out])
    return A_w, sigma2, clamped


def q_value(C, sigma2, A_w):
    """Residual criterion -1/2 (log|S| + tr(S^-1 C)) with S = sigma^2 I + A_w A_w'."""
    D = C.shape[0]
    S = sigma2 * np.eye(D) + A_w @ A_w.T
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        return -np.inf
    return -0.5 * (logdet + np.trace(np.linalg.solve(S, C)))


def kmeans_responsibilities(data, K, seed=0, space="joint", restarts=10):
    """One-hot memberships from k-means on standardized [y; t] (or on t)."""
    if space == "joint":
        feats = np.hstack([data.Y, data.T])
    elif space == "t":
        if data.L_t == 0:
            raise ShapeError("cannot cluster on t when L_t = 0")
        feats = data.T
    else:
        raise ValueError(f"unknown clustering space {space!r}")
    if K == 1:
        return Responsibilities.from_matrix(np.ones((data.N, 1)))
    if data.N < K:
        raise FitFailure(f"cannot form {K} clusters from {data.N} samples")
    sd = feats.std(axis=0)
    sd[sd == 0] = 1.0
    feats = (feats - feats.mean(axis=0)) / sd
    for attempt in range(KMEANS_RETRIES):
        km = KMeans(n_clusters=K, n_init=restarts, random_state=seed + attempt * 7919)
        labels = km.fit_predict(feats)
        counts = np.bincount(labels, minlength=K)
        if np.all(counts > 0):
            break
        logger.info("k-means attempt %d produced an empty cluster; re-seeding", attempt)
    else:
        raise FitFailure("k-means keeps producing empty clusters")
    R = np.zeros((data.N, K))
    R[np.arange(data.N), labels] = 1.0
    return Responsibilities.from_matrix(R)


def _marginal_params(r, data, config, c_w, Gamma_w):
    """One pass of M-GMM + M-regression + M-residual; Sigma_k = sigma_k^2 I."""
    K, D, Lt, Lw = r.K, data.D, data.L_t, config.L_w
    gmm = m_gmm_step(r, data, config.gamma)
    reg = m_regression_step(r, data)
    C = residual_covariances(r, data, reg.A_t, reg.b)
    n_fac = min(Lw, D - 1)
    A_w = np.zeros((K, D, Lw))
    A_w[:, :, :n_fac], sigma2, _ = m_residual_step(C, n_fac)
    scale = float(np.mean(np.trace(C, axis1=1, axis2=2))) / D
    sigma2 = np.maximum(sigma2, 1e-8 * (scale if scale > 0 else 1.0))
    L = Lt + Lw
    c = np.zeros((K, L))
    c[:, :Lt] = gmm.c_t
    c[:, Lt:] = c_w
    Gamma = np.zeros((K, L, L))
    Gamma[:, :Lt, :Lt] = gmm.Gamma_t
    Gamma[:, Lt:, Lt:] = Gamma_w
    # PPCA loadings assume Gamma^w = I; rescale for another fixed covariance
    if Lw:
        Gw_chol_inv = np.linalg.inv(np.linalg.cholesky(Gamma_w))
        A_w = A_w @ Gw_chol_inv.T
    # the model mean is A^t t + A^w c^w + b, so fold a nonzero c^w into b
    b = reg.b - np.einsum("kdl,l->kd", A_w, c_w)
    A = np.concatenate([reg.A_t, A_w], axis=2)
    Sigma = sigma2[:, None, None] * np.eye(D)[None]
    return gmm.pi, c, Gamma, A, b, Sigma


def params_from_responsibilities(r, data, config, marginal_iters=None):
    """Starting parameters from memberships via marginal EM iterations.

    The isotropic per-component noise of the marginal model is projected onto
    the configured Sigma constraint at the end so the general EM starts inside
    its feasible set.
    """
    if not isinstance(config, FitConfig):
        raise TypeError("config must be a FitConfig")
    n_iter = config.marginal_iters if marginal_iters is None else marginal_iters
    c_w, Gamma_w = config.latent_prior()
    theta = None
    for i in range(max(1, n_iter)):
        if i > 0:
            r = e_z_step(theta, data)
        pi, c, Gamma, A, b, Sigma = _marginal_params(r, data, config, c_w, Gamma_w)
        theta = GLLiMParams(
            pi / pi.sum(),
            c,
            Gamma,
            A,
            b,
            Sigma,
            L_t=data.L_t,
            L_w=config.L_w,
            constraint_sigma=config.sigma,
            constraint_gamma=config.gamma,
        )
    Sigma = project_constraint(theta.Sigma, config.sigma, theta.pi)
    return theta.replace(Sigma=Sigma)


def initialize(data, config):
    """k-means memberships followed by ``config.marginal_iters`` marginal passes."""
    r = kmeans_responsibilities(
        data, config.K, config.seed, config.init_space, config.kmeans_restarts
    )
    return params_from_responsibilities(r, data, config)


__all__ = [
    "ResidualStats",
    "m_regression_step",
    "residual_covariances",
    "m_residual_step",
    "ppca_closed_form",
    "q_value",
    "kmeans_responsibilities",
    "params_from_responsibilities",
    "initialize",
]
