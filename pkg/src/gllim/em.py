"""General hybrid GLLiM-EM: E-W, E-Z, M-GMM and M-mapping steps.

The loop in :func:`fit` alternates the two E-steps and the two M-steps until
the relative change of the observed-data log-likelihood drops below
``rel_tol``.  Covariance constraints are handled by projecting the
unconstrained M-step solutions, which is exact for the diag/iso/eq families.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from ._linalg import (
    EIG_FLOOR,
    cholesky,
    floor_spd,
    normalize_log_weights,
    spd_inv,
    symmetrize,
)
from .data import Dataset
from .errors import FitFailure, NumericalFailure, RankDeficiencyError, ShapeError
from .model import GAMMA_DEFAULT, SIGMA_DEFAULT, ConstraintSpec, GLLiMParams, observed_log_terms

logger = logging.getLogger(__name__)

RIDGE = 1e-10
RIDGE_TRIGGER = 1e-8
# absolute floors, relative to the data's mean per-coordinate variance
SIGMA_ABS_FLOOR = 1e-22
GAMMA_ABS_FLOOR = 1e-12


@dataclass(frozen=True)
class Responsibilities:
    """Posterior memberships r_nk; ``loglik`` is the log-normalizer total."""

    r: np.ndarray
    r_col: np.ndarray
    loglik: float = float("nan")
    n_underflow: int = 0

    @classmethod
    def from_matrix(cls, r):
        r = np.asarray(r, dtype=float)
        return cls(r, r.sum(axis=0))

    @property
    def N(self):
        return self.r.shape[0]

    @property
    def K(self):
        return self.r.shape[1]


@dataclass(frozen=True)
class LatentPosterior:
    """Gaussian posteriors of W given (t_n, y_n, Z_n = k)."""

    mu_w: np.ndarray  # (N, K, L_w)
    S_w: np.ndarray  # (K, L_w, L_w)


@dataclass
class FitReport:
    loglik_trace: list = field(default_factory=list)
    iterations: int = 0
    K_effective: int = 0
    converged: bool = False
    final_bic: float = float("nan")
    # iterations at which components were dropped; the likelihood may dip there
    removal_iterations: list = field(default_factory=list)
    underflow_rows: int = 0

    def is_monotone(self, rel_slack=1e-8):
        tr = self.loglik_trace
        skip = set(self.removal_iterations)
        for i in range(1, len(tr)):
            if i in skip:
                continue
            if tr[i] < tr[i - 1] - rel_slack * abs(tr[i - 1]):
                return False
        return True


@dataclass
class FitConfig:
    """Everything :func:`fit` needs besides the data."""

    K: int = 5
    L_w: int = 0
    sigma: ConstraintSpec = SIGMA_DEFAULT
    gamma: ConstraintSpec = GAMMA_DEFAULT
    max_iter: int = 200
    rel_tol: float = 1e-6
    seed: int = 0
    init_space: str = "joint"
    kmeans_restarts: int = 10
    marginal_iters: int = 1
    c_w: np.ndarray | None = None
    Gamma_w: np.ndarray | None = None

    def __post_init__(self):
        if isinstance(self.sigma, str):
            self.sigma = ConstraintSpec.parse(self.sigma)
        if isinstance(self.gamma, str):
            self.gamma = ConstraintSpec.parse(self.gamma)
        if self.K < 1 or self.L_w < 0 or self.max_iter < 1:
            raise ValueError("need K >= 1, L_w >= 0, max_iter >= 1")

    def latent_prior(self):
        c_w = np.zeros(self.L_w) if self.c_w is None else np.asarray(self.c_w, dtype=float)
        G_w = np.eye(self.L_w) if self.Gamma_w is None else np.asarray(self.Gamma_w, dtype=float)
        return c_w.reshape(self.L_w), G_w.reshape(self.L_w, self.L_w)


def data_scale(data):
    """Mean per-coordinate variance of Y, used to make absolute floors unit-free."""
    v = float(np.mean(np.var(data.Y, axis=0))) if data.N > 1 else 0.0
    return v if v > 0 else 1.0


# -- E-steps -------------------------------------------------------------------


def e_w_step(theta, data):
    """Posterior mean and covariance of W for every (n, k)."""
    N, K, Lw, Lt = data.N, theta.K, theta.L_w, theta.L_t
    if Lw == 0:
        return LatentPosterior(np.zeros((N, K, 0)), np.zeros((K, 0, 0)))
    mu = np.empty((N, K, Lw))
    S = np.empty((K, Lw, Lw))
    for k in range(K):
        Aw, At = theta.A_w[k], theta.A_t[k]
        Ls = cholesky(theta.Sigma[k], k, "Sigma")
        SiAw = sla.cho_solve((Ls, True), Aw)
        Gw_inv = spd_inv(theta.Gamma_w[k], k, "Gamma^w")
        S[k] = spd_inv(symmetrize(Gw_inv + Aw.T @ SiAw), k, "latent precision")
        resid = data.Y - data.T @ At.T - theta.b[k]
        mu[:, k, :] = (resid @ SiAw + Gw_inv @ theta.c_w[k]) @ S[k]
    return LatentPosterior(mu, S)


def e_z_step(theta, data):
    """Component posteriors with W integrated out, normalized in log-domain."""
    terms = observed_log_terms(theta, data)
    bad = ~np.isfinite(terms.max(axis=1))
    n_bad = int(bad.sum())
    if n_bad:
        logger.warning("%d rows underflowed in every component; using uniform posteriors", n_bad)
        terms[bad] = 0.0
    r, lse = normalize_log_weights(terms)
    loglik = float("-inf") if n_bad else float(np.sum(lse))
    return Responsibilities(r, r.sum(axis=0), loglik, n_bad)


# -- constraint projection ------------------------------------------------------


def project_constraint(M, spec, pi):
    """Project unconstrained covariance solutions onto a constraint family."""
    M = np.asarray(M, dtype=float)
    K, P = M.shape[0], M.shape[-1]
    if spec.fixed:
        value = np.asarray(spec.value, dtype=float)
        return np.broadcast_to(value.reshape((-1, P, P)), (K, P, P)).copy()
    if spec.structure == "diagonal":
        out = np.zeros_like(M)
        idx = np.arange(P)
        out[:, idx, idx] = M[:, idx, idx]
    elif spec.structure == "isotropic":
        tr = np.trace(M, axis1=1, axis2=2) / P if P else np.zeros(K)
        out = tr[:, None, None] * np.eye(P)[None]
    else:
        out = M.copy()
    if spec.shared:
        pooled = np.einsum("k,kij->ij", np.asarray(pi, dtype=float), out)
        out = np.broadcast_to(pooled, out.shape).copy()
    return symmetrize(out)


# -- M-steps ----------------------------------------------------------------------


class GMMUpdate(NamedTuple):
    pi: np.ndarray
    c_t: np.ndarray
    Gamma_t: np.ndarray
    floored: np.ndarray


def m_gmm_step(r, data, constraint=GAMMA_DEFAULT, abs_floor=None):
    """Weighted moments of t: the usual GMM update of (pi, c^t, Gamma^t)."""
    R, rk = r.r, r.r_col
    N, K, Lt = data.N, r.K, data.L_t
    pi = rk / N
    if np.any(rk <= 0):
        raise FitFailure("a component has zero total responsibility")
    if Lt == 0:
        return GMMUpdate(pi, np.zeros((K, 0)), np.zeros((K, 0, 0)), np.zeros(K, bool))
    c_t = (R.T @ data.T) / rk[:, None]
    G = np.empty((K, Lt, Lt))
    for k in range(K):
        diff = data.T - c_t[k]
        G[k] = (diff * (R[:, k] / rk[k])[:, None]).T @ diff
    G = project_constraint(G, constraint, pi)
    if abs_floor is None:
        tv = np.var(data.T, axis=0).mean() if N > 1 else 1.0
        abs_floor = GAMMA_ABS_FLOOR * (tv if tv > 0 else 1.0)
    floored = np.zeros(K, bool)
    if not constraint.fixed:
        for k in range(K):
            G[k], floored[k] = floor_spd(G[k], EIG_FLOOR, abs_floor)
    return GMMUpdate(pi, c_t, G, floored)


def solve_gram(G, rhs, k=None):
    """Solve G X = rhs for a weighted Gram matrix G.

    A ridge of RIDGE * tr(G) / dim is added only when G is ill-conditioned
    (smallest eigenvalue below RIDGE_TRIGGER * tr(G) / dim), so well-posed
    problems are solved exactly.
    """
    G = symmetrize(np.array(G, dtype=float))
    L = G.shape[0]
    trace = np.trace(G)
    if not np.isfinite(trace) or trace <= 0:
        raise RankDeficiencyError(f"Gram matrix of component {k} is zero", component=k)
    if np.linalg.eigvalsh(G)[0] < RIDGE_TRIGGER * trace / L:
        G[np.diag_indices(L)] += RIDGE * trace / L
    try:
        Lg = sla.cholesky(G, lower=True)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError(f"Gram matrix of component {k} is singular", component=k) from None
    return sla.cho_solve((Lg, True), rhs)


class MappingUpdate(NamedTuple):
    A: np.ndarray
    b: np.ndarray
    Sigma: np.ndarray


def m_mapping_step(r, post_w, data, constraint=SIGMA_DEFAULT, abs_floor=None):
    """Closed-form (A_k, b_k, Sigma_k) given the E-step statistics."""
    R, rk = r.r, r.r_col
    N, K, D, Lt = data.N, r.K, data.D, data.L_t
    Lw = post_w.mu_w.shape[2]
    L = Lt + Lw
    pi = rk / N
    A = np.empty((K, D, L))
    b = np.empty((K, D))
    Sig = np.empty((K, D, D))
    for k in range(K):
        w = R[:, k] / rk[k]
        X = np.hstack([data.T, post_w.mu_w[:, k, :]])
        xbar, ybar = w @ X, w @ data.Y
        Xc, Yc = X - xbar, data.Y - ybar
        G = (Xc * w[:, None]).T @ Xc
        G[Lt:, Lt:] += post_w.S_w[k]
        YX = (Yc * w[:, None]).T @ Xc
        if L:
            A[k] = solve_gram(G, YX.T, k).T
        b[k] = ybar - A[k] @ xbar
        resid = data.Y - X @ A[k].T - b[k]
        Aw = A[k][:, Lt:]
        Sig[k] = Aw @ post_w.S_w[k] @ Aw.T + (resid * w[:, None]).T @ resid
    Sig = project_constraint(symmetrize(Sig), constraint, pi)
    if abs_floor is None:
        abs_floor = SIGMA_ABS_FLOOR * data_scale(data)
    if not constraint.fixed:
        for k in range(K):
            Sig[k], _ = floor_spd(Sig[k], EIG_FLOOR, abs_floor)
    return MappingUpdate(A, b, Sig)


def assemble(theta, gmm, mapping):
    """Build the next parameter vector keeping the fixed latent prior."""
    K, Lt = gmm.pi.shape[0], theta.L_t
    c = theta.c.copy()
    Gamma = theta.Gamma.copy()
    c[:, :Lt] = gmm.c_t
    Gamma[:, :Lt, :Lt] = gmm.Gamma_t
    return theta.replace(
        pi=gmm.pi / gmm.pi.sum(), c=c, Gamma=Gamma, A=mapping.A, b=mapping.b, Sigma=mapping.Sigma
    )


def em_iteration(theta, resp, data):
    """One M-step from the E-Z posteriors ``resp`` (E-W is done here)."""
    post = e_w_step(theta, data)
    gmm = m_gmm_step(resp, data, theta.constraint_gamma)
    mapping = m_mapping_step(resp, post, data, theta.constraint_sigma)
    return assemble(theta, gmm, mapping), gmm.floored


def removal_threshold(theta):
    return max(theta.L + 1, 3)


def _emit(trace_sink, it, ll, K):
    if trace_sink is not None:
        trace_sink.write(f"{it}\t{ll:.17g}\t{K}\n")


def fit(data, config, init=None, trace_sink=None):
    """Run the general hybrid EM.

    ``init`` may be a :class:`GLLiMParams`, a :class:`Responsibilities`
    (turned into parameters with one marginal M-step) or ``None`` (k-means
    followed by one marginal iteration).  Returns ``(theta, FitReport)``.
    """
    from .marginal import initialize, params_from_responsibilities

    if data.L_t + config.L_w == 0:
        raise ShapeError("need at least one observed or latent response dimension")
    if isinstance(init, GLLiMParams):
        theta = init
        if theta.D != data.D or theta.L_t != data.L_t:
            raise ShapeError("initial parameters do not match the data dimensions")
    elif isinstance(init, Responsibilities):
        theta = params_from_responsibilities(init, data, config)
    else:
        theta = initialize(data, config)

    report = FitReport()
    resp = e_z_step(theta, data)
    report.underflow_rows += resp.n_underflow
    report.loglik_trace.append(resp.loglik)
    _emit(trace_sink, 0, resp.loglik, theta.K)
    floor_hits = np.zeros(theta.K, int)
    for it in range(1, config.max_iter + 1):
        drop = (resp.r_col < removal_threshold(theta)) | (floor_hits >= 2)
        if drop.any():
            keep = np.flatnonzero(~drop)
            if keep.size == 0:
                raise FitFailure(f"all components removed at iteration {it}")
            logger.info("iteration %d: removing components %s", it, np.flatnonzero(drop).tolist())
            theta = theta.select(keep)
            floor_hits = floor_hits[keep]
            resp = e_z_step(theta, data)
            report.removal_iterations.append(it)
        theta, floored = em_iteration(theta, resp, data)
        floor_hits = np.where(floored, floor_hits + 1, 0)
        resp = e_z_step(theta, data)
        report.underflow_rows += resp.n_underflow
        ll = resp.loglik
        if not np.isfinite(ll):
            raise NumericalFailure(f"non-finite log-likelihood at iteration {it}", iteration=it)
        prev = report.loglik_trace[-1]
        report.loglik_trace.append(ll)
        report.iterations = it
        _emit(trace_sink, it, ll, theta.K)
        if (ll - prev) / abs(prev) < config.rel_tol:
            report.converged = True
            break
    report.K_effective = theta.K
    from .selection import bic

    report.final_bic = bic(theta, report.loglik_trace[-1], data.N)
    return theta, report


# -- latent-free reference path ----------------------------------------------------


def fit_supervised(data, theta, max_iter=200, rel_tol=1e-6):
    """Mixture of local linear experts EM with no latent block at all.

    Written without the E-W machinery so that :func:`fit` with ``L_w = 0`` can
    be checked against it step by step.  No component removal is done here.
    """
    if theta.L_w != 0:
        raise ShapeError("fit_supervised needs L_w = 0")
    T, Y = data.T, data.Y
    N, Lt = T.shape
    D = Y.shape[1]
    sig_floor = SIGMA_ABS_FLOOR * data_scale(data)
    tv = np.var(T, axis=0).mean() if N > 1 else 1.0
    gam_floor = GAMMA_ABS_FLOOR * (tv if tv > 0 else 1.0)

    def loglik_and_r(th):
        terms = observed_log_terms(th, data)
        r, lse = normalize_log_weights(terms)
        return float(lse.sum()), r

    ll, R = loglik_and_r(theta)
    trace = [ll]
    for _ in range(max_iter):
        rk = R.sum(axis=0)
        K = rk.size
        pi = rk / N
        c = (R.T @ T) / rk[:, None]
        Gam = np.empty((K, Lt, Lt))
        A = np.empty((K, D, Lt))
        b = np.empty((K, D))
        Sig = np.empty((K, D, D))
        for k in range(K):
            w = R[:, k] / rk[k]
            Tc = T - c[k]
            Gam[k] = (Tc * w[:, None]).T @ Tc
            ybar = w @ Y
            cross = ((Y - ybar) * w[:, None]).T @ Tc
            A[k] = solve_gram(Gam[k], cross.T, k).T
            b[k] = ybar - A[k] @ c[k]
            e = Y - T @ A[k].T - b[k]
            Sig[k] = (e * w[:, None]).T @ e
        Gam = project_constraint(Gam, theta.constraint_gamma, pi)
        Sig = project_constraint(symmetrize(Sig), theta.constraint_sigma, pi)
        for k in range(K):
            Gam[k], _ = floor_spd(Gam[k], EIG_FLOOR, gam_floor)
            Sig[k], _ = floor_spd(Sig[k], EIG_FLOOR, sig_floor)
        theta = theta.replace(pi=pi / pi.sum(), c=c, Gamma=Gam, A=A, b=b, Sigma=Sig)
        ll, R = loglik_and_r(theta)
        prev = trace[-1]
        trace.append(ll)
        if (ll - prev) / abs(prev) < rel_tol:
            break
    return theta, trace


__all__ = [
    "Dataset",
    "Responsibilities",
    "LatentPosterior",
    "FitReport",
    "FitConfig",
    "e_w_step",
    "e_z_step",
    "m_gmm_step",
    "m_mapping_step",
    "project_constraint",
    "fit",
    "fit_supervised",
]
