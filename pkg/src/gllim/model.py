"""GLLiM parameterization, forward/inverse conditionals and the joint-GMM link.

Shapes follow a stacked convention: ``c`` is (K, L), ``Gamma`` (K, L, L),
``A`` (K, D, L), ``b`` (K, D), ``Sigma`` (K, D, D), with the observed block
of X first (``L_t`` coordinates) and the latent block last (``L_w``).
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
from scipy.special import logsumexp

from ._linalg import (
    LOG_WEIGHT_CUTOFF,
    cholesky,
    floor_spd,
    log_gauss,
    normalize_log_weights,
    spd_inv,
    symmetrize,
)
from ._io import atomic_write_text
from .data import Dataset
from .errors import (
    DegenerateQueryError,
    InvalidParametersError,
    ShapeError,
)

STRUCTURES = {
    "full": "full",
    "diagonal": "diagonal",
    "diag": "diagonal",
    "isotropic": "isotropic",
    "iso": "isotropic",
}


@dataclass(frozen=True)
class ConstraintSpec:
    """Covariance family: structure x shared-across-components x fixed."""

    structure: str = "full"
    shared: bool = False
    fixed: bool = False
    value: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise InvalidParametersError(f"unknown covariance structure {self.structure!r}")
        object.__setattr__(self, "structure", STRUCTURES[self.structure])
        if self.fixed and self.value is None:
            raise InvalidParametersError("a fixed constraint needs a fixed value")

    @classmethod
    def parse(cls, text):
        """Parse ``"iso"``, ``"diag,shared"``, ``"full"`` and friends."""
        parts = [p.strip().lower() for p in str(text).split(",") if p.strip()]
        if not parts:
            raise InvalidParametersError("empty constraint string")
        shared = False
        structure = None
        for p in parts:
            if p in ("shared", "eq", "equal"):
                shared = True
            elif p in STRUCTURES:
                structure = p
            else:
                raise InvalidParametersError(f"unknown constraint token {p!r}")
        return cls(structure or "full", shared)

    def label(self):
        short = {"full": "full", "diagonal": "diag", "isotropic": "iso"}[self.structure]
        out = short + (",shared" if self.shared else "")
        return out + (",fixed" if self.fixed else "")

    def to_dict(self):
        d = {"structure": self.structure, "shared": self.shared, "fixed": self.fixed}
        if self.value is not None:
            d["value"] = np.asarray(self.value).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        value = d.get("value")
        return cls(
            d.get("structure", "full"),
            bool(d.get("shared", False)),
            bool(d.get("fixed", False)),
            None if value is None else np.asarray(value, dtype=float),
        )


SIGMA_DEFAULT = ConstraintSpec("isotropic", shared=True)
GAMMA_DEFAULT = ConstraintSpec("full")


def _frozen(a, shape=None):
    a = np.array(a, dtype=float)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


def _check_spd(M, name, k):
    if M.shape[0] == 0:
        return
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise InvalidParametersError(f"{name}[{k}] is not symmetric")
    try:
        L = sla.cholesky(M, lower=True)
    except (np.linalg.LinAlgError, ValueError):
        raise InvalidParametersError(f"{name}[{k}] is not positive definite") from None
    if np.min(np.diag(L)) <= 0:
        raise InvalidParametersError(f"{name}[{k}] is not positive definite")


@dataclass(frozen=True)
class GLLiMParams:
    """Inverse-model parameters {pi, c, Gamma, A, b, Sigma} with the t/w split."""

    pi: np.ndarray
    c: np.ndarray
    Gamma: np.ndarray
    A: np.ndarray
    b: np.ndarray
    Sigma: np.ndarray
    L_t: int
    L_w: int = 0
    constraint_sigma: ConstraintSpec = SIGMA_DEFAULT
    constraint_gamma: ConstraintSpec = GAMMA_DEFAULT

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        K = pi.shape[0]
        b = np.asarray(self.b, dtype=float).reshape(K, -1)
        D = b.shape[1]
        L = int(self.L_t) + int(self.L_w)
        if self.L_t < 0 or self.L_w < 0 or K < 1 or D < 1:
            raise InvalidParametersError("need K >= 1, D >= 1, L_t >= 0, L_w >= 0")
        try:
            c = _frozen(self.c, (K, L))
            Gamma = _frozen(self.Gamma, (K, L, L))
            A = _frozen(self.A, (K, D, L))
            Sigma = _frozen(self.Sigma, (K, D, D))
        except ValueError as exc:
            raise ShapeError(f"parameter blocks inconsistent with K={K}, D={D}, L={L}") from exc
        object.__setattr__(self, "pi", _frozen(pi))
        object.__setattr__(self, "b", _frozen(b))
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "L_t", int(self.L_t))
        object.__setattr__(self, "L_w", int(self.L_w))
        self._validate()

    def _validate(self):
        arrays = (self.pi, self.c, self.Gamma, self.A, self.b, self.Sigma)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise InvalidParametersError("parameters contain non-finite values")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-9:
            raise InvalidParametersError("pi must be nonnegative and sum to 1")
        Lt = self.L_t
        for k in range(self.K):
            if np.any(self.Gamma[k, :Lt, Lt:] != 0) or np.any(self.Gamma[k, Lt:, :Lt] != 0):
                raise InvalidParametersError(f"Gamma[{k}] couples the t and w blocks")
            _check_spd(self.Gamma[k], "Gamma", k)
            _check_spd(self.Sigma[k], "Sigma", k)

    @property
    def K(self):
        return self.pi.shape[0]

    @property
    def D(self):
        return self.b.shape[1]

    @property
    def L(self):
        return self.L_t + self.L_w

    # block views
    @property
    def c_t(self):
        return self.c[:, : self.L_t]

    @property
    def c_w(self):
        return self.c[:, self.L_t :]

    @property
    def Gamma_t(self):
        return self.Gamma[:, : self.L_t, : self.L_t]

    @property
    def Gamma_w(self):
        return self.Gamma[:, self.L_t :, self.L_t :]

    @property
    def A_t(self):
        return self.A[:, :, : self.L_t]

    @property
    def A_w(self):
        return self.A[:, :, self.L_t :]

    def check_identifiability(self, c_w=None, Gamma_w=None, atol=0.0):
        """Raise unless the latent prior equals the fixed values (default 0 / I)."""
        if self.L_w == 0:
            return
        c_w = np.zeros(self.L_w) if c_w is None else np.asarray(c_w, dtype=float)
        Gamma_w = np.eye(self.L_w) if Gamma_w is None else np.asarray(Gamma_w, dtype=float)
        if not np.allclose(self.c_w, c_w, rtol=0, atol=atol):
            raise InvalidParametersError("latent means differ from their fixed value")
        if not np.allclose(self.Gamma_w, Gamma_w, rtol=0, atol=atol):
            raise InvalidParametersError("latent covariances differ from their fixed value")

    def replace(self, **changes):
        return replace(self, **changes)

    def select(self, keep):
        """Keep a subset of components and renormalize the priors."""
        keep = np.asarray(keep)
        pi = self.pi[keep]
        return replace(
            self,
            pi=pi / pi.sum(),
            c=self.c[keep],
            Gamma=self.Gamma[keep],
            A=self.A[keep],
            b=self.b[keep],
            Sigma=self.Sigma[keep],
        )

    def noise_covariance(self, k):
        """Sigma_k + A_k^w Gamma_k^w A_k^w' : the noise seen once W is integrated out."""
        Aw = self.A_w[k]
        return symmetrize(self.Sigma[k] + Aw @ self.Gamma_w[k] @ Aw.T)

    # -- persistence -------------------------------------------------------
    def to_dict(self):
        return {
            "K": self.K,
            "D": self.D,
            "L_t": self.L_t,
            "L_w": self.L_w,
            "pi": self.pi.tolist(),
            "c": self.c.tolist(),
            "Gamma": self.Gamma.tolist(),
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "Sigma": self.Sigma.tolist(),
            "constraints": {
                "sigma": self.constraint_sigma.to_dict(),
                "gamma": self.constraint_gamma.to_dict(),
            },
        }

    @classmethod
    def from_dict(cls, d):
        try:
            K, D, L_t, L_w = int(d["K"]), int(d["D"]), int(d["L_t"]), int(d["L_w"])
            cons = d.get("constraints", {})
            theta = cls(
                pi=d["pi"],
                c=np.asarray(d["c"], dtype=float).reshape(K, L_t + L_w),
                Gamma=d["Gamma"],
                A=np.asarray(d["A"], dtype=float).reshape(K, D, L_t + L_w),
                b=d["b"],
                Sigma=d["Sigma"],
                L_t=L_t,
                L_w=L_w,
                constraint_sigma=ConstraintSpec.from_dict(cons.get("sigma", {})),
                constraint_gamma=ConstraintSpec.from_dict(cons.get("gamma", {})),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidParametersError(f"malformed model document: {exc}") from exc
        if theta.K != K or theta.D != D:
            raise ShapeError("declared K/D disagree with the parameter arrays")
        return theta


def save_model(theta, path, extra=None):
    doc = theta.to_dict()
    if extra:
        doc.update(extra)
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_model(path):
    """Returns ``(theta, document)`` so callers can read extra keys."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return GLLiMParams.from_dict(doc), doc


@dataclass(frozen=True)
class ForwardParams:
    """Parameters of p(x | y): a GLLiM running from D back down to L."""

    pi: np.ndarray
    c: np.ndarray  # (K, D)
    Gamma: np.ndarray  # (K, D, D)
    A: np.ndarray  # (K, L, D)
    b: np.ndarray  # (K, L)
    Sigma: np.ndarray  # (K, L, L)

    @property
    def K(self):
        return self.pi.shape[0]

    @property
    def D(self):
        return self.c.shape[1]

    @property
    def L(self):
        return self.b.shape[1]


@dataclass(frozen=True)
class JointGMMParams:
    """Gaussian mixture on the stacked variable [x; y]."""

    rho: np.ndarray
    m: np.ndarray  # (K, L + D)
    V: np.ndarray  # (K, L + D, L + D)

    @property
    def K(self):
        return self.rho.shape[0]

    def log_density(self, Z):
        Z = np.atleast_2d(Z)
        terms = np.column_stack(
            [np.log(self.rho[k]) + log_gauss(Z, self.m[k], self.V[k], k) for k in range(self.K)]
        )
        return logsumexp(terms, axis=1)


FORWARD_GAMMA_FLOOR = 1e-13


def derive_forward(theta):
    """Closed-form parameters of the high-to-low conditional p(x | y)."""
    K, D, L = theta.K, theta.D, theta.L
    c_s = np.empty((K, D))
    Gamma_s = np.empty((K, D, D))
    A_s = np.empty((K, L, D))
    b_s = np.empty((K, L))
    Sigma_s = np.empty((K, L, L))
    for k in range(K):
        A, b, c = theta.A[k], theta.b[k], theta.c[k]
        Gamma, Sigma = theta.Gamma[k], theta.Sigma[k]
        Lg = cholesky(Gamma, k, "Gamma")
        Ls = cholesky(Sigma, k, "Sigma")
        SiA = sla.cho_solve((Ls, True), A)  # Sigma^-1 A
        Sib = sla.cho_solve((Ls, True), b)
        Gi = sla.cho_solve((Lg, True), np.eye(L))
        prec = symmetrize(Gi + A.T @ SiA)
        Sigma_s[k] = spd_inv(prec, k, "forward precision")
        c_s[k] = A @ c + b
        # a collapsed Sigma (noise-free data) leaves Gamma* numerically singular
        Gamma_s[k], _ = floor_spd(Sigma + A @ Gamma @ A.T, FORWARD_GAMMA_FLOOR)
        A_s[k] = Sigma_s[k] @ SiA.T
        b_s[k] = Sigma_s[k] @ (sla.cho_solve((Lg, True), c) - A.T @ Sib)
    return ForwardParams(theta.pi.copy(), c_s, Gamma_s, A_s, b_s, Sigma_s)


def _rows(v, dim, name):
    v = np.asarray(v, dtype=float)
    single = v.ndim <= 1
    v = v.reshape(-1, dim) if v.size else np.zeros((1 if single else v.shape[0], dim))
    if v.shape[1] != dim:
        raise ShapeError(f"{name} must have {dim} columns, got {v.shape[1]}")
    return v, single


def _check_dim(arr, dim, name):
    arr = np.asarray(arr, dtype=float)
    last = arr.shape[-1] if arr.ndim else 1
    if (arr.ndim == 0 and dim != 1) or (arr.ndim >= 1 and last != dim):
        raise ShapeError(f"{name} must have trailing dimension {dim}, got {arr.shape}")
    return arr


def prior_log_terms(pi, c, Gamma, X):
    """(N, K) array of log pi_k + log N(x_n; c_k, Gamma_k)."""
    return np.column_stack(
        [np.log(pi[k]) + log_gauss(X, c[k], Gamma[k], k, "Gamma") for k in range(len(pi))]
    )


def _conditional_log_terms(pi, c, Gamma, A, b, Sigma, X, Y):
    """Log weights w_k(x) and log N(y; A_k x + b_k, Sigma_k), both (N, K)."""
    prior = prior_log_terms(pi, c, Gamma, X)
    logw = prior - logsumexp(prior, axis=1, keepdims=True)
    cond = np.column_stack(
        [log_gauss(Y, X @ A[k].T + b[k], Sigma[k], k, "Sigma") for k in range(len(pi))]
    )
    return logw, cond


def log_inverse_density(theta, x, y):
    """log p(y | x; theta) and its per-component terms log w_k(x) + log N(y; ...)."""
    _check_dim(x, theta.L, "x")
    _check_dim(y, theta.D, "y")
    X, single = _rows(x, theta.L, "x")
    Y, _ = _rows(y, theta.D, "y")
    if X.shape[0] != Y.shape[0]:
        raise ShapeError("x and y must have the same number of rows")
    logw, cond = _conditional_log_terms(
        theta.pi, theta.c, theta.Gamma, theta.A, theta.b, theta.Sigma, X, Y
    )
    terms = logw + cond
    out = logsumexp(terms, axis=1)
    return (out[0], terms[0]) if single else (out, terms)


def inverse_density(theta, x, y):
    """p(y | x; theta), the low-to-high conditional mixture density."""
    return np.exp(log_inverse_density(theta, x, y)[0])


def log_forward_density(theta_star, y, x):
    _check_dim(x, theta_star.L, "x")
    _check_dim(y, theta_star.D, "y")
    Y, single = _rows(y, theta_star.D, "y")
    X, _ = _rows(x, theta_star.L, "x")
    if X.shape[0] != Y.shape[0]:
        raise ShapeError("x and y must have the same number of rows")
    ts = theta_star
    logw, cond = _conditional_log_terms(ts.pi, ts.c, ts.Gamma, ts.A, ts.b, ts.Sigma, Y, X)
    terms = logw + cond
    out = logsumexp(terms, axis=1)
    return (out[0], terms[0]) if single else (out, terms)


def forward_density(theta_star, y, x):
    """p(x | y) under the forward parameters."""
    return np.exp(log_forward_density(theta_star, y, x)[0])


class Prediction(NamedTuple):
    x: np.ndarray
    t: np.ndarray
    w: np.ndarray
    degenerate: np.ndarray


def _mixture_expectation(pi, c, Gamma, A, b, Q, on_degenerate):
    with np.errstate(over="ignore", invalid="ignore"):
        prior = prior_log_terms(pi, c, Gamma, Q)
    bad = ~np.isfinite(prior.max(axis=1))
    if np.any(bad) and on_degenerate == "raise":
        raise DegenerateQueryError(f"{int(bad.sum())} queries have all mixture weights at zero")
    safe = prior.copy()
    safe[bad] = 0.0
    w, _ = normalize_log_weights(safe)
    if np.any(bad):
        # flagged fallback: the nearest component centre takes the query
        with np.errstate(over="ignore", invalid="ignore"):
            d2 = ((Q[bad][:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        w[bad] = 0.0
        w[np.flatnonzero(bad), np.argmin(d2, axis=1)] = 1.0
    preds = np.einsum("kld,nd->nkl", A, Q) + b[None, :, :]
    return np.einsum("nk,nkl->nl", w, preds), bad


def inverse_expectation(theta, x, on_degenerate="flag", return_flags=False):
    """E[y | x]: responsibility-weighted affine predictions A_k x + b_k."""
    _check_dim(x, theta.L, "x")
    X, single = _rows(x, theta.L, "x")
    out, bad = _mixture_expectation(
        theta.pi, theta.c, theta.Gamma, theta.A, theta.b, X, on_degenerate
    )
    if single:
        out, bad = out[0], bad[0]
    return (out, bad) if return_flags else out


def forward_expectation(theta, y, theta_star=None, on_degenerate="flag", return_details=False):
    """E[x | y] through the derived forward parameters.

    With ``return_details`` a :class:`Prediction` exposes the observed part
    ``t`` and latent part ``w`` of the estimate plus per-query degeneracy
    flags.
    """
    ts = derive_forward(theta) if theta_star is None else theta_star
    _check_dim(y, ts.D, "y")
    Y, single = _rows(y, ts.D, "y")
    out, bad = _mixture_expectation(ts.pi, ts.c, ts.Gamma, ts.A, ts.b, Y, on_degenerate)
    if single:
        out, bad = out[0], bad[0]
    if not return_details:
        return out
    return Prediction(out, out[..., : theta.L_t], out[..., theta.L_t :], bad)


def to_joint_gmm(theta):
    K, L, D = theta.K, theta.L, theta.D
    m = np.empty((K, L + D))
    V = np.empty((K, L + D, L + D))
    for k in range(K):
        A, G = theta.A[k], theta.Gamma[k]
        m[k, :L] = theta.c[k]
        m[k, L:] = A @ theta.c[k] + theta.b[k]
        V[k, :L, :L] = G
        V[k, :L, L:] = G @ A.T
        V[k, L:, :L] = A @ G
        V[k, L:, L:] = theta.Sigma[k] + A @ G @ A.T
        V[k] = symmetrize(V[k])
    return JointGMMParams(theta.pi.copy(), m, V)


def from_joint_gmm(psi, L, constraint_sigma=None, constraint_gamma=None):
    """Invert :func:`to_joint_gmm`; the result is a plain (L_w = 0) GLLiM."""
    K, P = psi.m.shape
    D = P - L
    if not (0 < L < P):
        raise ShapeError(f"L={L} is incompatible with joint dimension {P}")
    c = np.empty((K, L))
    Gamma = np.empty((K, L, L))
    A = np.empty((K, D, L))
    b = np.empty((K, D))
    Sigma = np.empty((K, D, D))
    for k in range(K):
        V = symmetrize(psi.V[k])
        _check_spd(V, "V", k)
        Vxx, Vxy, Vyy = V[:L, :L], V[:L, L:], V[L:, L:]
        Lx = cholesky(Vxx, k, "V^xx")
        VxxiVxy = sla.cho_solve((Lx, True), Vxy)
        c[k] = psi.m[k, :L]
        Gamma[k] = Vxx
        A[k] = VxxiVxy.T
        b[k] = psi.m[k, L:] - A[k] @ c[k]
        Sigma[k] = symmetrize(Vyy - Vxy.T @ VxxiVxy)
    return GLLiMParams(
        psi.rho / psi.rho.sum(),
        c,
        Gamma,
        A,
        b,
        Sigma,
        L_t=L,
        L_w=0,
        constraint_sigma=constraint_sigma or ConstraintSpec("full"),
        constraint_gamma=constraint_gamma or ConstraintSpec("full"),
    )


def joint_log_density(theta, x, y):
    """log p(x, y; theta) from the hierarchical form sum_k pi_k N(x;c,G) N(y;Ax+b,S)."""
    X, _ = _rows(x, theta.L, "x")
    Y, _ = _rows(y, theta.D, "y")
    terms = prior_log_terms(theta.pi, theta.c, theta.Gamma, X)
    for k in range(theta.K):
        terms[:, k] += log_gauss(Y, X @ theta.A[k].T + theta.b[k], theta.Sigma[k], k)
    return logsumexp(terms, axis=1)


def observed_log_terms(theta, data):
    """(N, K) log pi_k + log p(t_n, y_n | Z=k) with W integrated out."""
    if data.D != theta.D or data.L_t != theta.L_t:
        raise ShapeError(
            f"data has D={data.D}, L_t={data.L_t}; model has D={theta.D}, L_t={theta.L_t}"
        )
    N, K = data.N, theta.K
    terms = np.empty((N, K))
    for k in range(K):
        mean = data.T @ theta.A_t[k].T + theta.A_w[k] @ theta.c_w[k] + theta.b[k]
        cov = theta.noise_covariance(k)
        terms[:, k] = (
            np.log(theta.pi[k])
            + log_gauss(data.T, theta.c_t[k], theta.Gamma_t[k], k, "Gamma^t")
            + log_gauss(data.Y, mean, cov, k, "noise covariance")
        )
    return terms


def log_likelihood(theta, data):
    """Observed-data log-likelihood sum_n log p(y_n, t_n; theta)."""
    if data.N < 1:
        raise ShapeError("empty dataset")
    return float(np.sum(logsumexp(observed_log_terms(theta, data), axis=1)))


def sample(theta, N, rng=None):
    """Draw (X, Y, Z) from the generative model; X stacks [t; w]."""
    rng = np.random.default_rng(rng)
    Z = rng.choice(theta.K, size=N, p=theta.pi)
    X = np.empty((N, theta.L))
    Y = np.empty((N, theta.D))
    for k in range(theta.K):
        idx = np.flatnonzero(Z == k)
        if idx.size == 0:
            continue
        X[idx] = theta.c[k] + rng.standard_normal((idx.size, theta.L)) @ _chol_t(theta.Gamma[k])
        noise = rng.standard_normal((idx.size, theta.D)) @ _chol_t(theta.Sigma[k])
        Y[idx] = X[idx] @ theta.A[k].T + theta.b[k] + noise
    return X, Y, Z


def _chol_t(M):
    if M.shape[0] == 0:
        return M
    return np.linalg.cholesky(M).T


def as_dataset(theta, X, Y):
    """Split sampled X into observed T and hidden W."""
    return Dataset(X[:, : theta.L_t], Y, X[:, theta.L_t :] if theta.L_w else None)


__all__ = [
    "ConstraintSpec",
    "GLLiMParams",
    "ForwardParams",
    "JointGMMParams",
    "Prediction",
    "derive_forward",
    "inverse_density",
    "log_inverse_density",
    "forward_density",
    "log_forward_density",
    "inverse_expectation",
    "forward_expectation",
    "to_joint_gmm",
    "from_joint_gmm",
    "joint_log_density",
    "observed_log_terms",
    "log_likelihood",
    "sample",
    "as_dataset",
    "save_model",
    "load_model",
    "LOG_WEIGHT_CUTOFF",
]
