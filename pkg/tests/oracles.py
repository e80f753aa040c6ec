"""Independent reference computations used as test oracles.

These deliberately avoid the package's vectorized code paths: densities are
computed with explicit loops, inverses with numpy.linalg.inv, and so on.
"""

import math

import numpy as np

from gllim.model import GLLiMParams


def random_spd(rng, p, scale=1.0, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    eig = scale * np.exp(rng.uniform(0, np.log(cond), size=p))
    return (Q * eig) @ Q.T


def random_theta(rng, K, D, L_t, L_w=0, iso_sigma=False, a_scale=1.0):
    L = L_t + L_w
    pi = rng.dirichlet(np.ones(K) * 3)
    c = np.zeros((K, L))
    c[:, :L_t] = rng.normal(0, 2, size=(K, L_t))
    Gamma = np.zeros((K, L, L))
    for k in range(K):
        Gamma[k, :L_t, :L_t] = random_spd(rng, L_t, 0.5)
        Gamma[k, L_t:, L_t:] = np.eye(L_w)
    A = rng.normal(0, a_scale, size=(K, D, L))
    b = rng.normal(0, 1, size=(K, D))
    if iso_sigma:
        Sigma = np.array([np.eye(D) * rng.uniform(0.2, 1.0) for _ in range(K)])
    else:
        Sigma = np.array([random_spd(rng, D, 0.3) for _ in range(K)])
    return GLLiMParams(pi, c, Gamma, A, b, Sigma, L_t=L_t, L_w=L_w)


def naive_gauss_pdf(x, mean, cov):
    """Multivariate normal density with explicit loops and an explicit inverse."""
    x = np.atleast_1d(np.asarray(x, float))
    mean = np.atleast_1d(np.asarray(mean, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    p = x.shape[0]
    if p == 0:
        return 1.0
    inv = np.linalg.inv(cov)
    q = 0.0
    for i in range(p):
        for j in range(p):
            q += (x[i] - mean[i]) * inv[i, j] * (x[j] - mean[j])
    return math.exp(-0.5 * q) / math.sqrt((2 * math.pi) ** p * np.linalg.det(cov))


def naive_log_gauss(x, mean, cov):
    x = np.atleast_1d(np.asarray(x, float))
    mean = np.atleast_1d(np.asarray(mean, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    p = x.shape[0]
    if p == 0:
        return 0.0
    inv = np.linalg.inv(cov)
    q = 0.0
    for i in range(p):
        for j in range(p):
            q += (x[i] - mean[i]) * inv[i, j] * (x[j] - mean[j])
    sign, logdet = np.linalg.slogdet(cov)
    return -0.5 * (q + logdet + p * math.log(2 * math.pi))


def naive_logsumexp(v):
    m = max(v)
    return m + math.log(sum(math.exp(x - m) for x in v))


def condition_gaussian(mean, cov, idx_given, idx_out, value):
    """Schur-complement conditioning of a joint Gaussian."""
    S11 = cov[np.ix_(idx_out, idx_out)]
    S12 = cov[np.ix_(idx_out, idx_given)]
    S22 = cov[np.ix_(idx_given, idx_given)]
    gain = S12 @ np.linalg.inv(S22)
    m = mean[idx_out] + gain @ (value - mean[idx_given])
    return m, S11 - gain @ S12.T, gain


def naive_observed_loglik(theta, T, Y):
    """sum_n log sum_k pi_k N(t_n) N(y_n | t_n, k) with W integrated out."""
    total = 0.0
    Lt = theta.L_t
    for n in range(Y.shape[0]):
        terms = []
        for k in range(theta.K):
            At, Aw = theta.A[k][:, :Lt], theta.A[k][:, Lt:]
            cw, Gw = theta.c[k][Lt:], theta.Gamma[k][Lt:, Lt:]
            mean = At @ T[n] + Aw @ cw + theta.b[k]
            cov = theta.Sigma[k] + Aw @ Gw @ Aw.T
            lt = naive_log_gauss(T[n], theta.c[k][:Lt], theta.Gamma[k][:Lt, :Lt])
            terms.append(math.log(theta.pi[k]) + lt + naive_log_gauss(Y[n], mean, cov))
        total += naive_logsumexp(terms)
    return total


def naive_observed_terms(theta, T, Y):
    """Matrix of log pi_k p(t_n, y_n | Z=k) with W integrated out."""
    Lt = theta.L_t
    out = np.empty((Y.shape[0], theta.K))
    for n in range(Y.shape[0]):
        for k in range(theta.K):
            At, Aw = theta.A[k][:, :Lt], theta.A[k][:, Lt:]
            cw, Gw = theta.c[k][Lt:], theta.Gamma[k][Lt:, Lt:]
            mean = At @ T[n] + Aw @ cw + theta.b[k]
            cov = theta.Sigma[k] + Aw @ Gw @ Aw.T
            lt = naive_log_gauss(T[n], theta.c[k][:Lt], theta.Gamma[k][:Lt, :Lt])
            out[n, k] = math.log(theta.pi[k]) + lt + naive_log_gauss(Y[n], mean, cov)
    return out


def separated_theta(rng, K, D, L_t, L_w=0, noise=0.05, spread=6.0):
    """GLLiM with well-separated t-clusters and isotropic noise of variance ``noise``."""
    L = L_t + L_w
    c = np.zeros((K, L))
    c[:, :L_t] = rng.normal(0, spread, size=(K, L_t))
    if L_t:
        c[:, 0] = spread * np.arange(K)
    Gamma = np.zeros((K, L, L))
    for k in range(K):
        Gamma[k, :L_t, :L_t] = np.eye(L_t) * 0.5
        Gamma[k, L_t:, L_t:] = np.eye(L_w)
    A = rng.normal(0, 1, size=(K, D, L))
    b = rng.normal(0, 2, size=(K, D))
    Sigma = np.broadcast_to(np.eye(D) * noise, (K, D, D)).copy()
    return GLLiMParams(np.full(K, 1.0 / K), c, Gamma, A, b, Sigma, L_t=L_t, L_w=L_w)


def weighted_lstsq(w, X, Y, extra_gram=None):
    """Weighted affine least squares via the augmented normal equations."""
    N, L = X.shape
    Xa = np.hstack([X, np.ones((N, 1))])
    G = Xa.T @ (Xa * w[:, None])
    if extra_gram is not None:
        G[:L, :L] += extra_gram
    coef = np.linalg.inv(G) @ (Xa * w[:, None]).T @ Y
    return coef[:L].T, coef[L]
