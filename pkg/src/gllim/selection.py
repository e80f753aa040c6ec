"""Free-parameter counts, BIC, and BIC-driven choice of the latent dimension."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._io import atomic_write_text, csv_text
from .errors import FitFailure, GLLiMError, ShapeError, UnsupportedConfiguration
from .model import GAMMA_DEFAULT, SIGMA_DEFAULT, ConstraintSpec

logger = logging.getLogger(__name__)

DIRECTIONS = ("low-to-high", "high-to-low")


def _as_spec(c):
    return ConstraintSpec.parse(c) if isinstance(c, str) else c


def covariance_count(spec, P, K, *, shared_iso_free=False):
    """Free entries of K covariance matrices of size P under ``spec``.

    ``shared_iso_free`` reproduces the published counts, which leave out the
    one variance of a shared isotropic noise model.
    """
    spec = _as_spec(spec)
    if spec.fixed or P == 0:
        return 0
    per = {"full": P * (P + 1) // 2, "diagonal": P, "isotropic": 1}.get(spec.structure)
    if per is None:
        raise UnsupportedConfiguration(f"no parameter count for structure {spec.structure!r}")
    if spec.shared:
        if spec.structure == "isotropic" and shared_iso_free:
            return 0
        return per
    return K * per


def parameter_count(
    K,
    D,
    L_t,
    L_w=0,
    sigma_constraint=SIGMA_DEFAULT,
    gamma_constraint=GAMMA_DEFAULT,
    direction="low-to-high",
):
    """Size of the parameter vector for a (hybrid) GLLiM configuration.

    Low-to-high counts priors, observed means c^t, Gamma^t, A = [A^t | A^w],
    b and Sigma; the latent prior (c^w, Gamma^w) is fixed and not counted.
    High-to-low counts a model regressing the L-dimensional variable on the
    D-dimensional one directly (Gamma of size D, Sigma of size L).
    """
    if min(K, D) < 1 or min(L_t, L_w) < 0:
        raise ShapeError("need K, D >= 1 and L_t, L_w >= 0")
    if direction not in DIRECTIONS:
        raise UnsupportedConfiguration(f"unknown direction {direction!r}")
    sigma_constraint, gamma_constraint = _as_spec(sigma_constraint), _as_spec(gamma_constraint)
    L = L_t + L_w
    if direction == "low-to-high":
        core = K * (1 + L_t + D * L + D)
        return (
            core
            + covariance_count(gamma_constraint, L_t, K)
            + covariance_count(sigma_constraint, D, K, shared_iso_free=True)
        )
    core = K * (1 + D + L * D + L)
    return (
        core
        + covariance_count(gamma_constraint, D, K)
        + covariance_count(sigma_constraint, L, K, shared_iso_free=True)
    )


def theta_parameter_count(theta):
    return parameter_count(
        theta.K, theta.D, theta.L_t, theta.L_w, theta.constraint_sigma, theta.constraint_gamma
    )


def bic(theta, loglik, N, param_count=None):
    """-2 loglik + (free parameters) log N."""
    if N < 1:
        raise ValueError("N must be positive")
    p = theta_parameter_count(theta) if param_count is None else param_count
    return -2.0 * loglik + p * math.log(N)


@dataclass
class CandidateRecord:
    L_w: int
    bic: float = math.inf
    loglik: float = -math.inf
    param_count: int = 0
    iterations: int = 0
    K_effective: int = 0
    report: object = None
    theta: object = None
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class SelectionResult:
    records: list = field(default_factory=list)
    chosen_lw: int | None = None
    theta: object = None

    def record(self, L_w):
        return next(r for r in self.records if r.L_w == L_w)

    def to_csv(self):
        header = ["L_w", "loglik", "param_count", "bic", "iterations", "K_effective", "chosen"]
        rows = [
            [r.L_w, float(r.loglik), r.param_count, float(r.bic), r.iterations, r.K_effective,
             r.L_w == self.chosen_lw]
            for r in self.records
        ]
        return csv_text(header, rows)

    def write_csv(self, path):
        atomic_write_text(path, self.to_csv())


def candidate_seed(base_seed, L_w):
    """Deterministic per-candidate seed from (base seed, L_w)."""
    return int(np.random.SeedSequence([int(base_seed), int(L_w)]).generate_state(1)[0])


def _fit_candidate(data, base_config, L_w):
    from .em import fit

    cfg = replace(base_config, L_w=L_w, seed=candidate_seed(base_config.seed, L_w))
    rec = CandidateRecord(L_w)
    try:
        theta, report = fit(data, cfg)
    except GLLiMError as exc:
        logger.warning("candidate L_w=%d failed: %s", L_w, exc)
        rec.error = f"{exc.category}: {exc}"
        return rec
    rec.loglik = report.loglik_trace[-1]
    rec.param_count = theta_parameter_count(theta)
    rec.bic = bic(theta, rec.loglik, data.N, rec.param_count)
    rec.iterations = report.iterations
    rec.K_effective = report.K_effective
    rec.report, rec.theta = report, theta
    return rec


def select_lw(data, K, lw_range, base_config=None, threads=1):
    """Fit one model per candidate L_w and keep the BIC minimizer.

    Ties go to the smaller L_w.  Candidates run concurrently when
    ``threads > 1``; results are keyed on L_w so the outcome does not depend
    on completion order.
    """
    from .em import FitConfig

    lws = sorted(set(int(v) for v in lw_range))
    if not lws:
        raise ValueError("lw_range is empty")
    if any(v < 0 or v >= data.D for v in lws):
        raise ShapeError(f"every candidate L_w must lie in [0, D) with D={data.D}")
    cfg = replace(base_config or FitConfig(), K=K)
    if threads > 1 and len(lws) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            recs = list(pool.map(lambda v: _fit_candidate(data, cfg, v), lws))
    else:
        recs = [_fit_candidate(data, cfg, v) for v in lws]
    result = SelectionResult(records=recs)
    ok = [r for r in recs if r.ok]
    if not ok:
        raise FitFailure("every L_w candidate failed: " + "; ".join(r.error for r in recs))
    best = min(ok, key=lambda r: (r.bic, r.L_w))
    result.chosen_lw, result.theta = best.L_w, best.theta
    return result


__all__ = [
    "parameter_count",
    "covariance_count",
    "theta_parameter_count",
    "bic",
    "CandidateRecord",
    "SelectionResult",
    "candidate_seed",
    "select_lw",
]
