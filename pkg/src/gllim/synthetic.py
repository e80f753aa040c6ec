"""Synthetic high-dimensional function families and the regression benchmark.

Each family maps an observed scalar t in [0, 10] and a hidden w in [-1, 1]^m
to R^D through per-coordinate cosines (and, for f and h, a cubic term in the
last latent coordinate).  The benchmark fits each method on noisy training
pairs and scores forward predictions of t on a disjoint test set.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._io import atomic_write_text, csv_text
from .data import Dataset
from .errors import GLLiMError, ShapeError

logger = logging.getLogger(__name__)

KINDS = ("f", "g", "h")
LATENT_DIM = {"f": 1, "g": 1, "h": 2}
T_RANGE = (0.0, 10.0)
EXTREME_THRESHOLD = (T_RANGE[1] - T_RANGE[0]) / 3.0


@dataclass(frozen=True)
class SyntheticFunctionSpec:
    """Coefficients of one random function; unused ones are ``None``."""

    kind: str
    D: int
    alpha: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    beta: np.ndarray | None
    gamma: np.ndarray | None
    seed: int | None = None

    @property
    def latent_dim(self):
        return LATENT_DIM[self.kind]


def gen_function(kind, D, seed):
    """Draw alpha in [0,2], eta in [0,4pi], phi in [0,2pi], beta in [0,pi], gamma in [0,2]."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if D < 1:
        raise ValueError("D must be positive")
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0, 2, D)
    eta = rng.uniform(0, 4 * np.pi, D)
    phi = rng.uniform(0, 2 * np.pi, D)
    beta = rng.uniform(0, np.pi, D)
    gamma = rng.uniform(0, 2, D)
    return SyntheticFunctionSpec(
        kind,
        D,
        alpha,
        eta,
        phi,
        None if kind == "f" else beta,
        None if kind == "g" else gamma,
        seed,
    )


def evaluate_function(spec, t, w):
    """Evaluate the function at scalar/array ``t`` and latent ``w``.

    ``t`` of shape (N,) with ``w`` of shape (N, m) gives an (N, D) array; a
    scalar ``t`` with an m-vector ``w`` gives a D-vector.
    """
    t_arr = np.asarray(t, dtype=float)
    w_arr = np.asarray(w, dtype=float)
    single = t_arr.ndim == 0
    t_arr = t_arr.reshape(-1)
    w_arr = w_arr.reshape(t_arr.shape[0], -1) if w_arr.size else w_arr.reshape(t_arr.shape[0], 0)
    if w_arr.shape[1] != spec.latent_dim:
        raise ShapeError(f"{spec.kind} needs w of dimension {spec.latent_dim}, got {w_arr.shape[1]}")
    arg = np.outer(t_arr / 10.0, spec.eta) + spec.phi
    if spec.kind in ("g", "h"):
        arg = arg + np.outer(w_arr[:, 0], spec.beta)
    out = spec.alpha * np.cos(arg)
    if spec.kind in ("f", "h"):
        out = out + np.outer(w_arr[:, -1] ** 3, spec.gamma)
    return out[0] if single else out


def noise_scale(signal, E, snr_db, reference="signal"):
    """Scale s so that s*E realizes ``snr_db`` exactly over the whole set.

    ``reference="signal"`` measures the clean function values; the
    alternative ``"observation"`` measures the noisy y = f + s E.
    """
    F = float(np.sum(signal**2))
    G = float(np.sum(E**2))
    R = 10.0 ** (snr_db / 10.0)
    if reference == "signal":
        return math.sqrt(F / (R * G))
    if reference == "observation":
        if R <= 1:
            raise ValueError("observation-referenced SNR must exceed 0 dB")
        X = float(np.sum(signal * E))
        a, bq, cq = G * (R - 1.0), -2.0 * X, -F
        return (-bq + math.sqrt(bq * bq - 4 * a * cq)) / (2 * a)
    raise ValueError(f"unknown SNR reference {reference!r}")


def sample_dataset(spec, N, snr_db, seed, snr_reference="signal"):
    """Draw t ~ U[0,10], w ~ U[-1,1]^m and y = f(t, w) + isotropic noise.

    ``snr_db = inf`` gives noise-free observations.
    """
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    t = rng.uniform(*T_RANGE, size=N)
    w = rng.uniform(-1.0, 1.0, size=(N, spec.latent_dim))
    signal = evaluate_function(spec, t, w)
    E = rng.standard_normal(signal.shape)
    if math.isinf(snr_db) and snr_db > 0:
        Y = signal.copy()
    else:
        Y = signal + noise_scale(signal, E, snr_db, snr_reference) * E
    return Dataset(t[:, None], Y, w)


def realized_snr_db(signal, noise):
    return 10.0 * math.log10(float(np.sum(signal**2)) / float(np.sum(noise**2)))


@dataclass
class Metrics:
    avg: float
    std: float
    extreme_rate: float
    nrmse: np.ndarray
    n: int = 0

    def as_row(self):
        return [self.avg, self.std, self.extreme_rate]


def compute_metrics(predictions, truth, extreme_threshold=EXTREME_THRESHOLD):
    """Absolute-error mean/std, rate of errors strictly above the threshold, NRMSE."""
    pred = np.asarray(predictions, dtype=float)
    true = np.asarray(truth, dtype=float)
    if pred.shape != true.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {true.shape}")
    if true.ndim == 1:
        pred, true = pred[:, None], true[:, None]
    if true.shape[0] < 2:
        raise ShapeError("need at least two samples")
    err = np.abs(pred - true)
    centered = true - np.mean(true, axis=0)
    den = np.sum(centered**2, axis=0)
    if np.any(den == 0):
        raise ValueError("NRMSE is undefined for a constant truth vector")
    nrmse = np.sqrt(np.sum((pred - true) ** 2, axis=0) / den)
    return Metrics(
        float(err.mean()),
        float(err.std()),
        float(np.mean(err > extreme_threshold)),
        nrmse,
        int(err.size),
    )


# -- benchmark ------------------------------------------------------------------


@dataclass
class BenchmarkConfig:
    kind: str = "f"
    n_functions: int = 10
    D: int = 50
    N: int = 200
    N_test: int = 200
    snr_db: float = 6.0
    K: int = 5
    lw_list: tuple = (0, 1)
    seed: int = 0
    include_jgmm: bool = False
    bic_range: tuple | None = None
    sigma: str = "iso,shared"
    gamma: str = "full"
    max_iter: int = 200
    rel_tol: float = 1e-6
    snr_reference: str = "signal"
    threads: int = 1


def method_name(L_w):
    return "MLE" if L_w == 0 else f"hGLLiM-{L_w}"


def _trial_seeds(seed, n):
    seqs = np.random.SeedSequence(int(seed)).spawn(n)
    return [tuple(int(v) for v in s.generate_state(4)) for s in seqs]


def _fit_config(cfg, L_w, seed):
    from .em import FitConfig

    return FitConfig(
        K=cfg.K, L_w=L_w, sigma=cfg.sigma, gamma=cfg.gamma, max_iter=cfg.max_iter,
        rel_tol=cfg.rel_tol, seed=seed % (2**31),
    )


def fit_jgmm(train, K, seed, reg_covar=1e-6):
    """Joint Gaussian mixture on [t; y], converted to a GLLiM with L_w = 0."""
    from sklearn.mixture import GaussianMixture

    from .model import JointGMMParams, from_joint_gmm

    Z = np.hstack([train.T, train.Y])
    gm = GaussianMixture(K, covariance_type="full", reg_covar=reg_covar, random_state=seed % (2**31))
    gm.fit(Z)
    psi = JointGMMParams(gm.weights_, gm.means_, gm.covariances_)
    return from_joint_gmm(psi, train.L_t)


def _run_trial(cfg, idx, seeds):
    from .em import fit
    from .model import forward_expectation
    from .selection import select_lw

    f_seed, tr_seed, te_seed, fit_seed = seeds
    spec = gen_function(cfg.kind, cfg.D, f_seed)
    train = sample_dataset(spec, cfg.N, cfg.snr_db, tr_seed, cfg.snr_reference)
    test = sample_dataset(spec, cfg.N_test, cfg.snr_db, te_seed, cfg.snr_reference)
    out = {"trial": idx, "errors": {}, "failures": {}, "chosen_lw": None}

    def score(name, theta):
        t_hat = forward_expectation(theta, test.Y)[:, : test.L_t]
        out["errors"][name] = np.abs(t_hat - test.T).ravel()

    for L_w in cfg.lw_list:
        name = method_name(L_w)
        try:
            theta, _ = fit(train, _fit_config(cfg, L_w, fit_seed))
            score(name, theta)
        except GLLiMError as exc:
            out["failures"][name] = str(exc)
    if cfg.bic_range:
        try:
            res = select_lw(train, cfg.K, cfg.bic_range, _fit_config(cfg, 0, fit_seed))
            out["chosen_lw"] = res.chosen_lw
            score("hGLLiM-BIC", res.theta)
        except GLLiMError as exc:
            out["failures"]["hGLLiM-BIC"] = str(exc)
    if cfg.include_jgmm:
        try:
            score("JGMM", fit_jgmm(train, cfg.K, fit_seed))
        except (GLLiMError, ValueError, np.linalg.LinAlgError) as exc:
            out["failures"]["JGMM"] = str(exc)
    return out


@dataclass
class BenchmarkRow:
    method: str
    function_kind: str
    avg: float
    std: float
    extreme_rate: float
    n_trials: int
    n_failures: int


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    rows: list = field(default_factory=list)
    trials: list = field(default_factory=list)

    def row(self, method):
        return next(r for r in self.rows if r.method == method)

    def to_csv(self):
        header = ["method", "function_kind", "avg", "std", "extreme_rate", "n_trials", "n_failures"]
        return csv_text(header, [list(asdict(r).values()) for r in self.rows])

    def manifest(self):
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "trial_seeds": [list(s) for s in _trial_seeds(self.config.seed, self.config.n_functions)],
            "chosen_lw": [t["chosen_lw"] for t in self.trials],
            "failures": {str(t["trial"]): t["failures"] for t in self.trials if t["failures"]},
        }

    def write(self, csv_path, manifest_path):
        atomic_write_text(csv_path, self.to_csv())
        atomic_write_text(manifest_path, json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")


def run_benchmark(config=None, **overrides):
    """Fit every configured method on ``n_functions`` random functions.

    Errors are pooled over all test points of all functions before computing
    Avg / Std / Ex.
    """
    cfg = replace(config or BenchmarkConfig(), **overrides)
    if min(cfg.n_functions, cfg.D, cfg.N, cfg.N_test, cfg.K) < 1:
        raise ValueError("all counts must be >= 1")
    seeds = _trial_seeds(cfg.seed, cfg.n_functions)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            trials = list(pool.map(lambda a: _run_trial(cfg, *a), enumerate(seeds)))
    else:
        trials = [_run_trial(cfg, i, s) for i, s in enumerate(seeds)]
    trials.sort(key=lambda t: t["trial"])
    methods = [method_name(v) for v in cfg.lw_list]
    if cfg.bic_range:
        methods.append("hGLLiM-BIC")
    if cfg.include_jgmm:
        methods.append("JGMM")
    report = BenchmarkReport(cfg, trials=trials)
    for m in methods:
        errs = [t["errors"][m] for t in trials if m in t["errors"]]
        n_fail = sum(1 for t in trials if m in t["failures"])
        if errs:
            e = np.concatenate(errs)
            row = BenchmarkRow(m, cfg.kind, float(e.mean()), float(e.std()),
                               float(np.mean(e > EXTREME_THRESHOLD)), len(errs), n_fail)
        else:
            row = BenchmarkRow(m, cfg.kind, math.nan, math.nan, math.nan, 0, n_fail)
        report.rows.append(row)
    return report


__all__ = [
    "SyntheticFunctionSpec",
    "gen_function",
    "evaluate_function",
    "sample_dataset",
    "noise_scale",
    "realized_snr_db",
    "Metrics",
    "compute_metrics",
    "BenchmarkConfig",
    "BenchmarkReport",
    "run_benchmark",
    "fit_jgmm",
]
