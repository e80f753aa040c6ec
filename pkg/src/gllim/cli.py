"""Command-line front end: ``gllim {fit,predict,select-lw,bench}``.

Inputs are headerless numeric CSV (``--header`` skips one line).  Every
output file is written to a temporary sibling and renamed into place.  On
failure a one-line JSON error record goes to stderr and the exit status is 1.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, csv_text
from .data import Standardizer, load_dataset, read_csv_matrix
from .errors import GLLiMError, ShapeError

logger = logging.getLogger("gllim")

THREADS_ENV = "GLLIM_THREADS"
EXIT_OK, EXIT_FAILURE = 0, 1


@dataclass
class RunConfig:
    """Parameters of one CLI invocation; round-trips through JSON."""

    command: str = "fit"
    train_t: str | None = None
    train_y: str | None = None
    y: str | None = None
    model: str | None = None
    out: str | None = None
    K: int = 5
    lw: int = 0
    lw_range: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    sigma_constraint: str = "iso,shared"
    seed: int = 0
    max_iter: int = 200
    tol: float = 1e-6
    standardize: bool = False
    header: bool = False
    threads: int = 1
    # bench
    kind: str = "f"
    n_functions: int = 10
    D: int = 50
    N: int = 200
    n_test: int = 200
    snr: float = 6.0
    lw_list: list = field(default_factory=lambda: [0, 1])
    bic_range: list | None = None
    jgmm: bool = False
    manifest: str | None = None

    def validate(self):
        if self.K < 1 or self.lw < 0 or self.max_iter < 1 or self.threads < 1:
            raise ValueError("need K >= 1, --lw >= 0, --max-iter >= 1, --threads >= 1")
        if not self.tol >= 0:
            raise ValueError("--tol must be non-negative")
        required = {
            "fit": ["train_y", "out"],
            "predict": ["model", "y", "out"],
            "select-lw": ["train_y", "out"],
            "bench": ["out"],
        }[self.command]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
        for name in ("train_t", "train_y", "y", "model"):
            path = getattr(self, name)
            if path is not None and not (name == "model" and self.command != "predict"):
                if not Path(path).is_file():
                    raise FileNotFoundError(f"--{name.replace('_', '-')}: no such file {path}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def parse_int_list(text):
    """'0-4' -> [0..4]; '0,2,3' -> [0, 2, 3]."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty integer list {text!r}")
    return out


def default_threads():
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def build_parser():
    p = argparse.ArgumentParser(prog="gllim", description="Hybrid GLLiM fitting and prediction.")
    p.add_argument("--config", help="JSON file with default values for any option")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help=f"parallelism cap (default ${THREADS_ENV} or 1)")
        sp.add_argument("--out")

    def training(sp):
        sp.add_argument("--train-t", dest="train_t")
        sp.add_argument("--train-y", dest="train_y")
        sp.add_argument("-K", type=int)
        sp.add_argument("--sigma-constraint", dest="sigma_constraint")
        sp.add_argument("--max-iter", dest="max_iter", type=int)
        sp.add_argument("--tol", type=float)
        sp.add_argument("--standardize", action="store_true", default=None)
        sp.add_argument("--header", action="store_true", default=None)

    sp = sub.add_parser("fit", help="fit a model and write it as JSON")
    training(sp)
    common(sp)
    sp.add_argument("--lw", type=int)

    sp = sub.add_parser("predict", help="predict t from y with a saved model")
    common(sp)
    sp.add_argument("--model")
    sp.add_argument("--y")
    sp.add_argument("--header", action="store_true", default=None)

    sp = sub.add_parser("select-lw", help="choose L_w by BIC")
    training(sp)
    common(sp)
    sp.add_argument("--lw-range", dest="lw_range", type=parse_int_list)
    sp.add_argument("--model", help="also save the chosen model here")

    sp = sub.add_parser("bench", help="synthetic regression benchmark")
    common(sp)
    sp.add_argument("--kind", choices=["f", "g", "h"])
    sp.add_argument("--n-functions", dest="n_functions", type=int)
    sp.add_argument("-D", type=int)
    sp.add_argument("-N", type=int)
    sp.add_argument("--n-test", dest="n_test", type=int)
    sp.add_argument("--snr", type=float)
    sp.add_argument("-K", type=int)
    sp.add_argument("--lw", dest="lw_list", type=parse_int_list)
    sp.add_argument("--bic-range", dest="bic_range", type=parse_int_list)
    sp.add_argument("--jgmm", action="store_true", default=None)
    sp.add_argument("--sigma-constraint", dest="sigma_constraint")
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--manifest")
    return p


def config_from_args(argv=None):
    args = build_parser().parse_args(argv)
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    base.setdefault("threads", default_threads())
    base["command"] = args.command
    for key, value in vars(args).items():
        if key in ("config", "verbose", "command") or value is None:
            continue
        base[key] = value
    return RunConfig.from_dict(base), args.verbose


# -- commands --------------------------------------------------------------------


def _fit_config(cfg, L_w):
    from .em import FitConfig

    return FitConfig(
        K=cfg.K, L_w=L_w, sigma=cfg.sigma_constraint, max_iter=cfg.max_iter,
        rel_tol=cfg.tol, seed=cfg.seed,
    )


def _scalers(loaded):
    out = {}
    if loaded.t_scaler is not None:
        out["t_scaler"] = loaded.t_scaler.to_dict()
    if loaded.y_scaler is not None:
        out["y_scaler"] = loaded.y_scaler.to_dict()
    return out


def _model_doc(theta, cfg, loaded, report=None):
    from .model import GLLiMParams

    doc = theta.to_dict()
    doc["standardization"] = _scalers(loaded)
    doc["run_config"] = cfg.to_dict()
    if report is not None:
        doc["fit"] = {
            "iterations": report.iterations,
            "converged": report.converged,
            "K_effective": report.K_effective,
            "final_loglik": report.loglik_trace[-1],
            "final_bic": report.final_bic,
        }
    GLLiMParams.from_dict(doc)  # what we write must reload
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def cmd_fit(cfg):
    from .em import fit

    loaded = load_dataset(cfg.train_t, cfg.train_y, cfg.standardize, cfg.header)
    theta, report = fit(loaded.data, _fit_config(cfg, cfg.lw))
    atomic_write_text(cfg.out, _model_doc(theta, cfg, loaded, report))
    trace_path = Path(cfg.out).with_suffix(".trace.csv")
    rows = [[i, float(ll)] for i, ll in enumerate(report.loglik_trace)]
    atomic_write_text(trace_path, csv_text(["iteration", "loglik"], rows))
    logger.info("fit: %d iterations, loglik %.6g, K=%d", report.iterations, report.loglik_trace[-1], report.K_effective)


def cmd_predict(cfg):
    from .model import forward_expectation, load_model

    theta, doc = load_model(cfg.model)
    Y = read_csv_matrix(cfg.y, cfg.header)
    if Y.shape[1] != theta.D:
        raise ShapeError(f"model expects D={theta.D} columns, {cfg.y} has {Y.shape[1]}")
    scalers = doc.get("standardization", {})
    if "y_scaler" in scalers:
        Y = Standardizer.from_dict(scalers["y_scaler"]).transform(Y)
    pred = forward_expectation(theta, Y, return_details=True)
    T = pred.t
    if "t_scaler" in scalers:
        T = Standardizer.from_dict(scalers["t_scaler"]).inverse(T)
    n_bad = int(np.sum(pred.degenerate))
    if n_bad:
        logger.warning("%d queries were degenerate and fell back to the nearest component", n_bad)
    atomic_write_text(cfg.out, _plain_csv(T))


def _plain_csv(M):
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in M)


def cmd_select_lw(cfg):
    from .selection import select_lw

    loaded = load_dataset(cfg.train_t, cfg.train_y, cfg.standardize, cfg.header)
    res = select_lw(loaded.data, cfg.K, cfg.lw_range, _fit_config(cfg, 0), threads=cfg.threads)
    res.write_csv(cfg.out)
    if cfg.model:
        atomic_write_text(cfg.model, _model_doc(res.theta, cfg, loaded))
    logger.info("select-lw: chose L_w=%d", res.chosen_lw)


def cmd_bench(cfg):
    from .synthetic import BenchmarkConfig, run_benchmark

    bc = BenchmarkConfig(
        kind=cfg.kind, n_functions=cfg.n_functions, D=cfg.D, N=cfg.N, N_test=cfg.n_test,
        snr_db=cfg.snr, K=cfg.K, lw_list=tuple(cfg.lw_list), seed=cfg.seed,
        include_jgmm=cfg.jgmm, bic_range=tuple(cfg.bic_range) if cfg.bic_range else None,
        sigma=cfg.sigma_constraint, max_iter=cfg.max_iter, rel_tol=cfg.tol, threads=cfg.threads,
    )
    report = run_benchmark(bc)
    manifest = cfg.manifest or str(Path(cfg.out).with_suffix(".manifest.json"))
    report.write(cfg.out, manifest)


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "select-lw": cmd_select_lw, "bench": cmd_bench}


def error_record(exc):
    rec = {
        "error": getattr(exc, "category", type(exc).__name__),
        "message": str(exc),
    }
    for attr in ("component", "iteration", "path", "line"):
        value = getattr(exc, attr, None)
        if value is not None:
            rec[attr] = value if isinstance(value, (int, float)) else str(value)
    return rec


def main(argv=None):
    try:
        cfg, verbose = config_from_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValueError, OSError) as exc:
        print(json.dumps(error_record(exc)), file=sys.stderr)
        return EXIT_FAILURE
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg.validate()
        COMMANDS[cfg.command](cfg)
    except (GLLiMError, ValueError, OSError) as exc:
        print(json.dumps(error_record(exc)), file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
