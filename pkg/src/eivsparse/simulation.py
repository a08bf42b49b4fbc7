"""Monte Carlo harness: replicated fits, metric tables and their serialization."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, EivError
from .estimators import ESTIMATORS, fit
from .model import (Compensation, EstimatorConfig, TrueModel, generate_dgp, practical_tuning,
                    replication_seed)

WORKERS_ENV = "EIVSPARSE_WORKERS"
CSV_COLUMNS = ("Method", "Lambda", "Bias", "RMSE", "PR", "Feasible", "MeanSeconds")
METHOD_LABELS = {"conic": "Conic", "comp_mu": "CompMU", "mu": "MU",
                 "dantzig_x": "DantzigX", "dantzig_z": "DantzigZ"}


def theta_star_for(choice, p: int) -> np.ndarray:
    """``first``: five ones, ``second``: 1, 1/2, ..., 1/5, otherwise an explicit vector."""
    if isinstance(choice, str):
        if p < 5:
            raise ConfigError("the named theta_star choices need p >= 5")
        theta = np.zeros(p)
        if choice == "first":
            theta[:5] = 1.0
        elif choice == "second":
            theta[:5] = 1.0 / np.arange(1, 6)
        else:
            raise ConfigError(f"theta_star_choice must be 'first', 'second' or a vector, got {choice!r}")
        return theta
    theta = np.asarray(choice, dtype=float).ravel()
    if theta.size != p:
        raise ConfigError(f"theta_star has length {theta.size}, expected p={p}")
    return theta


@dataclass
class SimulationConfig:
    n: int
    p: int
    replications: int = 100
    theta_star_choice: object = "first"
    sigma: float = 0.128
    sigma_star: float = 0.45
    rho: float = 0.25
    epsilon: float = 0.05
    lambdas: tuple = (0.5, 0.75, 1.0)
    estimators: tuple = ("conic", "comp_mu", "dantzig_x", "dantzig_z")
    base_seed: int = 0
    mu: float | None = None  # overrides practical tuning when set
    tau: float | None = None
    keep_estimates: bool = True

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ConfigError("n and p must be positive")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if any(not v > 0 for v in self.lambdas):
            raise ConfigError("lambda values must be positive")
        self.estimators = tuple(self.estimators)
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ConfigError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
        if not isinstance(self.theta_star_choice, str):
            self.theta_star_choice = [float(v) for v in np.ravel(self.theta_star_choice)]
        self.theta_star = theta_star_for(self.theta_star_choice, self.p)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        if not isinstance(d, dict):
            raise ConfigError("simulation config must be a JSON object")
        for key in ("n", "p"):
            if key not in d:
                raise ConfigError(f"missing config field '{key}'")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambdas"] = list(self.lambdas)
        out["estimators"] = list(self.estimators)
        return out

    def tuning(self):
        mu, tau = practical_tuning(self.epsilon, self.n, self.p, self.sigma)
        return (mu if self.mu is None else self.mu, tau if self.tau is None else self.tau)

    def variants(self):
        """``(estimator, lambda)`` pairs, ``lambda`` is None except for the conic fits."""
        out = []
        for e in self.estimators:
            if e == "conic":
                out.extend(("conic", lam) for lam in self.lambdas)
            else:
                out.append((e, None))
        return out


def compute_metrics(theta_hats, Xs, theta_star):
    """Bias, RMSE and prediction risk over replications.

    ``bias = |mean(theta_hat) - theta*|_2``,
    ``rmse = sqrt(mean |theta_hat - theta*|_2^2)`` and
    ``pr = sqrt(mean |X (theta_hat - theta*)|_2^2 / n)``.
    """
    T = np.atleast_2d(np.asarray(theta_hats, dtype=float))
    if T.shape[0] == 0 or len(Xs) != T.shape[0]:
        raise ValueError("need one design per estimate and at least one record")
    E = T - np.asarray(theta_star, dtype=float)
    pred = [float(np.sum((X @ e) ** 2)) / X.shape[0] for X, e in zip(Xs, E)]
    return _aggregate(E, np.sum(E ** 2, axis=1), np.asarray(pred))


def _aggregate(errors, sq_err, pred_err):
    bias = float(np.linalg.norm(np.mean(errors, axis=0)))
    rmse = math.sqrt(float(np.mean(sq_err)))
    pr = math.sqrt(float(np.mean(pred_err)))
    return bias, rmse, pr


@dataclass
class MetricsRow:
    method: str
    lam: float | None
    bias: float
    rmse: float
    pr: float
    feasible: int
    failed: int
    mean_seconds: float
    records: list = field(default_factory=list)

    @property
    def label(self):
        name = METHOD_LABELS.get(self.method, self.method)
        return f"{name}({self.lam:g})" if self.lam is not None else name

    def sq_errors(self) -> np.ndarray:
        return np.array([r["sq_err"] for r in self.records if r["ok"]])

    def rmse_stderr(self) -> float:
        e2 = self.sq_errors()
        if e2.size < 2 or self.rmse == 0:
            return 0.0
        return float(np.std(e2, ddof=1) / (2 * self.rmse * math.sqrt(e2.size)))


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def row(self, method, lam=None) -> MetricsRow:
        for r in self.rows:
            if r.method == method and (lam is None or r.lam == float(lam)):
                return r
        raise KeyError((method, lam))

    def aggregates(self):
        return [(r.method, r.lam, r.bias, r.rmse, r.pr, r.feasible, r.failed, r.mean_seconds)
                for r in self.rows]

    def rmse_gap_stderr(self, a: MetricsRow, b: MetricsRow) -> float:
        """Delta-method standard error of ``rmse(a) - rmse(b)`` on paired replications."""
        ok = [i for i, (ra, rb) in enumerate(zip(a.records, b.records)) if ra["ok"] and rb["ok"]]
        if len(ok) < 2:
            return 0.0
        ea = np.array([a.records[i]["sq_err"] for i in ok]) / (2 * max(a.rmse, 1e-300))
        eb = np.array([b.records[i]["sq_err"] for i in ok]) / (2 * max(b.rmse, 1e-300))
        return float(np.std(ea - eb, ddof=1) / math.sqrt(len(ok)))


def _replication(args):
    cfg, r = args
    model = TrueModel(theta_star=cfg.theta_star, sigma=cfg.sigma, sigma_star=cfg.sigma_star,
                      rho=cfg.rho, seed=replication_seed(cfg.base_seed, r))
    data = generate_dgp(model, cfg.n, cfg.p)
    comp = Compensation.known(cfg.sigma_star, cfg.p)
    mu, tau = cfg.tuning()
    out = []
    for method, lam in cfg.variants():
        est_cfg = EstimatorConfig(mu=mu, tau=tau, lam=lam if lam is not None else 1.0)
        t0 = time.perf_counter()
        try:
            res = fit(method, data, comp, est_cfg)
        except EivError as exc:
            out.append({"rep": r, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                        "seconds": time.perf_counter() - t0})
            continue
        secs = time.perf_counter() - t0
        e = res.theta_hat - cfg.theta_star
        out.append({"rep": r, "ok": True, "seconds": secs,
                    "theta_hat": [float(v) for v in res.theta_hat],
                    "sq_err": float(e @ e),
                    "pred_err": float(np.sum((data.X_opt @ e) ** 2)) / cfg.n})
    return out


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc


def run_monte_carlo(cfg: SimulationConfig, workers: int | None = None) -> MetricsTable:
    """Replicate the data generating process and fit every requested estimator.

    Replication ``r`` draws from its own Philox stream keyed by
    ``(base_seed, r)`` and results are reduced in replication order, so the
    aggregates do not depend on ``workers``.  Failed fits are kept as records,
    excluded from the aggregates and counted in ``failed``.
    """
    workers = worker_count() if workers is None else workers
    jobs = [(cfg, r) for r in range(cfg.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_replication, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        per_rep = [_replication(j) for j in jobs]
    rows = []
    for k, (method, lam) in enumerate(cfg.variants()):
        recs = [rep[k] for rep in per_rep]
        good = [rec for rec in recs if rec["ok"]]
        if good:
            E = np.array([rec["theta_hat"] for rec in good]) - cfg.theta_star
            bias, rmse, pr = _aggregate(E, np.array([rec["sq_err"] for rec in good]),
                                        np.array([rec["pred_err"] for rec in good]))
            secs = float(np.mean([rec["seconds"] for rec in good]))
        else:
            bias = rmse = pr = secs = math.nan
        if not cfg.keep_estimates:
            recs = [{k2: v for k2, v in rec.items() if k2 != "theta_hat"} for rec in recs]
        rows.append(MetricsRow(method=method, lam=lam, bias=bias, rmse=rmse, pr=pr,
                               feasible=len(good), failed=len(recs) - len(good),
                               mean_seconds=secs, records=recs))
    return MetricsTable(rows=rows, config=cfg.to_dict())


@dataclass
class RateScan:
    n_list: list
    rmse: list
    slope: float | None
    tables: list = field(default_factory=list)


def rate_scan(cfg: SimulationConfig, n_list, method: str = "conic", lam: float | None = None,
              workers: int | None = None) -> RateScan:
    """RMSE of one estimator across sample sizes and the log-log slope in ``n``."""
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing")
    if method == "conic" and lam is None:
        lam = cfg.lambdas[0]
    rmses, tables = [], []
    for n in n_list:
        d = cfg.to_dict()
        d["n"] = n
        d["estimators"] = [method]
        if method == "conic":
            d["lambdas"] = [lam]
        table = run_monte_carlo(SimulationConfig.from_dict(d), workers=workers)
        tables.append(table)
        rmses.append(table.rows[0].rmse)
    slope = None
    if len(n_list) > 1:
        slope = float(np.polyfit(np.log(n_list), np.log(rmses), 1)[0])
    return RateScan(n_list=n_list, rmse=rmses, slope=slope, tables=tables)


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def emit(table: MetricsTable, fmt: str = "csv") -> bytes:
    """Serialize a table.  CSV carries the aggregates, JSON also the records."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in table.rows:
            w.writerow([METHOD_LABELS.get(r.method, r.method), _fmt(r.lam), _fmt(r.bias),
                        _fmt(r.rmse), _fmt(r.pr), r.feasible, _fmt(r.mean_seconds)])
        return buf.getvalue().encode()
    if fmt == "json":
        doc = {"config": table.config,
               "rows": [{"method": r.method, "lambda": r.lam, "bias": r.bias, "rmse": r.rmse,
                         "pr": r.pr, "feasible": r.feasible, "failed": r.failed,
                         "mean_seconds": r.mean_seconds, "records": r.records}
                        for r in table.rows]}
        return json.dumps(doc, indent=1).encode()
    raise ValueError(f"unknown format {fmt!r}")


def load_json(data) -> MetricsTable:
    doc = json.loads(data)
    rows = [MetricsRow(method=r["method"], lam=r["lambda"], bias=r["bias"], rmse=r["rmse"],
                       pr=r["pr"], feasible=r["feasible"], failed=r["failed"],
                       mean_seconds=r["mean_seconds"], records=r["records"])
            for r in doc["rows"]]
    return MetricsTable(rows=rows, config=doc.get("config", {}))


def load_csv(data) -> list:
    """Parse CSV output back into dicts with numeric fields restored."""
    text = data.decode() if isinstance(data, bytes) else data
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append({
            "Method": rec["Method"],
            "Lambda": float(rec["Lambda"]) if rec["Lambda"] else None,
            "Bias": float(rec["Bias"]), "RMSE": float(rec["RMSE"]), "PR": float(rec["PR"]),
            "Feasible": int(rec["Feasible"]), "MeanSeconds": float(rec["MeanSeconds"]),
        })
    return out
