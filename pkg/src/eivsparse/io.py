"""CSV/JSON file plumbing for the command line."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError
from .estimators import ESTIMATORS, FitResult, fit
from .model import Compensation, Dataset, EstimatorConfig, practical_tuning


def read_matrix_csv(path, ndim: int = 2) -> np.ndarray:
    """Numeric comma-separated file without header.  ``ndim=1`` flattens a column."""
    try:
        A = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except OSError:
        raise
    except ValueError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if ndim == 1:
        if min(A.shape) != 1:
            raise DimensionError(f"{path} should hold a vector, got shape {A.shape}")
        return A.ravel()
    return A


def write_matrix_csv(path, A) -> None:
    A = np.asarray(A, dtype=float)
    np.savetxt(path, A.reshape(-1, 1) if A.ndim == 1 else A, delimiter=",", fmt="%.17g")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc


def _require(cfg, key):
    if key not in cfg:
        raise ConfigError(f"missing config field '{key}'")
    return cfg[key]


def estimator_setup(cfg: dict, n: int, p: int):
    """Turn a fit config mapping into ``(name, Compensation, EstimatorConfig)``.

    Fields: ``estimator`` (required); either ``mu`` and ``tau`` or ``sigma``
    (practical tuning, with optional ``epsilon``); ``lam``; ``sigma_star`` or
    ``d_hat``; optional ``theta_set`` as ``{"G": [[...]], "h": [...]}``.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("fit config must be a JSON object")
    name = _require(cfg, "estimator")
    if name not in ESTIMATORS:
        raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {name!r}")
    try:
        if "mu" in cfg or "tau" in cfg:
            mu, tau = float(_require(cfg, "mu")), float(_require(cfg, "tau"))
        elif "sigma" in cfg:
            mu, tau = practical_tuning(float(cfg.get("epsilon", 0.05)), n, p, float(cfg["sigma"]))
        else:
            raise ConfigError("missing config field 'tau' (or 'sigma' for practical tuning)")
        if "d_hat" in cfg:
            comp = Compensation(np.asarray(cfg["d_hat"], dtype=float), "estimated")
        else:
            comp = Compensation.known(float(cfg.get("sigma_star", 0.0)), p)
        theta_set = None
        if "theta_set" in cfg:
            ts = cfg["theta_set"]
            theta_set = (np.asarray(_require(ts, "G"), dtype=float),
                         np.asarray(_require(ts, "h"), dtype=float))
        est = EstimatorConfig(mu=mu, tau=tau, lam=float(cfg.get("lam", 1.0)), theta_set=theta_set)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ConfigError, DimensionError)):
            raise
        raise ConfigError(f"invalid fit config: {exc}") from exc
    if comp.d_hat.size != p:
        raise DimensionError(f"d_hat has length {comp.d_hat.size}, expected p={p}")
    return name, comp, est


def fit_from_file(y_path, Z_path, config_path, X_path=None) -> FitResult:
    """Read ``y``, ``Z`` (and optionally ``X``) and fit the configured estimator."""
    cfg = read_json(config_path)
    y = read_matrix_csv(y_path, ndim=1)
    Z = read_matrix_csv(Z_path)
    X = read_matrix_csv(X_path) if X_path else None
    if Z.shape[0] != y.size:
        raise DimensionError(f"y has {y.size} rows but Z has {Z.shape[0]}")
    if X is not None and X.shape != Z.shape:
        raise DimensionError(f"X has shape {X.shape} but Z has {Z.shape}")
    name, comp, est = estimator_setup(cfg, *Z.shape)
    return fit(name, Dataset(y=y, Z=Z, X_opt=X), comp, est)


def write_dataset(directory, data: Dataset) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"y": d / "y.csv", "Z": d / "Z.csv"}
    write_matrix_csv(paths["y"], data.y)
    write_matrix_csv(paths["Z"], data.Z)
    if data.X_opt is not None:
        paths["X"] = d / "X.csv"
        write_matrix_csv(paths["X"], data.X_opt)
    return {k: str(v) for k, v in paths.items()}
