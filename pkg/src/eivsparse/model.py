"""Data containers, the Gaussian errors-in-variables generator, missing-data
rescaling and the two tuning rules for ``(mu, tau)``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

KNOWN = "known"
ESTIMATED = "estimated"
ZERO = "zero"
COMPENSATION_MODES = (KNOWN, ESTIMATED, ZERO)


@dataclass
class Dataset:
    """Observed response ``y``, noisy design ``Z`` and, for oracle fits and
    prediction metrics only, the true design ``X_opt``."""

    y: np.ndarray
    Z: np.ndarray
    X_opt: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if self.Z.shape[0] < 1 or self.Z.shape[1] < 1:
            raise DimensionError("Z must have at least one row and one column")
        if self.y.size != self.Z.shape[0]:
            raise DimensionError(
                f"y has length {self.y.size} but Z has {self.Z.shape[0]} rows")
        if self.X_opt is not None:
            self.X_opt = np.atleast_2d(np.asarray(self.X_opt, dtype=float))
            if self.X_opt.shape != self.Z.shape:
                raise DimensionError(
                    f"X_opt has shape {self.X_opt.shape}, Z has {self.Z.shape}")

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


@dataclass
class TrueModel:
    theta_star: np.ndarray
    sigma: float
    sigma_star: float
    rho: float = 0.0
    seed: int = 0
    Sigma: np.ndarray | None = None  # dense PSD override of the AR(1) covariance

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float).ravel()
        if self.sigma < 0 or self.sigma_star < 0:
            raise ValueError("noise levels must be nonnegative")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")


@dataclass
class MissingDataSample:
    Z_tilde: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        self.Z_tilde = np.atleast_2d(np.asarray(self.Z_tilde, dtype=float))
        self.pi = np.asarray(self.pi, dtype=float).ravel()
        if self.pi.size != self.Z_tilde.shape[1]:
            raise DimensionError("pi must have one entry per column of Z_tilde")


@dataclass
class Compensation:
    """Diagonal ``D_hat`` of estimated per-column noise variances."""

    d_hat: np.ndarray
    mode: str = KNOWN

    def __post_init__(self):
        self.d_hat = np.asarray(self.d_hat, dtype=float).ravel()
        if self.mode not in COMPENSATION_MODES:
            raise ValueError(f"mode must be one of {COMPENSATION_MODES}")
        if np.any(self.d_hat < 0):
            raise ValueError("d_hat entries must be nonnegative")

    @classmethod
    def known(cls, sigma_star: float, p: int) -> "Compensation":
        """``D_hat = D = sigma_star^2 I``."""
        return cls(np.full(p, float(sigma_star) ** 2), KNOWN)

    @classmethod
    def zero(cls, p: int) -> "Compensation":
        return cls(np.zeros(p), ZERO)


@dataclass
class TuningConstants:
    """Constants entering the theoretical ``(mu, tau)``.

    ``gamma0, t0`` control the sub-exponential tails of products of noise
    entries, ``gamma2, t2`` those of the off-diagonal ``W'W`` terms,
    ``c_b, c_b_prime`` the accuracy of estimated variances and ``m2`` the
    largest column second moment of the design.
    """

    epsilon: float
    gamma0: float
    t0: float
    gamma2: float
    t2: float
    c_b: float = 1.0
    c_b_prime: float = 1.0
    m2: float = 1.0

    def __post_init__(self):
        for name in ("gamma0", "t0", "gamma2", "t2", "c_b", "c_b_prime", "m2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    @classmethod
    def default(cls, sigma: float, sigma_star: float, epsilon: float = 0.05,
                m2: float = 1.0, **overrides) -> "TuningConstants":
        """Scale-correct defaults for products of Gaussian noise entries."""
        g = sigma * sigma_star + sigma_star ** 2
        top = max(sigma, sigma_star)
        t = 1.0 / (2.0 * top ** 2) if top > 0 else 1.0
        if g <= 0:
            g = 1.0
        kw = dict(epsilon=epsilon, gamma0=g, t0=t, gamma2=g, t2=t, m2=m2)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class EstimatorConfig:
    """Tuning triple and optional polyhedral parameter set ``G theta <= h``."""

    mu: float
    tau: float
    lam: float = 1.0
    theta_set: tuple | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.mu < 0 or self.tau < 0:
            raise ValueError("mu and tau must be nonnegative")
        if self.theta_set is not None:
            G, h = self.theta_set
            G = np.atleast_2d(np.asarray(G, dtype=float))
            h = np.asarray(h, dtype=float).ravel()
            if G.shape[0] != h.size:
                raise DimensionError("theta_set G and h disagree in row count")
            self.theta_set = (G, h)


# ---------------------------------------------------------------------------
# random number streams
# ---------------------------------------------------------------------------

def make_rng(seed: int, index: int | None = None) -> np.random.Generator:
    """Counter-based Philox stream; ``index`` selects an independent
    substream so replication ``r`` never depends on worker scheduling."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    if index is not None:
        words.append(int(index))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def replication_seed(base_seed: int, index: int) -> int:
    """Mix ``(base_seed, index)`` into a 64-bit seed."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def ar1_covariance(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _psd_sqrt(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        if w.min() < -1e-10 * max(1.0, w.max()):
            raise ValueError("Sigma is not positive semidefinite")
        return V * np.sqrt(np.clip(w, 0.0, None))


def generate_dgp(true_model: TrueModel, n: int, p: int) -> Dataset:
    """Draw ``y = X theta* + xi`` and ``Z = X + W`` with Gaussian rows.

    Rows of ``X`` are ``N(0, Sigma)`` with ``Sigma_ij = rho^|i-j|`` unless
    ``true_model.Sigma`` is given; ``W`` has i.i.d. ``N(0, sigma_star^2)``
    entries and ``xi`` i.i.d. ``N(0, sigma^2)``.
    """
    if n < 1 or p < 1:
        raise DimensionError("n and p must be positive")
    theta = true_model.theta_star
    if theta.size != p:
        raise DimensionError(f"theta_star has length {theta.size}, expected p={p}")
    Sigma = true_model.Sigma
    if Sigma is None:
        Sigma = ar1_covariance(p, true_model.rho)
    else:
        Sigma = np.asarray(Sigma, dtype=float)
        if Sigma.shape != (p, p):
            raise DimensionError(f"Sigma has shape {Sigma.shape}, expected {(p, p)}")
    L = _psd_sqrt(Sigma)
    rng = make_rng(true_model.seed)
    X = rng.standard_normal((n, p)) @ L.T
    W = true_model.sigma_star * rng.standard_normal((n, p))
    xi = true_model.sigma * rng.standard_normal(n)
    return Dataset(y=X @ theta + xi, Z=X + W, X_opt=X)


def mask_missing(X: np.ndarray, pi, rng: np.random.Generator) -> MissingDataSample:
    """Zero out entries of column ``j`` independently with probability ``pi[j]``."""
    X = np.asarray(X, dtype=float)
    pi = np.broadcast_to(np.asarray(pi, dtype=float), (X.shape[1],)).copy()
    keep = rng.random(X.shape) >= pi[None, :]
    return MissingDataSample(Z_tilde=X * keep, pi=pi)


def missing_data_rescale(sample: MissingDataSample):
    """Rescale masked observations and estimate the induced noise variances.

    Returns
    -------
    Z : ndarray
        ``Z_tilde[:, j] / (1 - pi[j])``, an unbiased proxy of ``X``.
    comp : Compensation
        ``d_hat[j] = pi_j / (1 - pi_j)^2 * mean_i Z_tilde[i, j]^2``, unbiased
        for ``mean_i X[i, j]^2 * pi_j / (1 - pi_j)``.
    """
    pi = sample.pi
    if np.any(pi >= 1) or np.any(pi < 0):
        raise ValueError("missingness probabilities must lie in [0, 1)")
    keep = 1.0 - pi
    Z = sample.Z_tilde / keep[None, :]
    d_hat = pi / keep ** 2 * np.mean(sample.Z_tilde ** 2, axis=0)
    return Z, Compensation(d_hat=d_hat, mode=ESTIMATED)


def compute_m_k(X: np.ndarray, k: float) -> float:
    """``max_j mean_i |X_ij|^k``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.size == 0:
        raise DimensionError("X must be nonempty")
    return float(np.max(np.mean(np.abs(X) ** k, axis=0)))


def gram(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = X.T @ X / X.shape[0]
    return (G + G.T) / 2.0


# ---------------------------------------------------------------------------
# tuning
# ---------------------------------------------------------------------------

@dataclass
class TheoreticalTuning:
    """Both tuning levels together with the deviation bounds behind them."""

    mu: float
    tau: float
    deltas: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.mu, self.tau))


def _subexp_bound(gamma, t, log_term, n):
    return max(gamma * math.sqrt(2.0 * log_term / n), 2.0 * log_term / (t * n))


def theoretical_tuning(tc: TuningConstants, n: int, p: int, sigma: float,
                       sigma_star: float, mode: str = KNOWN) -> TheoreticalTuning:
    """Tuning from the high-probability bounds on the stochastic terms.

    ``mu = d1' + d4' + d5 + b`` and ``tau = d2 + d3`` where ``b`` vanishes
    when the noise variances are known exactly.  Unpacks as ``(mu, tau)``.
    """
    eps = tc.epsilon
    if not 0 < eps < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    L = math.log(2.0 * p / eps)
    d1 = sigma_star * math.sqrt(2.0 * tc.m2 * math.log(2.0 * p * p / eps) / n)
    d1p = sigma_star * math.sqrt(2.0 * tc.m2 * L / n)
    d2 = sigma * math.sqrt(2.0 * tc.m2 * L / n)
    d3 = d5 = _subexp_bound(tc.gamma0, tc.t0, L, n)
    d4 = _subexp_bound(tc.gamma0, tc.t0, math.log(max(p * (p - 1), 1) / eps), n)
    d4p = _subexp_bound(tc.gamma2, tc.t2, L, n)
    b = 0.0
    if mode == ESTIMATED:
        b = tc.c_b * math.sqrt(math.log(tc.c_b_prime * p / eps) / n)
    deltas = dict(delta1=d1, delta1_prime=d1p, delta2=d2, delta3=d3, delta4=d4,
                  delta4_prime=d4p, delta5=d5, b=b)
    return TheoreticalTuning(mu=d1p + d4p + d5 + b, tau=d2 + d3, deltas=deltas)


def practical_tuning(epsilon: float, n: int, p: int, sigma: float):
    """``mu = tau = sigma * sqrt(log(p / epsilon) / n)``."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    level = sigma * math.sqrt(math.log(p / epsilon) / n)
    return level, level
