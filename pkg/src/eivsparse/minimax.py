"""Hypothesis families for minimax lower bounds and exact Gaussian KL divergences."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class PackingSet:
    codewords: np.ndarray  # (m, p - 1) array of 0/1
    min_pairwise_dist: int
    p: int
    s: int
    threshold: float
    cardinality_target: float = 0.0
    meets_target: bool = True
    candidates_scanned: int = 0

    def __len__(self):
        return self.codewords.shape[0]

    @property
    def log_size(self) -> float:
        return math.log(len(self)) if len(self) else -math.inf


def hamming_matrix(codewords) -> np.ndarray:
    C = np.asarray(codewords, dtype=np.int64)
    ones = C.sum(axis=1)
    return ones[:, None] + ones[None, :] - 2 * (C @ C.T)


def min_distance(codewords, block: int = 512) -> int:
    """Smallest pairwise Hamming distance, 0 for fewer than two words."""
    C = np.asarray(codewords, dtype=np.int64)
    m = C.shape[0]
    if m < 2:
        return 0
    ones = C.sum(axis=1)
    best = None
    for i in range(0, m, block):
        D = ones[i:i + block, None] + ones[None, :] - 2 * (C[i:i + block] @ C.T)
        rows = np.arange(i, min(i + block, m))
        D[rows - i, rows] = np.iinfo(np.int64).max
        v = int(D.min())
        best = v if best is None else min(best, v)
    return best


def _candidates(p, s, rng, max_candidates):
    """Index sets of size s-1 in range(p-1), exhaustive when small, sampled otherwise."""
    n_all = math.comb(p - 1, s - 1)
    if n_all <= max_candidates:
        cands = list(itertools.combinations(range(p - 1), s - 1))
        order = rng.permutation(len(cands))
        return [cands[i] for i in order]
    seen = set()
    out = []
    while len(out) < max_candidates:
        c = tuple(sorted(rng.choice(p - 1, size=s - 1, replace=False).tolist()))
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def vg_packing(p: int, s: int, seed: int = 0, c1_prime: float = 0.1,
               max_candidates: int = 20000, max_codewords: int = 5000) -> PackingSet:
    """Greedy first-fit packing of weight-(s-1) binary vectors in {0,1}^(p-1).

    A candidate is accepted when its Hamming distance to every accepted
    codeword exceeds ``s/16``.  Candidates are visited in a seeded random
    order.  ``meets_target`` reports ``log|M'| >= c1_prime * s * log(p/s)``;
    a shortfall is reported, not raised.
    """
    if s < 2:
        raise ValueError("packing needs s >= 2")
    if s > p:
        raise ValueError(f"s={s} exceeds p={p}")
    rng = np.random.default_rng(seed)
    threshold = s / 16
    # distance between weight-(s-1) words is 2 * (s - 1 - overlap)
    max_overlap = (s - 1) - threshold / 2
    C = np.zeros((min(max_codewords, math.comb(p - 1, s - 1)), p - 1), dtype=np.int16)
    m = 0
    scanned = 0
    for cand in _candidates(p, s, rng, max_candidates):
        scanned += 1
        idx = list(cand)
        if m == 0 or C[:m, idx].sum(axis=1).max() < max_overlap:
            C[m, idx] = 1
            m += 1
            if m >= len(C):
                break
    C = C[:m].astype(np.int8)
    target = c1_prime * s * math.log(p / s)
    return PackingSet(codewords=C, min_pairwise_dist=min_distance(C), p=p, s=s,
                      threshold=threshold, cardinality_target=target,
                      meets_target=bool(m and math.log(m) >= target),
                      candidates_scanned=scanned)


@dataclass
class HypothesisFamily:
    omega_bars: np.ndarray  # row 0 is R * e_1, rows 1.. follow the packing
    gamma: float
    R: float
    s: int

    def __len__(self):
        return self.omega_bars.shape[0]


def hypothesis_family(packing: PackingSet, R: float, gamma: float,
                      atol: float = 1e-12) -> HypothesisFamily:
    """``w_0 = R e_1`` and ``w_j = R (e_1 + gamma (0, x_j)) / sqrt(1 + gamma^2 (s-1))``."""
    if R <= 0 or gamma <= 0:
        raise ValueError("R and gamma must be positive")
    p, s = packing.p, packing.s
    m = len(packing)
    W = np.zeros((m + 1, p))
    W[0, 0] = R
    scale = R / math.sqrt(1 + gamma ** 2 * (s - 1))
    W[1:, 0] = scale
    W[1:, 1:] = scale * gamma * packing.codewords
    norms = np.linalg.norm(W, axis=1)
    if np.max(np.abs(norms - R)) > atol * max(1.0, R):
        raise AssertionError(f"hypothesis norms deviate from R by {np.max(np.abs(norms - R)):.3g}")
    nnz = np.count_nonzero(W[1:], axis=1)
    if m and np.any(nnz != s):
        raise AssertionError("hypothesis sparsity differs from s")
    return HypothesisFamily(omega_bars=W, gamma=gamma, R=R, s=s)


def separation(family: HypothesisFamily, q) -> dict:
    """Minimum pairwise ``l_q`` distance and the implied constant ``c`` in
    ``min_dist >= c s^(1/q) R gamma / sqrt(1 + gamma^2 (s-1))``."""
    W = family.omega_bars
    ordq = np.inf if str(q) == "inf" else float(q)
    dmin = math.inf
    for i in range(len(W)):
        d = np.linalg.norm(W[i + 1:] - W[i], ord=ordq, axis=1) if i + 1 < len(W) else []
        if len(d):
            dmin = min(dmin, float(np.min(d)))
    s, R, g = family.s, family.R, family.gamma
    inv_q = 0.0 if ordq == np.inf else 1.0 / ordq
    unit = s ** inv_q * R * g / math.sqrt(1 + g ** 2 * (s - 1))
    return {"q": str(q), "min_dist": dmin, "unit": unit, "c": dmin / unit}


def gamma_select(n, p, s, R, c1_prime: float = 0.1, c2_prime: float = 1.0) -> float:
    """``gamma = sqrt(c1' (1 + R^2) log(p/s) / (16 c2' n R^2))``."""
    for name, v in (("n", n), ("p", p), ("s", s), ("R", R),
                    ("c1_prime", c1_prime), ("c2_prime", c2_prime)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    return math.sqrt(c1_prime / (16 * c2_prime * n) * (1 + R ** 2) / R ** 2 * math.log(p / s))


@dataclass
class KlModel:
    """One observation ``(U, V)`` with ``V ~ N(0, Sigma + s*^2 I)`` and
    ``U = theta'X + xi`` correlated with ``V`` through ``X``."""

    Sigma: np.ndarray
    sigma: float
    sigma_star: float
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        if S.shape[0] != S.shape[1]:
            raise DimensionError(f"Sigma must be square, got {S.shape}")
        if not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ValueError("Sigma must be symmetric")
        w = np.linalg.eigvalsh(S)
        if w.min() <= 0:
            raise ValueError(f"Sigma must be positive definite (min eigenvalue {w.min():.3g})")
        self.Sigma = S
        p = S.shape[0]
        Sv = S + self.sigma_star ** 2 * np.eye(p)
        self._cache["cov_v"] = Sv
        St = self.sigma_star ** 2 * np.linalg.inv(Sv)
        St = 0.5 * (St + St.T)
        self._cache["sigma_tilde"] = St
        G = np.eye(p) - St
        self._cache["gamma"] = 0.5 * (G + G.T)

    @property
    def p(self):
        return self.Sigma.shape[0]

    @property
    def Sigma_tilde(self):
        return self._cache["sigma_tilde"]

    @property
    def Gamma(self):
        return self._cache["gamma"]

    @property
    def cov_v(self):
        return self._cache["cov_v"]

    def c(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(theta @ self.Gamma @ theta)

    def eigen_summary(self) -> dict:
        g = np.linalg.eigvalsh(self.Gamma)
        w = np.linalg.eigvalsh(self.Sigma)
        return {"lambda_min": float(g[0]), "lambda_max": float(g[-1]),
                "lambda_min_sigma": float(w[0]), "lambda_max_sigma": float(w[-1])}


def kl_exact(model: KlModel, theta1, theta2, n: int = 1) -> float:
    """Exact KL divergence ``K(P_theta1, P_theta2)`` for ``n`` i.i.d. observations."""
    t1 = np.asarray(theta1, dtype=float).ravel()
    t2 = np.asarray(theta2, dtype=float).ravel()
    if t1.size != model.p or t2.size != model.p:
        raise DimensionError(f"theta vectors must have length {model.p}")
    s2, ss2 = model.sigma ** 2, model.sigma_star ** 2
    v1 = s2 + model.c(t1) * ss2
    v2 = s2 + model.c(t2) * ss2
    G = model.Gamma
    M = G @ model.cov_v @ G
    d = t1 - t2
    kl = 0.5 * (math.log(v2 / v1) + v1 / v2 - 1.0) + float(d @ M @ d) / (2 * v2)
    return n * max(kl, 0.0)


def kl_bound_constant(model: KlModel, pairs, n: int = 1) -> float:
    """Smallest ``C`` with ``KL <= C n / (1 + |t1|^2) (|t1 - t2|^2 + |c_t1 - c_t2|)``
    over the supplied pairs."""
    worst = 0.0
    for t1, t2 in pairs:
        t1 = np.asarray(t1, dtype=float)
        t2 = np.asarray(t2, dtype=float)
        denom = n / (1 + t1 @ t1) * (float(np.sum((t1 - t2) ** 2)) + abs(model.c(t1) - model.c(t2)))
        if denom > 0:
            worst = max(worst, kl_exact(model, t1, t2, n) / denom)
    return worst


def family_kl(model: KlModel, family: HypothesisFamily, n: int) -> np.ndarray:
    """``KL(P_wj, P_w0)`` for every hypothesis ``j >= 1``."""
    W = family.omega_bars
    return np.array([kl_exact(model, W[j], W[0], n) for j in range(1, len(W))])
