"""Sensitivity constants of a Gram matrix over the cones C_J(u).

For a support ``J`` the cone is ``C_J(u) = {D : |D_Jc|_1 <= u |D_J|_1}``
and the sensitivities are

    kappa_q(s, u)  = min_{|J| <= s} min_{D in C_J(u), |D|_q = 1} |Psi D|_inf
    kappa_pr(s, u) = min_{|J| <= s} min_{D in C_J(u), |Psi^(1/2) D|_2 = 1} |Psi D|_inf

Cones are nested in ``J``, so only supports with ``|J| = s`` are visited.
Every LP below works in the variables ``x = (d, P, N, z)`` where
``D_J = sign * d``, ``D_Jc = P - N`` and ``z`` bounds ``|Psi D|_inf``.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EnumerationBudgetError, SolverError
from .solver import INFEASIBLE, OPTIMAL, LinearProgram, solve_lp

LP_TOL = 1e-10
BRANCH_TOL = 1e-9


@dataclass
class SensitivityReport:
    psi: np.ndarray
    s: int
    u: float
    q: str
    lower: float
    upper: float
    witness: np.ndarray
    support: tuple
    method: str
    lp_count: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        """Point value for exact methods, the upper end of the bracket otherwise."""
        return self.upper

    @property
    def exact(self) -> bool:
        return self.method == "exact_lp"

    def to_dict(self) -> dict:
        return {
            "s": self.s, "u": self.u, "q": self.q,
            "lower": self.lower, "upper": self.upper,
            "method": self.method,
            "support": [int(j) for j in self.support],
            "witness": [float(v) for v in self.witness],
            "lp_count": self.lp_count,
            **self.extra,
        }


def _as_psi(psi):
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    if psi.shape[0] != psi.shape[1]:
        raise DimensionError(f"Gram matrix must be square, got shape {psi.shape}")
    return 0.5 * (psi + psi.T)


def _check_args(p, s, u):
    if not 1 <= s <= p:
        raise ValueError(f"need 1 <= s <= p, got s={s}, p={p}")
    if u <= 0:
        raise ValueError("u must be positive")


def in_cone(delta, support, u, atol=1e-9) -> bool:
    delta = np.asarray(delta, dtype=float)
    mask = np.zeros(delta.size, bool)
    mask[list(support)] = True
    return np.abs(delta[~mask]).sum() <= u * np.abs(delta[mask]).sum() + atol


def best_support(delta, s):
    """Support of the ``s`` largest entries, the most favourable cone for ``delta``."""
    return tuple(sorted(np.argsort(-np.abs(np.asarray(delta)), kind="stable")[:s]))


def norm_value(psi, delta, q: str) -> float:
    delta = np.asarray(delta, dtype=float)
    if q == "1":
        return float(np.abs(delta).sum())
    if q == "2":
        return float(np.linalg.norm(delta))
    if q == "inf":
        return float(np.max(np.abs(delta)))
    if q == "pr":
        return math.sqrt(max(float(delta @ psi @ delta), 0.0))
    raise ValueError(f"unsupported q {q!r}")


def ratio(psi, delta, q: str) -> float:
    """``|Psi delta|_inf / ||delta||_q``, the quantity every witness attains."""
    return float(np.max(np.abs(psi @ delta))) / norm_value(psi, delta, q)


class _Layout:
    """Index bookkeeping for the ``(d, P, N, z)`` variable vector."""

    def __init__(self, psi, J, signs, u):
        p = psi.shape[0]
        self.p, self.s = p, len(J)
        self.J = np.asarray(J, int)
        self.Jc = np.setdiff1d(np.arange(p), self.J)
        self.m = self.Jc.size
        self.nv = self.s + 2 * self.m + 1
        E = np.zeros((p, self.nv - 1))
        E[self.J, np.arange(self.s)] = signs
        E[self.Jc, self.s + np.arange(self.m)] = 1.0
        E[self.Jc, self.s + self.m + np.arange(self.m)] = -1.0
        self.E = E
        PE = psi @ E
        zc = -np.ones((p, 1))
        self.rows = [np.hstack([PE, zc]), np.hstack([-PE, zc])]
        self.rhs = [np.zeros(p), np.zeros(p)]
        cone = np.concatenate([-u * np.ones(self.s), np.ones(2 * self.m), [0.0]])
        self.rows.append(cone[None, :])
        self.rhs.append([0.0])
        self.c = np.zeros(self.nv)
        self.c[-1] = 1.0

    def delta(self, x):
        return self.E @ x[:-1]

    def pn(self, x):
        s, m = self.s, self.m
        return x[s:s + m], x[s + m:s + 2 * m]

    def solve(self, extra_rows=(), extra_rhs=(), A_eq=None, b_eq=None):
        A = np.vstack(self.rows + list(extra_rows))
        b = np.concatenate([np.ravel(r) for r in self.rhs + list(extra_rhs)])
        lp = LinearProgram(c=self.c, A_ineq=A, b_ineq=b, A_eq=A_eq, b_eq=b_eq,
                           nonneg_mask=np.ones(self.nv, bool))
        res = solve_lp(lp, tol=LP_TOL)
        if res.status == INFEASIBLE:
            return None
        if res.status != OPTIMAL:
            raise SolverError(f"sensitivity LP stopped with status {res.status}", result=res)
        return res


def _sign_patterns(s, fix_first):
    for tail in itertools.product((1.0, -1.0), repeat=s - 1 if fix_first else s):
        yield np.array(((1.0,) if fix_first else ()) + tail)


def _budget(p, s, p_max, s_max):
    if p > p_max or s > s_max:
        raise EnumerationBudgetError(
            f"exact enumeration limited to p <= {p_max}, s <= {s_max} (got p={p}, s={s})")


def _kappa_inf(psi, s, u):
    p = psi.shape[0]
    best, witness, support, count = math.inf, None, None, 0
    for J in itertools.combinations(range(p), s):
        for signs in _sign_patterns(s, fix_first=False):
            lay = _Layout(psi, J, signs, u)
            box = np.zeros((lay.s + 2 * lay.m, lay.nv))
            box[:lay.s, :lay.s] = np.eye(lay.s)
            box[lay.s:lay.s + lay.m, lay.s:lay.s + lay.m] = np.eye(lay.m)
            box[lay.s:lay.s + lay.m, lay.s + lay.m:-1] = -np.eye(lay.m)
            box[lay.s + lay.m:, lay.s:lay.s + lay.m] = -np.eye(lay.m)
            box[lay.s + lay.m:, lay.s + lay.m:-1] = np.eye(lay.m)
            for k in range(p):
                pin = np.zeros(lay.nv)
                pos = np.flatnonzero(lay.J == k)
                if pos.size:
                    if signs[pos[0]] < 0:
                        continue
                    pin[pos[0]] = 1.0
                else:
                    i = int(np.flatnonzero(lay.Jc == k)[0])
                    pin[lay.s + i] = 1.0
                    pin[lay.s + lay.m + i] = -1.0
                res = lay.solve([box], [np.ones(box.shape[0])], pin[None, :], [1.0])
                count += 1
                if res is not None and res.objective < best:
                    best, witness, support = res.objective, lay.delta(res.x), J
    return best, witness, support, count


def _kappa_one(psi, s, u, max_nodes):
    """Branch and bound over the signs of ``D_Jc``.

    With ``D_Jc = P - N`` the normalisation ``sum(d) + sum(P + N) = 1`` only
    bounds ``|D|_1`` from above, so each node LP is a relaxation.  Nodes whose
    solution has some ``P_j, N_j > 0`` are split on the sign of coordinate j.
    Incumbents come from re-solving with every sign of ``D_Jc`` taken from the
    relaxed point, which is exact for that sign pattern.
    """
    p = psi.shape[0]
    best, witness, support = math.inf, None, None
    nodes = 0
    heap = []
    tie = itertools.count()
    for J in itertools.combinations(range(p), s):
        for signs in _sign_patterns(s, fix_first=True):
            heapq.heappush(heap, (-math.inf, 0, next(tie), J, signs, ()))

    def node_lp(lay, fixed):
        rows = [np.concatenate([np.ones(lay.nv - 1), [0.0]])]
        for idx in fixed:
            row = np.zeros(lay.nv)
            row[idx] = 1.0
            rows.append(row)
        b_eq = np.zeros(len(rows))
        b_eq[0] = 1.0
        return lay.solve(A_eq=np.vstack(rows), b_eq=b_eq)

    def offer(lay, J, x):
        nonlocal best, witness, support
        delta = lay.delta(x)
        val = ratio(psi, delta, "1")
        if val < best:
            best, witness, support = val, delta / np.abs(delta).sum(), J

    while heap:
        bound, depth, _, J, signs, fixed = heapq.heappop(heap)
        if bound >= best - BRANCH_TOL:
            continue
        lay = _Layout(psi, J, signs, u)
        nodes += 1
        res = node_lp(lay, fixed)
        if res is None:
            continue
        offer(lay, J, res.x)
        if res.objective >= best - BRANCH_TOL:
            continue
        P, N = lay.pn(res.x)
        overlap = np.minimum(P, N)
        if not overlap.size or overlap.max() <= BRANCH_TOL:
            continue
        polish = tuple(lay.s + lay.m + j if P[j] >= N[j] else lay.s + j for j in range(lay.m))
        nodes += 1
        pol = node_lp(lay, polish)
        if pol is not None:
            offer(lay, J, pol.x)
        if nodes > max_nodes:
            raise EnumerationBudgetError(f"branch and bound exceeded {max_nodes} LPs")
        if res.objective < best - BRANCH_TOL:
            j = int(np.argmax(overlap))
            for idx in (lay.s + j, lay.s + lay.m + j):
                heapq.heappush(heap, (res.objective, -(depth + 1), next(tie), J, signs,
                                      fixed + (idx,)))
    return best, witness, support, nodes


def kappa_exact(psi, s: int, u: float, q="1", p_max: int = 20, s_max: int = 4,
                max_nodes: int = 200_000) -> SensitivityReport:
    """Exact ``kappa_1`` or ``kappa_inf`` by enumerating supports and signs.

    Parameters
    ----------
    psi : (p, p) array
        Gram matrix.
    s, u : int, float
        Sparsity and cone parameter.
    q : {"1", "inf"}
    """
    q = str(q)
    psi = _as_psi(psi)
    p = psi.shape[0]
    _check_args(p, s, u)
    _budget(p, s, p_max, s_max)
    if q == "inf":
        val, wit, J, count = _kappa_inf(psi, s, u)
    elif q == "1":
        val, wit, J, count = _kappa_one(psi, s, u, max_nodes)
    else:
        raise ValueError("kappa_exact supports q in {'1', 'inf'}; use kappa_local for '2'/'pr'")
    val = max(val, 0.0)
    return SensitivityReport(psi=psi, s=s, u=u, q=q, lower=val, upper=val,
                             witness=wit, support=tuple(J), method="exact_lp", lp_count=count)


def psd_sqrt(psi, atol=1e-10):
    w, V = np.linalg.eigh(_as_psi(psi))
    if w.min() < -atol * max(1.0, abs(w).max()):
        raise ValueError(f"Gram matrix is not PSD (min eigenvalue {w.min():.3g})")
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.T


def lower_bound(psi, s, u, q, **kw):
    """Certified lower bound for ``kappa_2`` or ``kappa_pr``.

    ``kappa_2 >= ((1+u)s)^(-1/2) kappa_inf`` because ``|D|_1 <= (1+u)s |D|_inf``
    on ``C_J(u)``; ``kappa_pr >= sqrt(kappa_1)`` because
    ``D'Psi D <= |Psi D|_inf |D|_1``.
    """
    if q == "2":
        rep = kappa_exact(psi, s, u, "inf", **kw)
        return ((1 + u) * s) ** -0.5 * rep.value, rep
    if q == "pr":
        rep = kappa_exact(psi, s, u, "1", **kw)
        return math.sqrt(rep.value), rep
    raise ValueError(f"unsupported q {q!r}")


def _dca(psi, lay, delta0, q, max_iter):
    """Convex-concave iterations on ``min |Psi D|_inf`` s.t. ``N(D) >= 1``.

    The normalisation is replaced by its supporting hyperplane at the current
    point, so every iterate is feasible and yields a valid upper bound.
    """
    best_val, best_delta = math.inf, None
    delta = delta0
    lps = 0
    for _ in range(max_iter):
        nrm = norm_value(psi, delta, q)
        if nrm <= 1e-12:
            break
        grad = delta / nrm if q == "2" else psi @ delta / nrm
        row = -np.concatenate([grad @ lay.E, [0.0]])
        res = lay.solve([row[None, :]], [[-1.0]])
        lps += 1
        if res is None:
            break
        delta = lay.delta(res.x)
        val = ratio(psi, delta, q) if norm_value(psi, delta, q) > 1e-12 else math.inf
        if val < best_val - 1e-12:
            best_val, best_delta = val, delta
        else:
            break
    return best_val, best_delta, lps


def kappa_local(psi, s: int, u: float, q="2", restarts: int = 2, seed: int = 0,
                max_iter: int = 25, p_max: int = 20, s_max: int = 4) -> SensitivityReport:
    """Bracket ``[lower, upper]`` for ``kappa_2`` or ``kappa_pr``.

    The upper end comes from multi-start convex-concave local search over
    every support and sign pattern, the lower end from the certified
    inequalities in :func:`lower_bound`.
    """
    q = str(q)
    psi = _as_psi(psi)
    p = psi.shape[0]
    _check_args(p, s, u)
    psd_sqrt(psi)
    lower, exact_rep = lower_bound(psi, s, u, q, p_max=p_max, s_max=s_max)
    rng = np.random.default_rng(seed)
    best, witness, support, lps = math.inf, None, None, exact_rep.lp_count
    for J in itertools.combinations(range(p), s):
        starts_common = []
        if best_support(exact_rep.witness, s) == J:
            starts_common.append(exact_rep.witness)
        for signs in _sign_patterns(s, fix_first=True):
            lay = _Layout(psi, J, signs, u)
            base = np.zeros(p)
            base[list(J)] = signs
            starts = [base] + [d for d in starts_common
                               if np.all(np.sign(d[list(J)]) * signs >= 0)]
            for _ in range(restarts):
                d = np.zeros(p)
                d[list(J)] = signs * rng.uniform(0.1, 1.0, s)
                tail = rng.normal(size=lay.m)
                budget = u * np.abs(d).sum() * rng.uniform(0, 1)
                if lay.m:
                    d[lay.Jc] = tail / np.abs(tail).sum() * budget
                starts.append(d)
            for d0 in starts:
                val, delta, k = _dca(psi, lay, d0, q, max_iter)
                lps += k
                if delta is not None and val < best:
                    best, witness, support = val, delta / norm_value(psi, delta, q), J
    if witness is None:
        best = math.inf
        witness = np.full(p, np.nan)
        support = ()
    upper = max(best, lower)
    return SensitivityReport(psi=psi, s=s, u=u, q=q, lower=lower, upper=upper,
                             witness=witness, support=tuple(support),
                             method="local_search", lp_count=lps)


def coherence(psi) -> float:
    """Largest absolute off-diagonal entry of the unit-diagonal rescaling of ``psi``."""
    psi = _as_psi(psi)
    d = np.diag(psi)
    if np.any(d <= 0):
        raise ValueError("coherence needs a strictly positive diagonal")
    r = np.sqrt(d)
    C = psi / np.outer(r, r)
    np.fill_diagonal(C, 0.0)
    return float(np.max(np.abs(C))) if C.size > 1 else 0.0


def kappa(psi, s, u, q="1", **kw) -> SensitivityReport:
    q = str(q)
    if q in ("1", "inf"):
        return kappa_exact(psi, s, u, q, **{k: v for k, v in kw.items()
                                             if k in ("p_max", "s_max", "max_nodes")})
    return kappa_local(psi, s, u, q, **kw)
