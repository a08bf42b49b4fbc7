"""Sparse errors-in-variables estimators expressed as LP / SOCP instances.

All estimators share the compensated score

    S(theta) = Z'(y - Z theta) / n + D_hat theta = a - B theta,

with ``a = Z'y / n`` and ``B = Z'Z / n - D_hat``; the plain MU and Dantzig
selectors use ``D_hat = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimensionError, InfeasibleError, NoFixedPointError, SolverError,
                     UnboundedError)
from .model import Compensation, Dataset, EstimatorConfig
from .solver import (DEFAULT_TOL, INFEASIBLE, MAX_ITER, OPTIMAL, UNBOUNDED, LinearProgram,
                     SecondOrderConeProgram, SolverResult, solve_lp, solve_socp)


@dataclass
class FitResult:
    theta_hat: np.ndarray
    t_hat: float
    objective: float
    residual_stat: float
    solver: SolverResult | None
    estimator: str = ""
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "estimator": self.estimator,
            "theta_hat": [float(v) for v in self.theta_hat],
            "t_hat": float(self.t_hat),
            "objective": float(self.objective),
            "residual_stat": float(self.residual_stat),
        }
        if self.solver is not None:
            out["solver"] = self.solver.summary()
        return out


def score_terms(y, M, d_hat=None):
    """Return ``(a, B)`` with ``S(theta) = a - B theta``."""
    y = np.asarray(y, dtype=float).ravel()
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n, p = M.shape
    if y.size != n:
        raise DimensionError(f"y has length {y.size} but the design has {n} rows")
    a = M.T @ y / n
    B = M.T @ M / n
    if d_hat is not None:
        d_hat = np.asarray(d_hat, dtype=float).ravel()
        if d_hat.size != p:
            raise DimensionError(f"d_hat has length {d_hat.size}, expected {p}")
        B = B - np.diag(d_hat)
    return a, B


def score(theta, a, B) -> float:
    """``|a - B theta|_inf``."""
    return float(np.max(np.abs(a - B @ theta)))


def _theta_set_rows(cfg: EstimatorConfig, p):
    if cfg.theta_set is None:
        return np.zeros((0, p)), np.zeros(0)
    G, h = cfg.theta_set
    if G.shape[1] != p:
        raise DimensionError(f"theta_set has {G.shape[1]} columns, expected {p}")
    return G, h


def _check(result: SolverResult, a, what):
    if result.status == OPTIMAL:
        return
    if result.status == INFEASIBLE:
        tau_min = float(np.max(np.abs(a)))
        raise InfeasibleError(
            f"{what}: feasible set is empty; tau >= {tau_min:.6g} makes theta = 0 feasible",
            suggested_tau=tau_min, result=result)
    if result.status == UNBOUNDED:
        raise UnboundedError(f"{what}: objective unbounded below")
    raise SolverError(f"{what}: solver stopped with status {result.status}", result=result)


def _split_lp_rows(a, B, mu, tau, G, h, with_t):
    """Score constraints on ``(theta+, theta-[, t])``."""
    p = B.shape[0]
    t_col = [-mu * np.ones((p, 1))] if with_t else []
    rows = [np.hstack([-B, B] + t_col), np.hstack([B, -B] + t_col)]
    rhs = [tau - a, tau + a]
    if G.shape[0]:
        rows.append(np.hstack([G, -G] + ([np.zeros((G.shape[0], 1))] if with_t else [])))
        rhs.append(h)
    return np.vstack(rows), np.concatenate(rhs)


def _dims(data: Dataset, comp: Compensation | None):
    if comp is not None and comp.d_hat.size != data.p:
        raise DimensionError(f"d_hat has length {comp.d_hat.size}, expected p={data.p}")


def fit_conic(data: Dataset, comp: Compensation, cfg: EstimatorConfig,
              tol: float = DEFAULT_TOL) -> FitResult:
    """Minimise ``|theta|_1 + lam * t`` subject to
    ``|S(theta)|_inf <= mu t + tau`` and ``||theta||_2 <= t``.

    Variables are ``(theta+, theta-, theta, t)`` with ``theta = theta+ - theta-``
    enforced by equality, so the cone acts on a contiguous block.
    """
    _dims(data, comp)
    a, B = score_terms(data.y, data.Z, comp.d_hat)
    p = data.p
    G, h = _theta_set_rows(cfg, p)
    Zp = np.zeros((p, p))
    col_mu = -cfg.mu * np.ones((p, 1))
    rows = [np.hstack([Zp, Zp, -B, col_mu]), np.hstack([Zp, Zp, B, col_mu])]
    rhs = [cfg.tau - a, cfg.tau + a]
    if G.shape[0]:
        k = G.shape[0]
        rows.append(np.hstack([np.zeros((k, 2 * p)), G, np.zeros((k, 1))]))
        rhs.append(h)
    I = np.eye(p)
    A_eq = np.hstack([-I, I, I, np.zeros((p, 1))])
    c = np.concatenate([np.ones(2 * p), np.zeros(p), [cfg.lam]])
    mask = np.concatenate([np.ones(2 * p, bool), np.zeros(p, bool), [True]])
    lp = LinearProgram(c=c, A_ineq=np.vstack(rows), b_ineq=np.concatenate(rhs),
                       A_eq=A_eq, b_eq=np.zeros(p), nonneg_mask=mask)
    socp = SecondOrderConeProgram(lp, [(3 * p, list(range(2 * p, 3 * p)))])
    res = solve_socp(socp, tol=tol)
    _check(res, a, "conic estimator")
    theta = res.x[2 * p:3 * p].copy()
    t = float(res.x[3 * p])
    return FitResult(theta_hat=theta, t_hat=t, objective=res.objective,
                     residual_stat=score(theta, a, B), solver=res,
                     estimator=f"conic({cfg.lam:g})")


def _fit_self_scaled(y, M, d_hat, cfg: EstimatorConfig, tol, name):
    a, B = score_terms(y, M, d_hat)
    p = B.shape[0]
    G, h = _theta_set_rows(cfg, p)
    A_ineq, b_ineq = _split_lp_rows(a, B, cfg.mu, cfg.tau, G, h, with_t=True)
    A_eq = np.concatenate([np.ones(2 * p), [-1.0]])[None, :]
    c = np.zeros(2 * p + 1)
    c[-1] = 1.0
    lp = LinearProgram(c=c, A_ineq=A_ineq, b_ineq=b_ineq, A_eq=A_eq, b_eq=[0.0],
                       nonneg_mask=np.ones(2 * p + 1, bool))
    res = solve_lp(lp, tol=tol)
    if res.status == UNBOUNDED:
        raise NoFixedPointError(f"{name}: reformulated LP is unbounded")
    _check(res, a, name)
    theta = res.x[:p] - res.x[p:2 * p]
    t = float(res.x[-1])
    l1 = float(np.abs(theta).sum())
    if t - l1 > 10 * tol * max(1.0, t):
        raise NoFixedPointError(
            f"{name}: LP optimum has t = {t:.6g} > |theta|_1 = {l1:.6g}; "
            "the fixed-point equation r = phi(r) has no solution")
    return FitResult(theta_hat=theta, t_hat=t, objective=res.objective,
                     residual_stat=score(theta, a, B), solver=res, estimator=name)


def fit_compensated_mu(data: Dataset, comp: Compensation, cfg: EstimatorConfig,
                       tol: float = DEFAULT_TOL) -> FitResult:
    """Compensated MU selector through its single-LP reformulation.

    Solves ``min t`` over ``(theta+, theta-, t) >= 0`` with
    ``t = sum(theta+ + theta-)`` and ``|S(theta+ - theta-)|_inf <= mu t + tau``.
    Whenever ``r = phi(r)`` has a solution the optimum solves the nonconvex
    selector and ``|theta_hat|_1 = t_hat``.  ``cfg.lam`` is ignored.
    """
    _dims(data, comp)
    return _fit_self_scaled(data.y, data.Z, comp.d_hat, cfg, tol, "comp_mu")


def fit_mu_selector(data: Dataset, cfg: EstimatorConfig,
                    tol: float = DEFAULT_TOL) -> FitResult:
    """Uncompensated MU selector, same LP with ``D_hat = 0``."""
    return _fit_self_scaled(data.y, data.Z, None, cfg, tol, "mu")


def fit_dantzig(y, M, tau: float, theta_set=None, tol: float = DEFAULT_TOL) -> FitResult:
    """``min |theta|_1`` subject to ``|M'(y - M theta)/n|_inf <= tau``.

    Pass ``M = X`` for the oracle fit or ``M = Z`` for the naive one.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    a, B = score_terms(y, M, None)
    p = B.shape[0]
    if theta_set is None:
        G, h = np.zeros((0, p)), np.zeros(0)
    else:
        G, h = theta_set
        G = np.atleast_2d(np.asarray(G, dtype=float))
        h = np.asarray(h, dtype=float).ravel()
    A_ineq, b_ineq = _split_lp_rows(a, B, 0.0, tau, G, h, with_t=False)
    lp = LinearProgram(c=np.ones(2 * p), A_ineq=A_ineq, b_ineq=b_ineq,
                       nonneg_mask=np.ones(2 * p, bool))
    res = solve_lp(lp, tol=tol)
    _check(res, a, "Dantzig selector")
    theta = res.x[:p] - res.x[p:]
    return FitResult(theta_hat=theta, t_hat=float(np.abs(theta).sum()),
                     objective=res.objective, residual_stat=score(theta, a, B),
                     solver=res, estimator="dantzig")


def _phi(a, B, level, G, h, tol):
    """``min |theta|_1`` over ``|a - B theta|_inf <= level`` and ``G theta <= h``."""
    p = B.shape[0]
    A_ineq, b_ineq = _split_lp_rows(a, B, 0.0, level, G, h, with_t=False)
    lp = LinearProgram(c=np.ones(2 * p), A_ineq=A_ineq, b_ineq=b_ineq,
                       nonneg_mask=np.ones(2 * p, bool))
    res = solve_lp(lp, tol=tol)
    if res.status == INFEASIBLE:
        return math.inf, None, res
    if res.status != OPTIMAL:
        # On the edge of feasibility U_r is a single point and the embedding
        # loses its certificates; keep the point only if it is nearly feasible.
        if res.status == MAX_ITER and res.kkt is not None and res.kkt.within(1e-6):
            return res.objective, res.x[:p] - res.x[p:], res
        if res.status == MAX_ITER:
            return math.inf, None, res
        raise SolverError(f"phi evaluation stopped with status {res.status}", result=res)
    return res.objective, res.x[:p] - res.x[p:], res


def fixed_point_oracle(data: Dataset, comp: Compensation, cfg: EstimatorConfig,
                       r_tol: float = 1e-8, tol: float = 1e-10, max_iter: int = 200,
                       r_max: float = 1e12) -> FitResult:
    """Solve ``r = phi(r)`` by bisection, one LP per evaluation of ``phi``.

    ``phi(r) = min{|theta|_1 : |S(theta)|_inf <= mu r + tau}`` is convex and
    nonincreasing, so ``psi(r) = phi(r) - r`` changes sign exactly once.
    The bracket starts at ``[0, phi(0)]`` when ``phi(0)`` is finite and is
    otherwise found by doubling.  ``trace`` lists every ``(r, phi(r))``.
    """
    _dims(data, comp)
    a, B = score_terms(data.y, data.Z, comp.d_hat)
    G, h = _theta_set_rows(cfg, data.p)
    trace = []

    def evaluate(r):
        val, theta, res = _phi(a, B, cfg.mu * r + cfg.tau, G, h, tol)
        trace.append((r, val))
        return val, theta, res

    def done(r, val, theta, res):
        return FitResult(theta_hat=theta, t_hat=r, objective=val,
                         residual_stat=score(theta, a, B), solver=res,
                         estimator="fixed_point", trace=trace)

    val, theta, res = evaluate(0.0)
    if val <= r_tol:
        return done(0.0, val, theta, res)
    if math.isfinite(val):
        lo, hi = 0.0, val
    else:
        if cfg.mu == 0:
            raise NoFixedPointError("phi is infinite everywhere when mu = 0 and U_0 is empty")
        lo, r = 0.0, max(1.0, float(np.max(np.abs(a))) / cfg.mu)
        while True:
            val, theta, res = evaluate(r)
            if math.isfinite(val) and val <= r:
                hi = r
                break
            lo = r
            r *= 2.0
            if r > r_max:
                raise NoFixedPointError(f"no sign change of phi(r) - r for r <= {r_max:g}")
    val, theta, res = evaluate(hi)
    if abs(val - hi) <= r_tol:
        return done(hi, val, theta, res)
    best = (abs(val - hi), hi, val, theta, res)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val, theta, res = evaluate(mid)
        if math.isfinite(val) and abs(val - mid) < best[0]:
            best = (abs(val - mid), mid, val, theta, res)
        if math.isfinite(val) and abs(val - mid) <= r_tol:
            return done(mid, val, theta, res)
        if not math.isfinite(val) or val > mid:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    gap, r, val, theta, res = best
    if gap <= 10 * r_tol:
        return done(r, val, theta, res)
    raise NoFixedPointError(f"bisection stalled with |phi(r) - r| = {gap:.3g}")


ESTIMATORS = ("conic", "comp_mu", "mu", "dantzig_x", "dantzig_z")


def fit(name: str, data: Dataset, comp: Compensation, cfg: EstimatorConfig,
        tol: float = DEFAULT_TOL) -> FitResult:
    """Dispatch by estimator name."""
    if name == "conic":
        return fit_conic(data, comp, cfg, tol)
    if name == "comp_mu":
        return fit_compensated_mu(data, comp, cfg, tol)
    if name == "mu":
        return fit_mu_selector(data, cfg, tol)
    if name == "dantzig_z":
        return fit_dantzig(data.y, data.Z, cfg.tau, cfg.theta_set, tol)
    if name == "dantzig_x":
        if data.X_opt is None:
            raise DimensionError("dantzig_x needs the true design X_opt")
        return fit_dantzig(data.y, data.X_opt, cfg.tau, cfg.theta_set, tol)
    raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
