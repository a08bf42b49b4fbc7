"""Dense primal-dual interior-point solver for LPs and SOCPs.

Problems are stated in a user-facing form (``LinearProgram``,
``SecondOrderConeProgram``) and converted internally to the standard conic
form::

    minimize    c'x
    subject to  A x = b,  G x + s = h,  s in K

with ``K`` a product of a nonnegative orthant and second-order cones.  The
interior-point method runs on the homogeneous self-dual embedding so that
infeasibility and unboundedness come with Farkas-type certificates.

Every result is certified by :func:`certify`, which recomputes residuals
from the user-facing problem, the primal point and the multipliers, without
touching solver internals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
KKT_REGULARIZATION = 1e-10

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"


def _as_matrix(a, n_cols, name):
    if a is None:
        return np.zeros((0, n_cols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, n_cols))
    if a.shape[1] != n_cols:
        raise DimensionError(f"{name} has {a.shape[1]} columns, expected {n_cols}")
    return a


def _as_vector(v, size, name):
    if v is None:
        v = np.zeros(0)
    v = np.asarray(v, dtype=float).ravel()
    if v.size != size:
        raise DimensionError(f"{name} has length {v.size}, expected {size}")
    return v


@dataclass
class LinearProgram:
    """``minimize c'x`` subject to ``A_ineq x <= b_ineq``, ``A_eq x = b_eq``
    and ``x[i] >= 0`` wherever ``nonneg_mask[i]`` is set."""

    c: np.ndarray
    A_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    nonneg_mask: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_ineq = _as_matrix(self.A_ineq, n, "A_ineq")
        self.b_ineq = _as_vector(self.b_ineq, self.A_ineq.shape[0], "b_ineq")
        self.A_eq = _as_matrix(self.A_eq, n, "A_eq")
        self.b_eq = _as_vector(self.b_eq, self.A_eq.shape[0], "b_eq")
        if self.nonneg_mask is None:
            self.nonneg_mask = np.zeros(n, dtype=bool)
        self.nonneg_mask = np.asarray(self.nonneg_mask, dtype=bool).ravel()
        if self.nonneg_mask.size != n:
            raise DimensionError(
                f"nonneg_mask has length {self.nonneg_mask.size}, expected {n}")

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class SecondOrderConeProgram:
    """A linear program plus cone blocks ``(t_idx, x_idx)`` enforcing
    ``||x[x_idx]||_2 <= x[t_idx]``."""

    lp: LinearProgram
    cone_blocks: list = field(default_factory=list)

    def __post_init__(self):
        n = self.lp.n_vars
        seen: set[int] = set()
        blocks = []
        for t_idx, x_idx in self.cone_blocks:
            idx = [int(t_idx)] + [int(i) for i in x_idx]
            for i in idx:
                if not 0 <= i < n:
                    raise DimensionError(f"cone index {i} out of range for {n} variables")
                if i in seen:
                    raise DimensionError(f"cone index {i} appears in more than one block")
                seen.add(i)
            blocks.append((idx[0], idx[1:]))
        self.cone_blocks = blocks


@dataclass
class KKTRecord:
    primal_residual: float
    dual_residual: float
    gap: float
    dual_objective: float
    objective: float

    @property
    def rel_gap(self) -> float:
        return self.gap / (1.0 + abs(self.objective))

    def within(self, tol: float) -> bool:
        return (self.primal_residual <= tol and self.dual_residual <= tol
                and self.rel_gap <= tol)


@dataclass
class Duals:
    """Multipliers in the user-facing layout.

    ``ineq >= 0`` for ``A_ineq`` rows, ``eq`` free, ``nonneg >= 0`` for the
    masked variables (in index order), ``cones`` one vector per cone block,
    each in the second-order cone.
    """

    ineq: np.ndarray
    eq: np.ndarray
    nonneg: np.ndarray
    cones: list


@dataclass
class SolverResult:
    x: np.ndarray
    objective: float
    status: str
    kkt: KKTRecord | None
    iterations: int
    duals: Duals | None = None
    method: str = "ipm"
    certificate: dict | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def summary(self) -> dict:
        out = {"status": self.status, "objective": self.objective,
               "iterations": self.iterations, "method": self.method}
        if self.kkt is not None:
            out.update(primal_residual=self.kkt.primal_residual,
                       dual_residual=self.kkt.dual_residual,
                       gap=self.kkt.gap,
                       dual_objective=self.kkt.dual_objective)
        return out


def _split(problem):
    if isinstance(problem, SecondOrderConeProgram):
        return problem.lp, problem.cone_blocks
    return problem, []


def certify(problem, x, duals: Duals) -> KKTRecord:
    """Recompute KKT residuals of ``(x, duals)`` for ``problem``.

    Residuals are infinity norms in the user-facing form: constraint
    violation of ``x``, stationarity plus dual-cone violation of the
    multipliers, and the absolute difference between primal and dual
    objectives.
    """
    lp, blocks = _split(problem)
    x = np.asarray(x, dtype=float)
    nn_idx = np.flatnonzero(lp.nonneg_mask)

    primal = 0.0
    if lp.A_ineq.shape[0]:
        primal = max(primal, float(np.max(lp.A_ineq @ x - lp.b_ineq, initial=0.0)))
    if lp.A_eq.shape[0]:
        primal = max(primal, float(np.max(np.abs(lp.A_eq @ x - lp.b_eq))))
    if nn_idx.size:
        primal = max(primal, float(np.max(-x[nn_idx], initial=0.0)))
    for t_idx, x_idx in blocks:
        primal = max(primal, float(np.linalg.norm(x[x_idx]) - x[t_idx]))

    grad = lp.c.copy()
    grad += lp.A_ineq.T @ duals.ineq
    grad += lp.A_eq.T @ duals.eq
    grad[nn_idx] -= duals.nonneg
    dual = 0.0
    dual = max(dual, float(np.max(-duals.ineq, initial=0.0)))
    dual = max(dual, float(np.max(-duals.nonneg, initial=0.0)))
    for (t_idx, x_idx), zk in zip(blocks, duals.cones):
        grad[t_idx] -= zk[0]
        grad[x_idx] -= zk[1:]
        dual = max(dual, float(np.linalg.norm(zk[1:]) - zk[0]))
    dual = max(dual, float(np.max(np.abs(grad), initial=0.0)))

    objective = float(lp.c @ x)
    dual_objective = float(-lp.b_ineq @ duals.ineq - lp.b_eq @ duals.eq)
    return KKTRecord(primal_residual=primal, dual_residual=dual,
                     gap=abs(objective - dual_objective),
                     dual_objective=dual_objective, objective=objective)


# ---------------------------------------------------------------------------
# cone algebra
# ---------------------------------------------------------------------------

class _Cone:
    """Product of ``R_+^l`` and second-order cones of the given sizes."""

    def __init__(self, l, q):
        self.l = int(l)
        self.q = [int(k) for k in q]
        self.blocks = []
        start = self.l
        for k in self.q:
            self.blocks.append(slice(start, start + k))
            start += k
        self.m = start
        self.degree = self.l + len(self.q)

    def unit(self):
        e = np.zeros(self.m)
        e[:self.l] = 1.0
        for sl in self.blocks:
            e[sl.start] = 1.0
        return e

    def margin(self, u):
        """Smallest 'eigenvalue' of ``u``; positive iff ``u`` is interior."""
        vals = [np.min(u[:self.l])] if self.l else []
        for sl in self.blocks:
            vals.append(u[sl.start] - np.linalg.norm(u[sl.start + 1:sl.stop]))
        return min(vals) if vals else 1.0

    def prod(self, u, v):
        w = np.empty(self.m)
        w[:self.l] = u[:self.l] * v[:self.l]
        for sl in self.blocks:
            u0, u1 = u[sl.start], u[sl.start + 1:sl.stop]
            v0, v1 = v[sl.start], v[sl.start + 1:sl.stop]
            w[sl.start] = u0 * v0 + u1 @ v1
            w[sl.start + 1:sl.stop] = u0 * v1 + v0 * u1
        return w

    def div(self, lam, w):
        """Solve ``lam o x = w`` for ``x``."""
        x = np.empty(self.m)
        x[:self.l] = w[:self.l] / lam[:self.l]
        for sl in self.blocks:
            l0, l1 = lam[sl.start], lam[sl.start + 1:sl.stop]
            w0, w1 = w[sl.start], w[sl.start + 1:sl.stop]
            det = l0 * l0 - l1 @ l1
            x0 = (l0 * w0 - l1 @ w1) / det
            x[sl.start] = x0
            x[sl.start + 1:sl.stop] = (w1 - x0 * l1) / l0
        return x

    def max_step(self, u, d):
        """Largest ``a >= 0`` with ``u + a d`` in the cone (``u`` interior)."""
        step = math.inf
        if self.l:
            dl = d[:self.l]
            neg = dl < 0
            if np.any(neg):
                step = min(step, float(np.min(-u[:self.l][neg] / dl[neg])))
        for sl in self.blocks:
            u0, u1 = u[sl.start], u[sl.start + 1:sl.stop]
            d0, d1 = d[sl.start], d[sl.start + 1:sl.stop]
            a = d0 * d0 - d1 @ d1
            b = u0 * d0 - u1 @ d1
            c = u0 * u0 - u1 @ u1
            disc = b * b - a * c
            if disc < 0:
                continue
            den = -b + math.sqrt(disc)
            if den > 0:
                step = min(step, c / den)
        return step

    def scaling(self, s, z):
        """Nesterov-Todd scaling: symmetric ``W`` with ``W z = W^{-1} s``.

        Returns ``(W, W_inv, lam)`` with dense block-diagonal matrices.
        """
        W = np.zeros((self.m, self.m))
        Winv = np.zeros((self.m, self.m))
        if self.l:
            d = np.sqrt(s[:self.l] / z[:self.l])
            idx = np.arange(self.l)
            W[idx, idx] = d
            Winv[idx, idx] = 1.0 / d
        for sl in self.blocks:
            sk, zk = s[sl], z[sl]
            s_norm = math.sqrt(sk[0] ** 2 - sk[1:] @ sk[1:])
            z_norm = math.sqrt(zk[0] ** 2 - zk[1:] @ zk[1:])
            sb, zb = sk / s_norm, zk / z_norm
            gamma = math.sqrt((1.0 + sb @ zb) / 2.0)
            wb = sb.copy()
            wb[0] += zb[0]
            wb[1:] -= zb[1:]
            wb /= 2.0 * gamma
            eta = math.sqrt(s_norm / z_norm)
            k = sk.size
            H = np.empty((k, k))
            H[0, 0] = wb[0]
            H[0, 1:] = wb[1:]
            H[1:, 0] = wb[1:]
            H[1:, 1:] = np.eye(k - 1) + np.outer(wb[1:], wb[1:]) / (1.0 + wb[0])
            Hinv = H.copy()
            Hinv[0, 1:] *= -1.0
            Hinv[1:, 0] *= -1.0
            W[sl, sl] = eta * H
            Winv[sl, sl] = Hinv / eta
        lam = W @ z
        return W, Winv, lam

    def project(self, v):
        """Euclidean projection onto the cone."""
        out = v.copy()
        out[:self.l] = np.maximum(v[:self.l], 0.0)
        for sl in self.blocks:
            v0, v1 = v[sl.start], v[sl.start + 1:sl.stop]
            nv = np.linalg.norm(v1)
            if nv <= v0:
                continue
            if nv <= -v0:
                out[sl] = 0.0
                continue
            a = (v0 + nv) / 2.0
            out[sl.start] = a
            out[sl.start + 1:sl.stop] = a * v1 / nv
        return out


# ---------------------------------------------------------------------------
# conversion to standard conic form
# ---------------------------------------------------------------------------

@dataclass
class _ConeForm:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cone: _Cone
    n_ineq: int
    nn_idx: np.ndarray
    blocks: list

    def user_duals(self, y, z) -> Duals:
        m1 = self.n_ineq
        m2 = m1 + self.nn_idx.size
        cones = [z[sl].copy() for sl in self.cone.blocks]
        return Duals(ineq=z[:m1].copy(), eq=y.copy(), nonneg=z[m1:m2].copy(),
                     cones=cones)


def _to_cone_form(problem) -> _ConeForm:
    lp, blocks = _split(problem)
    n = lp.n_vars
    nn_idx = np.flatnonzero(lp.nonneg_mask)
    rows = [lp.A_ineq]
    rhs = [lp.b_ineq]
    if nn_idx.size:
        E = np.zeros((nn_idx.size, n))
        E[np.arange(nn_idx.size), nn_idx] = -1.0
        rows.append(E)
        rhs.append(np.zeros(nn_idx.size))
    sizes = []
    for t_idx, x_idx in blocks:
        k = 1 + len(x_idx)
        E = np.zeros((k, n))
        E[0, t_idx] = -1.0
        E[np.arange(1, k), x_idx] = -1.0
        rows.append(E)
        rhs.append(np.zeros(k))
        sizes.append(k)
    G = np.vstack(rows) if rows else np.zeros((0, n))
    h = np.concatenate(rhs) if rhs else np.zeros(0)
    cone = _Cone(lp.A_ineq.shape[0] + nn_idx.size, sizes)
    return _ConeForm(c=lp.c, G=G, h=h, A=lp.A_eq, b=lp.b_eq, cone=cone,
                     n_ineq=lp.A_ineq.shape[0], nn_idx=nn_idx, blocks=blocks)


# ---------------------------------------------------------------------------
# interior-point method on the homogeneous self-dual embedding
# ---------------------------------------------------------------------------

class _KKTSolver:
    """LU of ``[[0, A', G'], [A, 0, 0], [G, 0, -H]]`` with a small static
    shift and iterative refinement against the unshifted matrix."""

    def __init__(self, A, G, n):
        self.n, self.pe, self.m = n, A.shape[0], G.shape[0]
        N = n + self.pe + self.m
        K = np.zeros((N, N))
        K[:n, n:n + self.pe] = A.T
        K[:n, n + self.pe:] = G.T
        K[n:n + self.pe, :n] = A
        K[n + self.pe:, :n] = G
        self.base = K
        self.shift = np.concatenate([
            np.full(n, KKT_REGULARIZATION),
            np.full(self.pe, -KKT_REGULARIZATION),
            np.full(self.m, -KKT_REGULARIZATION)])

    def factor(self, H):
        K = self.base.copy()
        o = self.n + self.pe
        K[o:, o:] = -H
        self.K = K
        Kr = K + np.diag(self.shift)
        self.lu = sla.lu_factor(Kr, check_finite=False)

    def solve(self, rhs, refine=3):
        sol = sla.lu_solve(self.lu, rhs, check_finite=False)
        for _ in range(refine):
            res = rhs - self.K @ sol
            sol += sla.lu_solve(self.lu, res, check_finite=False)
        return sol


def _ipm(form: _ConeForm, problem, tol, max_iter):
    c, G, h, A, b, cone = form.c, form.G, form.h, form.A, form.b, form.cone
    n, pe, m = c.size, A.shape[0], G.shape[0]
    kkt = _KKTSolver(A, G, n)
    e = cone.unit()

    def split(v):
        return v[:n], v[n:n + pe], v[n + pe:]

    # initial point: least-squares primal and dual, shifted into the cone
    kkt.factor(np.eye(m))
    x, _, zt = split(kkt.solve(np.concatenate([np.zeros(n), b, h])))
    s = -zt
    _, y, z = split(kkt.solve(np.concatenate([-c, np.zeros(pe), np.zeros(m)])))
    if m:
        # a start hugging the boundary pins every later step near zero
        a = cone.margin(s)
        if a < 1.0:
            s = s + (1.0 - a) * e
        a = cone.margin(z)
        if a < 1.0:
            z = z + (1.0 - a) * e
    tau, kappa = 1.0, 1.0

    best = None
    stalls = 0
    for it in range(max_iter + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = -(A @ x) + b * tau
        rz = -(G @ x) + h * tau - s
        rt = -(c @ x) - b @ y - h @ z - kappa
        mu = (s @ z + tau * kappa) / (cone.degree + 1)

        xs, ys, zs = x / tau, y / tau, z / tau
        duals = form.user_duals(ys, zs)
        rec = certify(problem, xs, duals)
        if rec.within(tol):
            return SolverResult(x=xs, objective=rec.objective, status=OPTIMAL,
                                kkt=rec, iterations=it, duals=duals)
        score = max(rec.primal_residual, rec.dual_residual, rec.rel_gap)
        if best is None or score < best[0]:
            best = (score, xs, duals, rec)

        if tau < kappa:
            dual_ray = -(b @ y) - h @ z
            if dual_ray > 0:
                res = np.max(np.abs(A.T @ y + G.T @ z), initial=0.0) / dual_ray
                if res <= tol:
                    cert = form.user_duals(y / dual_ray, z / dual_ray)
                    return SolverResult(x=xs, objective=math.nan, status=INFEASIBLE,
                                        kkt=None, iterations=it, duals=cert,
                                        certificate={"ray_residual": float(res)})
            primal_ray = -(c @ x)
            if primal_ray > 0:
                res = max(np.max(np.abs(A @ x), initial=0.0),
                          np.max(np.abs(G @ x + s), initial=0.0)) / primal_ray
                if res <= tol:
                    return SolverResult(x=x / primal_ray, objective=-math.inf,
                                        status=UNBOUNDED, kkt=None, iterations=it,
                                        certificate={"ray_residual": float(res)})
        if it == max_iter or stalls >= 5:
            break

        W, Winv, lam = cone.scaling(s, z)
        kkt.factor(W @ W)
        u1 = kkt.solve(np.concatenate([-c, b, h]))
        u1x, u1y, u1z = split(u1)
        den_base = kappa / tau - (c @ u1x + b @ u1y + h @ u1z)

        def direction(dt, dk, shrink):
            rhs = np.concatenate([-shrink * rx, shrink * ry, shrink * rz - W @ dt])
            u2x, u2y, u2z = split(kkt.solve(rhs))
            dtau = (-shrink * rt + dk / tau + c @ u2x + b @ u2y + h @ u2z) / den_base
            dx = u2x + dtau * u1x
            dy = u2y + dtau * u1y
            dz = u2z + dtau * u1z
            ds = W @ (dt - W @ dz)
            dkap = (dk - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkap

        def step_length(dz, ds, dtau, dkap):
            a = min(cone.max_step(s, ds), cone.max_step(z, dz)) if m else math.inf
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kappa / dkap)
            return a

        # predictor
        dx, dy, dz, ds, dtau, dkap = direction(-lam, -tau * kappa, 1.0)
        a_aff = min(1.0, step_length(dz, ds, dtau, dkap))
        sigma = (1.0 - a_aff) ** 3

        # corrector
        corr = cone.prod(Winv @ ds, W @ dz)
        dt = cone.div(lam, -cone.prod(lam, lam) - corr + sigma * mu * e)
        dk = -tau * kappa - dtau * dkap + sigma * mu
        dx, dy, dz, ds, dtau, dkap = direction(dt, dk, 1.0 - sigma)
        a = min(1.0, 0.99 * step_length(dz, ds, dtau, dkap))
        stalls = stalls + 1 if a < 1e-8 else 0

        x = x + a * dx
        y = y + a * dy
        z = z + a * dz
        s = s + a * ds
        tau = tau + a * dtau
        kappa = kappa + a * dkap

    _, xs, duals, rec = best
    return SolverResult(x=xs, objective=rec.objective, status=MAX_ITER, kkt=rec,
                        iterations=it, duals=duals)


# ---------------------------------------------------------------------------
# first-order fallback
# ---------------------------------------------------------------------------

def _admm(form: _ConeForm, problem, tol, max_iter, rho=1.0, sigma=1e-6, alpha=1.6,
          check_every=10):
    c, G, h, A, b, cone = form.c, form.G, form.h, form.A, form.b, form.cone
    n, pe = c.size, A.shape[0]
    F = np.vstack([A, G])
    g = np.concatenate([b, h])
    cho = sla.cho_factor(sigma * np.eye(n) + rho * F.T @ F)
    x = np.zeros(n)
    s = np.zeros(F.shape[0])
    u = np.zeros(F.shape[0])

    def project(v):
        out = np.empty_like(v)
        out[:pe] = 0.0
        out[pe:] = cone.project(v[pe:])
        return out

    rec = duals = None
    for it in range(1, max_iter + 1):
        x = sla.cho_solve(cho, sigma * x - c - rho * F.T @ (s - g + u))
        Fx = alpha * (F @ x) + (1.0 - alpha) * (g - s)
        s = project(g - Fx - u)
        u = u + Fx + s - g
        if it % check_every == 0 or it == max_iter:
            zfull = rho * u
            duals = form.user_duals(zfull[:pe], zfull[pe:])
            rec = certify(problem, x, duals)
            if rec.within(tol):
                return SolverResult(x=x.copy(), objective=rec.objective, status=OPTIMAL,
                                    kkt=rec, iterations=it, duals=duals, method="admm")
    return SolverResult(x=x.copy(), objective=rec.objective, status=MAX_ITER, kkt=rec,
                        iterations=max_iter, duals=duals, method="admm")


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def _solve(problem, tol, max_iter, method):
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method not in ("ipm", "admm"):
        raise ValueError(f"unknown method {method!r}")
    form = _to_cone_form(problem)
    # tau -> 0 in the embedding is expected near infeasibility; statuses cover it
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if method == "ipm":
            return _ipm(form, problem, tol, max_iter)
        return _admm(form, problem, tol, max_iter)


def solve_lp(lp: LinearProgram, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
             method: str = "ipm") -> SolverResult:
    """Solve a linear program.

    Parameters
    ----------
    lp : LinearProgram
    tol : float
        Bound on the primal and dual residuals and on the relative duality
        gap of an ``optimal`` return.
    max_iter : int
        Iteration cap; reaching it returns status ``max_iter``.
    method : {"ipm", "admm"}
        Interior point (default) or the first-order fallback for large
        instances, which needs a much larger ``max_iter``.
    """
    return _solve(lp, tol, max_iter, method)


def solve_socp(socp: SecondOrderConeProgram, tol: float = DEFAULT_TOL,
               max_iter: int = DEFAULT_MAX_ITER, method: str = "ipm") -> SolverResult:
    """Solve a second-order cone program; see :func:`solve_lp`."""
    return _solve(socp, tol, max_iter, method)


def dump_problem(problem) -> str:
    """Plain-text standard form, one record per line, for external checks."""
    lp, blocks = _split(problem)

    def fmt(v):
        return " ".join(repr(float(t)) for t in v)

    lines = [f"vars {lp.n_vars}", f"c {fmt(lp.c)}"]
    for row, rhs in zip(lp.A_ineq, lp.b_ineq):
        lines.append(f"le {fmt(row)} | {float(rhs)!r}")
    for row, rhs in zip(lp.A_eq, lp.b_eq):
        lines.append(f"eq {fmt(row)} | {float(rhs)!r}")
    nn = np.flatnonzero(lp.nonneg_mask)
    if nn.size:
        lines.append("nonneg " + " ".join(str(int(i)) for i in nn))
    for t_idx, x_idx in blocks:
        lines.append(f"soc {t_idx} : " + " ".join(str(i) for i in x_idx))
    return "\n".join(lines) + "\n"
