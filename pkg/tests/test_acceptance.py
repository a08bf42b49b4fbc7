"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Monte Carlo tables are computed once per module and shared.  Set
``EIVSPARSE_WORKERS`` to spread replications over processes.
"""
import math
import os

import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import multivariate_normal

from eivsparse.estimators import fit_compensated_mu, fit_conic, fixed_point_oracle, score_terms
from eivsparse.minimax import KlModel, hypothesis_family, kl_exact, vg_packing
from eivsparse.model import (Compensation, EstimatorConfig, TrueModel, TuningConstants,
                             ar1_covariance, compute_m_k, generate_dgp, practical_tuning,
                             replication_seed, theoretical_tuning)
from eivsparse.sensitivity import kappa_exact, kappa_local, ratio
from eivsparse.simulation import SimulationConfig, rate_scan, run_monte_carlo
from eivsparse.solver import (OPTIMAL, LinearProgram, SecondOrderConeProgram, solve_lp,
                              solve_socp)

pytestmark = pytest.mark.slow

WORKERS = int(os.environ.get("EIVSPARSE_WORKERS") or min(4, os.cpu_count() or 1))
REFERENCE_RMSE = {
    10: {"dantzig_x": 0.0321528, "conic": 0.1846383, "dantzig_z": 0.3300527},
    50: {"dantzig_x": 0.0349420, "conic": 0.2245046},
}


@pytest.fixture(scope="module")
def baseline_tables():
    out = {}
    for p in (10, 50):
        cfg = SimulationConfig(n=300, p=p, replications=100, theta_star_choice="first",
                               base_seed=0)
        out[p] = run_monte_carlo(cfg, workers=WORKERS)
    return out


def test_criterion_1_table1_levels(baseline_tables, acceptance):
    checks = []
    for p, refs in REFERENCE_RMSE.items():
        t = baseline_tables[p]
        got = {"dantzig_x": t.row("dantzig_x").rmse, "conic": t.row("conic", 0.5).rmse,
               "dantzig_z": t.row("dantzig_z").rmse}
        for name, ref in refs.items():
            tol = 0.15 if name == "dantzig_x" else 0.20
            checks.append((p, name, got[name], ref, abs(got[name] / ref - 1) <= tol))
    detail = "; ".join(f"p={p} {n} {g:.4f} vs {r:.4f}" for p, n, g, r, _ in checks)
    ok = acceptance(1, all(c[-1] for c in checks), detail)
    assert ok


def test_criterion_2_table2_comp_mu(acceptance):
    cfg = SimulationConfig(n=300, p=10, replications=100, theta_star_choice="second",
                           estimators=("comp_mu",), base_seed=0)
    rmse = run_monte_carlo(cfg, workers=WORKERS).row("comp_mu").rmse
    ok = acceptance(2, abs(rmse / 0.1171633 - 1) <= 0.20, f"CompMU rmse {rmse:.4f} vs 0.1172")
    assert ok


def test_criterion_3_ordering(baseline_tables, acceptance):
    failures = []
    for p, t in baseline_tables.items():
        dx, dz, cmu = t.row("dantzig_x"), t.row("dantzig_z"), t.row("comp_mu")
        for lam in (0.5, 0.75, 1.0):
            c = t.row("conic", lam)
            for lo, hi in ((dx, c), (c, dz)):
                if hi.rmse - lo.rmse <= 3 * t.rmse_gap_stderr(hi, lo):
                    failures.append(f"p={p} {lo.label}<{hi.label}")
        c5 = t.row("conic", 0.5)
        gap = 1.1 * cmu.rmse - c5.rmse
        se = math.sqrt(sum((r["sq_err"] / (2 * c5.rmse) - 1.1 * q["sq_err"] / (2 * cmu.rmse)) ** 2
                           for r, q in zip(c5.records, cmu.records)) / len(c5.records))
        se /= math.sqrt(len(c5.records))
        if gap < 0:
            failures.append(f"p={p} Conic(0.5)>1.1*CompMU")
        elif gap <= 3 * se and c5.rmse > cmu.rmse:
            failures.append(f"p={p} Conic(0.5) vs 1.1*CompMU within noise")
    ok = acceptance(3, not failures, "; ".join(failures) or "all orderings beyond 3 stderr")
    assert ok


def test_criterion_4_lambda_coincidence(baseline_tables, acceptance):
    t = baseline_tables[10]
    recs = [t.row("conic", lam).records for lam in (0.5, 0.75, 1.0)]
    worst, agree = 0.0, 0
    for a, b, c in zip(*recs):
        if not (a["ok"] and b["ok"] and c["ok"]):
            continue
        ta, tb, tc = (np.array(r["theta_hat"]) for r in (a, b, c))
        d = max(np.max(np.abs(ta - tb)), np.max(np.abs(ta - tc)))
        worst = max(worst, d)
        agree += d <= 1e-6
    ok = acceptance(4, agree == len(recs[0]),
                    f"{agree}/{len(recs[0])} replications coincide, max gap {worst:.2e}")
    assert ok


def test_criterion_5_fixed_point_equivalence(acceptance):
    worst_obj = worst_theta = 0.0
    for k in range(50):
        rng = np.random.default_rng(1000 + k)
        p, n = 8, 30
        theta = np.zeros(p)
        m = rng.integers(1, 4)
        theta[rng.choice(p, m, replace=False)] = rng.uniform(0.5, 1.5, m) * rng.choice([-1, 1], m)
        data = generate_dgp(TrueModel(theta, 0.2, 0.3, 0.25, seed=1000 + k), n, p)
        mu, tau = practical_tuning(0.05, n, p, 0.2)
        comp, cfg = Compensation.known(0.3, p), EstimatorConfig(mu=2 * mu, tau=tau)
        lp = fit_compensated_mu(data, comp, cfg)
        fp = fixed_point_oracle(data, comp, cfg)
        worst_obj = max(worst_obj, abs(lp.objective - fp.t_hat))
        worst_theta = max(worst_theta, float(np.max(np.abs(lp.theta_hat - fp.theta_hat))))
    ok = acceptance(5, worst_obj <= 1e-6 and worst_theta <= 1e-5,
                    f"max objective gap {worst_obj:.1e}, max theta gap {worst_theta:.1e}")
    assert ok


def test_criterion_6_rate(acceptance):
    cfg = SimulationConfig(n=300, p=10, replications=100, lambdas=(0.5,),
                           estimators=("conic",), base_seed=0)
    scan = rate_scan(cfg, [300, 1200], workers=WORKERS)
    r = scan.rmse[1] / scan.rmse[0]
    ok = acceptance(6, 0.4 <= r <= 0.7, f"rmse ratio {r:.3f}, slope {scan.slope:.3f}")
    assert ok


def test_criterion_7_feasibility_and_cone(acceptance):
    n, p, lam, reps = 300, 10, 0.5, 500
    theta = np.r_[np.ones(5), np.zeros(5)]
    J = theta != 0
    comp = Compensation.known(0.45, p)
    feasible = cone = 0
    for r in range(reps):
        data = generate_dgp(TrueModel(theta, 0.128, 0.45, 0.25, seed=replication_seed(7, r)), n, p)
        tc = TuningConstants.default(0.128, 0.45, epsilon=0.05, m2=compute_m_k(data.Z, 2))
        mu, tau = theoretical_tuning(tc, n, p, 0.128, 0.45)
        a, B = score_terms(data.y, data.Z, comp.d_hat)
        feasible += np.max(np.abs(a - B @ theta)) <= mu * np.linalg.norm(theta) + tau
        delta = fit_conic(data, comp, EstimatorConfig(mu, tau, lam=lam)).theta_hat - theta
        cone += np.abs(delta[~J]).sum() <= (1 + lam) * np.abs(delta[J]).sum() + 1e-6
    ok = acceptance(7, feasible >= 0.9 * reps and cone >= 0.9 * reps,
                    f"feasible {feasible}/{reps}, cone {cone}/{reps}")
    assert ok


def _designs(count):
    for k in range(count):
        rng = np.random.default_rng(500 + k)
        p = 5 + k % 2
        X = rng.normal(size=(3 * p, p)) @ np.linalg.cholesky(ar1_covariance(p, rng.uniform(0, .6))).T
        yield X.T @ X / X.shape[0]


def test_criterion_8_sensitivities(acceptance):
    msgs = []
    I = np.eye(10)
    k_inf = kappa_exact(I, 2, 2.0, "inf")
    k_one = kappa_exact(I, 2, 2.0, "1")
    if abs(k_inf.value - 1) > 1e-8 or abs(k_one.value - 1 / 6) > 1e-8:
        msgs.append(f"identity values {k_inf.value:.10f}, {k_one.value:.10f}")
    for rep in (k_inf, k_one):
        if abs(ratio(I, rep.witness, rep.q) - rep.value) > 1e-8:
            msgs.append(f"identity witness for q={rep.q} off")
    s, u = 2, 1.0
    bad_bracket = bad_cmp = 0
    for psi in _designs(30):
        pr = kappa_local(psi, s, u, "pr", restarts=1)
        k1 = kappa_exact(psi, s, u, "1").value
        if not (math.sqrt(k1) - 1e-9 <= pr.lower <= pr.upper + 1e-9
                and abs(pr.lower - math.sqrt(k1)) <= 1e-9):
            bad_bracket += 1
        kinf = kappa_exact(psi, s, u, "inf").value
        # kappa_q >= (2s)^(-1/q) kappa_inf at u = 1: exact for q = 1, and no
        # point found by the q = 2 search may undercut it
        k2 = kappa_local(psi, s, u, "2", restarts=1)
        if k1 < kinf / (2 * s) - 1e-9 or k2.upper < (2 * s) ** -0.5 * kinf - 1e-9:
            bad_cmp += 1
    if bad_bracket:
        msgs.append(f"{bad_bracket}/30 invalid pr brackets")
    if bad_cmp:
        msgs.append(f"{bad_cmp}/30 violations of the kappa comparison inequality")
    ok = acceptance(8, not msgs, "; ".join(msgs)
                    or "identity exact, 30/30 brackets, 30/30 comparison inequality")
    assert ok


def _joint_cov(model, theta):
    top = theta @ model.Sigma @ theta + model.sigma ** 2
    cross = model.Sigma @ theta
    return np.block([[np.array([[top]]), cross[None, :]], [cross[:, None], model.cov_v]])


def test_criterion_9_minimax(acceptance):
    msgs = []
    pk = vg_packing(17, 2)
    if len(pk) != 16 or pk.min_pairwise_dist != 2:
        msgs.append(f"p=17 packing has {len(pk)} words, distance {pk.min_pairwise_dist}")
    for p, s, R, g in ((17, 2, 1.0, 1.0), (20, 4, 2.0, 0.3), (40, 8, 0.5, 0.1)):
        W = hypothesis_family(vg_packing(p, s), R, g).omega_bars
        if (np.any(np.count_nonzero(W[1:], axis=1) != s)
                or np.max(np.abs(np.linalg.norm(W, axis=1) - R)) > 1e-12):
            msgs.append(f"family p={p} s={s} breaks sparsity or radius")
    worst = 0.0
    for k in range(10):
        rng = np.random.default_rng(900 + k)
        p = 3 + k % 3
        model = KlModel(ar1_covariance(p, rng.uniform(0, 0.6)), rng.uniform(0.1, 0.6),
                        rng.uniform(0.2, 0.7))
        t1, t2 = rng.normal(size=p), rng.normal(size=p)
        if kl_exact(model, t1, t1) != 0.0:
            msgs.append("KL(t, t) != 0")
        P = multivariate_normal(cov=_joint_cov(model, t1))
        Q = multivariate_normal(cov=_joint_cov(model, t2))
        draws = P.rvs(size=1_000_000, random_state=rng)
        llr = P.logpdf(draws) - Q.logpdf(draws)
        z = abs(llr.mean() - kl_exact(model, t1, t2)) / (llr.std(ddof=1) / 1000.0)
        worst = max(worst, z)
    if worst > 3:
        msgs.append(f"Monte Carlo KL off by {worst:.2f} stderr")
    ok = acceptance(9, not msgs, "; ".join(msgs) or f"worst KL z-score {worst:.2f}")
    assert ok


def _independent_residuals(lp, blocks, x, duals):
    """Primal violation and duality gap evaluated from scratch."""
    viol = [0.0]
    if lp.A_ineq.size:
        viol.append(float(np.max(lp.A_ineq @ x - lp.b_ineq)))
    if lp.A_eq.size:
        viol.append(float(np.max(np.abs(lp.A_eq @ x - lp.b_eq))))
    viol.append(float(np.max(-x[lp.nonneg_mask], initial=0.0)))
    for t, idx in blocks:
        viol.append(float(np.hypot.reduce(x[idx]) - x[t]) if len(idx) else -x[t])
    obj = float(np.dot(lp.c, x))
    dual_obj = -float(np.dot(lp.b_ineq, duals.ineq)) - float(np.dot(lp.b_eq, duals.eq))
    return max(viol), abs(obj - dual_obj), obj


def _random_lp(rng, n, m, k):
    A = rng.normal(size=(m, n))
    E = rng.normal(size=(k, n))
    x0 = rng.uniform(0.1, 1.0, n)
    z = rng.uniform(0, 1, m)
    c = -A.T @ z - E.T @ rng.normal(size=k) + rng.uniform(0.1, 1.0, n)
    return LinearProgram(c=c, A_ineq=A, b_ineq=A @ x0 + rng.uniform(0, 1, m), A_eq=E,
                         b_eq=E @ x0, nonneg_mask=np.ones(n, bool))


def test_criterion_10_certification(acceptance):
    bad_cert = worst_cross = 0.0
    checked = 0
    for k in range(50):
        rng = np.random.default_rng(2000 + k)
        lp = _random_lp(rng, int(rng.integers(3, 10)), int(rng.integers(3, 12)),
                        int(rng.integers(0, 3)))
        a = solve_lp(lp)
        b = solve_socp(SecondOrderConeProgram(lp, []))
        ref = linprog(lp.c, A_ub=lp.A_ineq, b_ub=lp.b_ineq, A_eq=lp.A_eq if lp.A_eq.size else None,
                      b_eq=lp.b_eq if lp.A_eq.size else None, bounds=(0, None), method="highs")
        worst_cross = max(worst_cross, abs(a.objective - b.objective),
                          abs(a.objective - ref.fun))
        # a cone-carrying problem: the lp plus |x_1..| <= t with t bounded
        n = lp.c.size
        c2 = np.r_[0.1, lp.c]
        ext = LinearProgram(c=c2, A_ineq=np.c_[np.zeros(lp.A_ineq.shape[0]), lp.A_ineq],
                            b_ineq=lp.b_ineq, A_eq=np.c_[np.zeros(lp.A_eq.shape[0]), lp.A_eq],
                            b_eq=lp.b_eq, nonneg_mask=np.r_[False, lp.nonneg_mask])
        socp = SecondOrderConeProgram(ext, [(0, list(range(1, n + 1)))])
        c = solve_socp(socp)
        for res, prob, blocks in ((a, lp, []), (b, lp, []), (c, ext, socp.cone_blocks)):
            if res.status != OPTIMAL:
                continue
            checked += 1
            viol, gap, obj = _independent_residuals(prob, blocks, res.x, res.duals)
            if viol > 1e-8 or gap > 1e-8 * (1 + abs(obj)):
                bad_cert += 1
    ok = acceptance(10, bad_cert == 0 and worst_cross <= 1e-6,
                    f"{checked - int(bad_cert)}/{checked} certified, "
                    f"max gap across LP, SOCP and HiGHS {worst_cross:.1e}")
    assert ok
