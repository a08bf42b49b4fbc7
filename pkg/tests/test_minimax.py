import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from eivsparse.errors import DimensionError
from eivsparse.minimax import (KlModel, family_kl, gamma_select, hamming_matrix,
                               hypothesis_family, kl_exact, kl_bound_constant, separation,
                               vg_packing)
from eivsparse.model import ar1_covariance


def joint_cov(model, theta):
    """Covariance of ``(U, V)`` with ``U = theta'X + xi`` and ``V = X + W``."""
    S = model.Sigma
    top = theta @ S @ theta + model.sigma ** 2
    cross = S @ theta
    return np.block([[np.array([[top]]), cross[None, :]], [cross[:, None], model.cov_v]])


def mc_kl(model, t1, t2, size, seed):
    rng = np.random.default_rng(seed)
    P = multivariate_normal(cov=joint_cov(model, t1))
    Q = multivariate_normal(cov=joint_cov(model, t2))
    draws = P.rvs(size=size, random_state=rng)
    llr = P.logpdf(draws) - Q.logpdf(draws)
    return llr.mean(), llr.std(ddof=1) / math.sqrt(size)


def test_packing_p17_s2():
    pk = vg_packing(17, 2)
    assert len(pk) == 16
    assert pk.min_pairwise_dist == 2 > 2 / 16
    assert np.all(pk.codewords.sum(axis=1) == 1)


@pytest.mark.parametrize("p,s", [(5, 5), (12, 4), (30, 6), (40, 16)])
def test_packing_invariants(p, s):
    pk = vg_packing(p, s, seed=1)
    assert len(pk) >= 1
    assert pk.codewords.shape[1] == p - 1
    assert np.all(pk.codewords.sum(axis=1) == s - 1)
    if len(pk) > 1:
        D = hamming_matrix(pk.codewords)
        off = D[~np.eye(len(pk), dtype=bool)]
        assert off.min() > s / 16
        assert off.min() == pk.min_pairwise_dist


def test_packing_reports_target():
    pk = vg_packing(30, 3, c1_prime=0.1)
    assert pk.meets_target == (pk.log_size >= 0.1 * 3 * math.log(10))
    short = vg_packing(10, 2, c1_prime=10.0)
    assert len(short) == 9 and not short.meets_target


def test_packing_rejects_small_s():
    with pytest.raises(ValueError):
        vg_packing(10, 1)


@pytest.mark.parametrize("p,s,R,gamma", [(17, 2, 1.0, 1.0), (20, 4, 2.5, 0.3),
                                         (30, 6, 0.7, 0.05)])
def test_family_invariants(p, s, R, gamma):
    fam = hypothesis_family(vg_packing(p, s), R, gamma)
    W = fam.omega_bars
    assert np.count_nonzero(W[0]) == 1
    assert np.all(np.count_nonzero(W[1:], axis=1) == s)
    assert np.max(np.abs(np.linalg.norm(W, axis=1) - R)) <= 1e-12


def test_family_small_gamma_limit():
    fam = hypothesis_family(vg_packing(10, 3), 2.0, 1e-9)
    assert np.max(np.abs(fam.omega_bars - fam.omega_bars[0])) < 1e-8


def test_family_unit_norm_example():
    fam = hypothesis_family(vg_packing(17, 2), 1.0, 1.0)
    assert np.sum(fam.omega_bars[1] ** 2) == pytest.approx(1.0, abs=1e-15)


def test_family_rejects_nonpositive():
    with pytest.raises(ValueError):
        hypothesis_family(vg_packing(10, 2), 1.0, 0.0)


@pytest.mark.parametrize("q", ["1", "2", "inf"])
def test_separation_constant(q):
    fam = hypothesis_family(vg_packing(20, 4, seed=3), 1.5, 0.4)
    sep = separation(fam, q)
    W = fam.omega_bars
    ordq = np.inf if q == "inf" else float(q)
    brute = min(np.linalg.norm(W[i] - W[j], ord=ordq)
                for i in range(len(W)) for j in range(i + 1, len(W)))
    assert sep["min_dist"] == pytest.approx(brute, rel=1e-12)
    assert sep["c"] > 0
    assert sep["min_dist"] >= sep["c"] * sep["unit"] * (1 - 1e-12)


def test_gamma_select_examples():
    big_R = gamma_select(100, 40, 4, 1e6)
    assert big_R == pytest.approx(math.sqrt(0.1 * math.log(10) / 1600), rel=1e-9)
    assert gamma_select(400, 40, 4, 1.0) == pytest.approx(gamma_select(100, 40, 4, 1.0) / 2)
    R = 0.8
    assert gamma_select(16, math.e * 3, 3, R, 1.0, 1.0) == pytest.approx(
        math.sqrt((1 + R ** 2) / (256 * R ** 2)))
    with pytest.raises(ValueError):
        gamma_select(0, 10, 2, 1.0)


def test_kl_model_spectrum():
    m = KlModel(ar1_covariance(6, 0.25), 0.128, 0.45)
    g = np.linalg.eigvalsh(m.Gamma)
    assert 0 < g.min() and g.max() < 1
    assert np.allclose(m.Gamma, m.Gamma.T)
    with pytest.raises(ValueError):
        KlModel(np.diag([1.0, -1.0]), 1.0, 1.0)
    with pytest.raises(DimensionError):
        kl_exact(m, np.ones(3), np.ones(6))


def test_kl_zero_and_nonnegative():
    rng = np.random.default_rng(0)
    m = KlModel(ar1_covariance(5, 0.4), 0.3, 0.5)
    t = rng.normal(size=5)
    assert kl_exact(m, t, t) == 0.0
    for _ in range(100):
        assert kl_exact(m, rng.normal(size=5), rng.normal(size=5)) >= 0.0


def test_kl_symmetric_for_equal_variances():
    m = KlModel(np.eye(4), 0.2, 0.6)
    t1 = np.r_[1.0, 0.0, 0.0, 0.0]
    t2 = np.r_[0.0, 1.0, 0.0, 0.0]
    assert kl_exact(m, t1, t2) == pytest.approx(kl_exact(m, t2, t1), rel=1e-14)
    assert kl_exact(m, t1, t2, n=7) == pytest.approx(7 * kl_exact(m, t1, t2))


@pytest.mark.parametrize("seed", range(3))
def test_kl_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    p = 3
    m = KlModel(ar1_covariance(p, rng.uniform(0, 0.5)), rng.uniform(0.1, 0.5),
                rng.uniform(0.2, 0.6))
    t1, t2 = rng.normal(size=p), rng.normal(size=p)
    est, se = mc_kl(m, t1, t2, 200_000, seed)
    assert abs(est - kl_exact(m, t1, t2)) <= 4 * se


def test_bound_constant_and_family_kl():
    pk = vg_packing(12, 3)
    fam = hypothesis_family(pk, 1.0, 0.2)
    m = KlModel(ar1_covariance(12, 0.25), 0.128, 0.45)
    kls = family_kl(m, fam, 50)
    assert kls.shape == (len(pk),) and np.all(kls >= 0)
    W = fam.omega_bars
    pairs = [(W[j], W[0]) for j in range(1, len(W))]
    C = kl_bound_constant(m, pairs, n=50)
    for t1, t2 in pairs:
        bound = C * 50 / (1 + t1 @ t1) * (np.sum((t1 - t2) ** 2) + abs(m.c(t1) - m.c(t2)))
        assert kl_exact(m, t1, t2, 50) <= bound * (1 + 1e-12)
