import mpmath
import numpy as np
import pytest
from helpers import brute_force_rigid_min, random_rigid

from arpsreg.core import (
    PoseSamplingConfig,
    RigidTransform,
    apply_transform,
    axis_angle_to_matrix,
    random_transform,
    rotation_angle_deg,
    weighted_umeyama,
)
from arpsreg.gmm import (
    SIGMA_FLOOR,
    GmmParams,
    em_register,
    fit_gmm_em,
    gmm_from_memberships,
    gmm_log_likelihood,
    gmr_objective,
    gmr_solve,
    gmr_weights,
    responsibilities,
)

mpmath.mp.dps = 50


def random_gamma(rng, n, j):
    g = rng.uniform(size=(n, j)) ** 3
    return g / g.sum(axis=1, keepdims=True)


class TestFromMemberships:
    def test_one_hot_clusters(self, rng):
        a = rng.normal(size=(10, 3))
        b = rng.normal(size=(6, 3)) + 20
        g = np.zeros((16, 2))
        g[:10, 0] = 1
        g[10:, 1] = 1
        p = gmm_from_memberships(np.vstack([a, b]), g)
        np.testing.assert_allclose(p.mu, [a.mean(0), b.mean(0)], atol=1e-14)
        np.testing.assert_allclose(p.pi, [10 / 16, 6 / 16])
        np.testing.assert_allclose(p.sigma2[0], ((a - a.mean(0)) ** 2).sum() / 30, rtol=1e-12)

    def test_uniform_memberships(self, rng):
        x = rng.normal(size=(40, 3))
        p = gmm_from_memberships(x, np.full((40, 5), 0.2))
        np.testing.assert_allclose(p.mu, np.tile(x.mean(0), (5, 1)), atol=1e-14)
        np.testing.assert_allclose(p.pi, 0.2)

    def test_high_precision_oracle(self, rng):
        x = rng.normal(size=(32, 3))
        g = random_gamma(rng, 32, 4)
        p = gmm_from_memberships(x, g)
        X = [[mpmath.mpf(float(v)) for v in row] for row in x]
        G = [[mpmath.mpf(float(v)) for v in row] for row in g]
        for j in range(4):
            mass = mpmath.fsum(G[i][j] for i in range(32))
            mu = [mpmath.fsum(G[i][j] * X[i][d] for i in range(32)) / mass for d in range(3)]
            s2 = mpmath.fsum(G[i][j] * mpmath.fsum((X[i][d] - mu[d]) ** 2 for d in range(3)) for i in range(32)) / (3 * mass)
            assert abs(float(mass / 32) - p.pi[j]) < 1e-14
            np.testing.assert_allclose(p.mu[j], [float(m) for m in mu], rtol=0, atol=1e-13)
            assert abs(float(s2) - p.sigma2[j]) < 1e-13

    def test_permutation_invariance(self, rng):
        x = rng.normal(size=(64, 3))
        g = random_gamma(rng, 64, 6)
        perm = rng.permutation(64)
        a, b = gmm_from_memberships(x, g), gmm_from_memberships(x[perm], g[perm])
        np.testing.assert_allclose(a.pi, b.pi, atol=1e-12)
        np.testing.assert_allclose(a.mu, b.mu, atol=1e-12)
        np.testing.assert_allclose(a.sigma2, b.sigma2, atol=1e-12)

    def test_invariants_and_empty(self, rng):
        x = rng.normal(size=(20, 3))
        g = random_gamma(rng, 20, 4)
        g[:, 3] = 0.0
        g /= g.sum(axis=1, keepdims=True)
        p = gmm_from_memberships(x, g)
        assert abs(p.pi.sum() - 1) < 1e-9
        assert np.all(p.sigma2 >= 0)
        assert p.empty.tolist() == [False, False, False, True]
        assert p.sigma2[3] == SIGMA_FLOOR and np.all(p.mu[3] == 0)

    @pytest.mark.parametrize("bad", [np.full((4, 2), 0.4), np.array([[1.5, -0.5]] * 4)])
    def test_rejects_non_stochastic(self, rng, bad):
        with pytest.raises(ValueError):
            gmm_from_memberships(rng.normal(size=(4, 3)), bad)


class TestLikelihood:
    def test_single_component_closed_form(self):
        p = GmmParams(pi=np.ones(1), mu=np.zeros((1, 3)), sigma2=np.ones(1))
        ll = gmm_log_likelihood(np.zeros((5, 3)), p)
        assert ll == pytest.approx(5 * -1.5 * np.log(2 * np.pi), abs=1e-12)

    def test_far_outlier_finite(self):
        p = GmmParams(pi=np.ones(1), mu=np.zeros((1, 3)), sigma2=np.ones(1))
        ll = gmm_log_likelihood(np.array([[100.0, 0, 0]]), p)
        assert np.isfinite(ll)
        assert ll == pytest.approx(-1.5 * np.log(2 * np.pi) - 5000.0, rel=1e-12)

    def test_naive_high_precision(self, rng):
        x = rng.normal(size=(10, 3))
        p = GmmParams(pi=np.array([0.2, 0.5, 0.3]), mu=rng.normal(size=(3, 3)), sigma2=np.array([0.3, 1.0, 2.5]))
        total = mpmath.mpf(0)
        for xi in x:
            s = mpmath.mpf(0)
            for j in range(3):
                d2 = mpmath.fsum((mpmath.mpf(float(xi[d])) - mpmath.mpf(float(p.mu[j, d]))) ** 2 for d in range(3))
                var = mpmath.mpf(float(p.sigma2[j]))
                s += mpmath.mpf(float(p.pi[j])) * (2 * mpmath.pi * var) ** mpmath.mpf(-1.5) * mpmath.exp(-d2 / (2 * var))
            total += mpmath.log(s)
        assert abs(gmm_log_likelihood(x, p) - float(total)) < 1e-9

    def test_all_empty_raises(self):
        p = GmmParams(pi=np.array([0.5, 0.5]), mu=np.zeros((2, 3)), sigma2=np.ones(2), empty=np.array([True, True]))
        with pytest.raises(ValueError):
            gmm_log_likelihood(np.zeros((2, 3)), p)

    def test_responsibilities_rows_sum_to_one(self, rng):
        p = GmmParams(pi=np.full(4, 0.25), mu=rng.normal(size=(4, 3)), sigma2=np.full(4, 0.01))
        r = responsibilities(rng.normal(size=(50, 3)) * 30, p)
        np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)


class TestEm:
    def test_fit_trace_monotone(self, rng):
        x = np.vstack([rng.normal(size=(50, 3)) * 0.1 + c for c in rng.normal(size=(4, 3)) * 2])
        fit = fit_gmm_em(x, 4, seed=1)
        assert np.all(np.diff(fit.ll_trace) >= -1e-9)

    def test_identity_when_aligned(self, rng):
        x = rng.uniform(-1, 1, size=(200, 3))
        T, _ = em_register(x, x, n_components=8)
        assert rotation_angle_deg(T.R, np.eye(3)) < 0.5
        assert np.linalg.norm(T.t) < 0.01

    def test_recovers_small_rotation(self, rng):
        x = rng.uniform(-1, 1, size=(300, 3)) * [1.0, 0.6, 0.3]
        T_gt = RigidTransform(axis_angle_to_matrix(rng.normal(size=3), np.deg2rad(5.0)), np.array([0.05, -0.03, 0.02]))
        T, _ = em_register(x, apply_transform(T_gt, x), n_components=16)
        assert rotation_angle_deg(T.R, T_gt.R) < 0.5
        assert np.linalg.norm(T.t - T_gt.t) < 0.01

    def test_trace_non_decreasing_on_random_instances(self):
        for k in range(20):
            rng = np.random.default_rng(100 + k)
            x = rng.normal(size=(120, 3)) * rng.uniform(0.3, 1.0, size=3)
            T_gt = random_transform(rng, PoseSamplingConfig(30.0, 0.3))
            y = apply_transform(T_gt, x) + rng.normal(scale=0.02, size=x.shape)
            _, trace = em_register(x, y, n_components=6, max_iters=30, seed=k)
            assert np.all(np.diff(trace) >= -1e-9), k

    def test_rejects_small_j(self, rng):
        with pytest.raises(ValueError):
            em_register(rng.normal(size=(10, 3)), rng.normal(size=(10, 3)), n_components=2)


class TestGmrSolve:
    def test_duplicated_consistent_memberships_exact(self, rng):
        for _ in range(20):
            x = rng.normal(size=(64, 3))
            T_gt = random_rigid(rng)
            g = random_gamma(rng, 64, 8)
            perm = rng.permutation(64)
            T = gmr_solve(x, g, apply_transform(T_gt, x)[perm], g[perm])
            assert rotation_angle_deg(T.R, T_gt.R) < 1e-6
            assert np.linalg.norm(T.t - T_gt.t) < 1e-9

    def test_reduces_to_weighted_umeyama(self, rng):
        # one-hot memberships: each component is a pair of points with hand-checkable means
        x = rng.normal(size=(8, 3))
        y = rng.normal(size=(8, 3))
        g = np.zeros((8, 4))
        g[np.arange(8), np.arange(8) % 4] = 1.0
        T = gmr_solve(x, g, y, g)
        ms = np.array([x[j::4].mean(0) for j in range(4)])
        mt = np.array([y[j::4].mean(0) for j in range(4)])
        st2 = np.array([((y[j::4] - mt[j]) ** 2).sum() / 6 for j in range(4)])
        U = weighted_umeyama(ms, mt, 0.25 / st2)
        np.testing.assert_allclose(T.R, U.R, atol=1e-12)
        np.testing.assert_allclose(T.t, U.t, atol=1e-12)

    def test_brute_force_objective(self, rng):
        for _ in range(2):
            x, y = rng.normal(size=(40, 3)), rng.normal(size=(40, 3))
            gs, gt = random_gamma(rng, 40, 5), random_gamma(rng, 40, 5)
            ps, pt = gmm_from_memberships(x, gs), gmm_from_memberships(y, gt)
            ours = gmr_objective(gmr_solve(x, gs, y, gt), ps, pt)
            oracle = brute_force_rigid_min(lambda T: gmr_objective(T, ps, pt))
            assert abs(ours - oracle) < 1e-6

    def test_symmetric_weights_flag(self, rng):
        x, y = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
        gs, gt = random_gamma(rng, 30, 4), random_gamma(rng, 30, 4)
        ps, pt = gmm_from_memberships(x, gs), gmm_from_memberships(y, gt)
        np.testing.assert_allclose(gmr_weights(ps, pt), ps.pi / pt.sigma2)
        np.testing.assert_allclose(gmr_weights(ps, pt, True), (ps.pi + pt.pi) / (ps.sigma2 + pt.sigma2))
        T = gmr_solve(x, gs, y, gt, symmetric_weights=True)
        U = weighted_umeyama(ps.mu, pt.mu, gmr_weights(ps, pt, True))
        np.testing.assert_allclose(T.R, U.R, atol=1e-12)

    def test_skips_empty_and_requires_three(self, rng):
        x, y = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
        g = random_gamma(rng, 30, 5)
        g[:, 4] = 0
        g /= g.sum(1, keepdims=True)
        T = gmr_solve(x, g, y, g)
        assert T.is_valid()
        g2 = np.zeros((30, 5))
        g2[:, 0] = 0.5
        g2[:, 1] = 0.5
        with pytest.raises(ValueError):
            gmr_solve(x, g2, y, g2)

    def test_mismatched_j(self, rng):
        x = rng.normal(size=(10, 3))
        with pytest.raises(ValueError):
            gmr_solve(x, random_gamma(rng, 10, 3), x, random_gamma(rng, 10, 4))
