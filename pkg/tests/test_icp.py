import numpy as np
import pytest

from arpsreg.core import RigidTransform, apply_transform, axis_angle_to_matrix, rotation_angle_deg
from arpsreg.data import PairConfig, gen_shape, generate_pairs, make_pair
from arpsreg.icp import IcpConfig, correspondence_residual, icp_refine, nearest_neighbor, NearestNeighborIndex


def brute_nn(q, ref, exclude_self=False):
    d = np.sqrt(((q[:, None] - ref[None]) ** 2).sum(-1))
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    idx = np.array([min(range(len(ref)), key=lambda j: (d[i, j], j)) for i in range(len(q))])
    return idx, d[np.arange(len(q)), idx]


class TestNearestNeighbor:
    def test_self_query(self, rng):
        pts = rng.normal(size=(50, 3))
        idx, d = nearest_neighbor(pts, pts)
        np.testing.assert_array_equal(idx, np.arange(50))
        assert np.all(d == 0)
        idx, _ = nearest_neighbor(pts, pts, exclude_self=True)
        np.testing.assert_array_equal(idx, brute_nn(pts, pts, exclude_self=True)[0])

    def test_exhaustive_oracle(self, rng):
        q, ref = rng.normal(size=(512, 3)), rng.normal(size=(512, 3))
        idx, d = nearest_neighbor(q, ref)
        bi, bd = brute_nn(q, ref)
        np.testing.assert_array_equal(idx, bi)
        np.testing.assert_allclose(d, bd, atol=1e-12)

    def test_single_reference(self, rng):
        idx, _ = nearest_neighbor(rng.normal(size=(10, 3)), np.ones((1, 3)))
        assert np.all(idx == 0)

    def test_ties_to_lower_index(self):
        ref = np.array([[1.0, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [1, 0, 0]])
        idx, d = nearest_neighbor(np.zeros((1, 3)), ref)
        assert idx[0] == 0 and d[0] == 1.0
        idx, _ = nearest_neighbor(np.array([[1.0, 0, 0]]), ref)
        assert idx[0] == 0

    def test_grid_ties_oracle(self, rng):
        g = np.arange(3.0)
        ref = np.array([[x, y, z] for x in g for y in g for z in g])
        q = rng.integers(0, 5, size=(40, 3)) / 2.0
        np.testing.assert_array_equal(nearest_neighbor(q, ref)[0], brute_nn(q, ref)[0])


@pytest.fixture(scope="module")
def shape():
    return gen_shape("notched_box", 4096, np.random.default_rng(0))


class TestIcp:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            IcpConfig(max_iters=0)
        with pytest.raises(ValueError):
            IcpConfig(convergence_tol=0.0)

    def test_aligned_pair_is_fixed_point(self, shape):
        pts = shape[::8]
        res = icp_refine(pts, pts)
        np.testing.assert_allclose(res.transform.R, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(res.transform.t, 0, atol=1e-9)
        assert res.status == "converged"
        assert res.residuals[0] == 0.0

    def test_recovers_small_offset(self, shape):
        pts = shape[::4]
        rng = np.random.default_rng(5)
        T_gt = RigidTransform(axis_angle_to_matrix(rng.normal(size=3), np.deg2rad(5.0)), np.array([0.05, 0.0, 0.0]))
        res = icp_refine(pts, apply_transform(T_gt, pts), cfg=IcpConfig(max_iters=100))
        assert rotation_angle_deg(res.transform.R, T_gt.R) < 0.1
        assert np.linalg.norm(res.transform.t - T_gt.t) < 1e-3

    def test_exact_within_basin(self, shape):
        pts = shape[::4]
        rng = np.random.default_rng(9)
        for _ in range(5):
            T_gt = RigidTransform(axis_angle_to_matrix(rng.normal(size=3), np.deg2rad(rng.uniform(0, 10))), rng.uniform(-0.02, 0.02, 3))
            res = icp_refine(pts, apply_transform(T_gt, pts), cfg=IcpConfig(max_iters=200, convergence_tol=1e-10))
            assert rotation_angle_deg(res.transform.R, T_gt.R) < 1e-6

    def test_residual_monotone_on_partial_pairs(self):
        pairs = generate_pairs(20, PairConfig(mode="partial", n_points=256, noise_sigma=0.01), seed=4)
        for p in pairs:
            res = icp_refine(p.source, p.target)
            assert np.all(np.diff(res.residuals) <= 1e-9)

    def test_never_worse_than_init(self, shape):
        rng = np.random.default_rng(2)
        cfg = PairConfig(mode="partial", n_points=256, noise_sigma=0.02)
        for _ in range(10):
            p = make_pair(shape, cfg, rng)
            T0 = RigidTransform(axis_angle_to_matrix(rng.normal(size=3), np.deg2rad(30)) @ p.T_gt.R, p.T_gt.t)
            for icfg in (IcpConfig(), IcpConfig(max_correspondence_dist=0.1)):
                res = icp_refine(p.source, p.target, T0, icfg)
                index = NearestNeighborIndex(p.target)
                d = icfg.max_correspondence_dist
                assert correspondence_residual(p.source, index, res.transform, d) <= correspondence_residual(p.source, index, T0, d) + 1e-9

    def test_all_filtered_returns_init(self, shape):
        pts = shape[::16]
        T0 = RigidTransform(np.eye(3), np.array([10.0, 0, 0]))
        res = icp_refine(pts, pts, T0, IcpConfig(max_correspondence_dist=0.5))
        assert res.status == "no_correspondences"
        assert res.transform is T0
