import json

import numpy as np
import pytest
from scipy.spatial import cKDTree

from arpsreg.core import PoseSamplingConfig, apply_transform, matrix_to_euler_zyx
from arpsreg.data import (
    SHAPE_KINDS,
    PairConfig,
    PointCloudParseError,
    gen_shape,
    generate_pairs,
    load_pointset,
    make_pair,
    median_spacing,
    overlap_fraction,
    read_manifest,
    sample_surface,
    save_pointset,
    symmetric_overlap,
    write_dataset,
)


@pytest.fixture(scope="module")
def shapes():
    return {k: gen_shape(k, 4096, np.random.default_rng(i)) for i, k in enumerate(SHAPE_KINDS)}


def test_raw_sphere_on_unit_sphere():
    r = np.linalg.norm(sample_surface("sphere", 4096, np.random.default_rng(0)), axis=1)
    assert np.all((r >= 0.99) & (r <= 1.0 + 1e-12))


@pytest.mark.parametrize("kind", SHAPE_KINDS)
def test_shape_deterministic_and_normalized(kind):
    a = gen_shape(kind, 2048, np.random.default_rng(5))
    b = gen_shape(kind, 2048, np.random.default_rng(5))
    assert a.shape == (2048, 3)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 1.0) and np.isclose(np.abs(a).max(), 1.0)


def test_notched_box_centroid_off_center(shapes):
    pts = shapes["notched_box"]
    bbox_center = 0.5 * (pts.min(0) + pts.max(0))
    assert np.linalg.norm(pts.mean(0) - bbox_center) > 0.01


def test_unknown_shape():
    with pytest.raises(ValueError):
        gen_shape("teapot", 100, np.random.default_rng(0))


def test_duplicated_pair_is_exact_permutation(shapes):
    cfg = PairConfig(mode="duplicated", n_points=256, noise_sigma=0.0)
    pair = make_pair(shapes["torus"], cfg, np.random.default_rng(1))
    moved = apply_transform(pair.T_gt, pair.source)
    d, _ = cKDTree(pair.target).query(moved)
    assert d.max() < 1e-12
    a = moved[np.lexsort(moved.T)]
    b = pair.target[np.lexsort(pair.target.T)]
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_partial_pair_overlap_and_size(shapes):
    cfg = PairConfig(mode="partial", n_points=512, noise_sigma=0.0)
    for i, kind in enumerate(SHAPE_KINDS):
        pair = make_pair(shapes[kind], cfg, np.random.default_rng(10 + i))
        assert pair.source.shape == pair.target.shape == (512, 3)
        moved = apply_transform(pair.T_gt, pair.source)
        assert overlap_fraction(moved, pair.target) >= 0.70
        assert symmetric_overlap(moved, pair.target) >= 0.70


def hausdorff(a, b):
    # brute force, independent of the kd-tree
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return max(d.min(1).max(), d.min(0).max())


@pytest.mark.parametrize("kind", SHAPE_KINDS)
def test_unduplicated_pair_hausdorff(shapes, kind):
    cfg = PairConfig(mode="unduplicated", n_points=1024, noise_sigma=0.0)
    pair = make_pair(shapes[kind], cfg, np.random.default_rng(3))
    moved = apply_transform(pair.T_gt, pair.source)
    assert hausdorff(moved, pair.target) < 2 * median_spacing(pair.target)
    a = moved[np.lexsort(moved.T)]
    b = pair.target[np.lexsort(pair.target.T)]
    assert not np.allclose(a, b, atol=1e-9)


def test_noise_on_target_only(shapes):
    cfg = PairConfig(mode="duplicated", n_points=256, noise_sigma=0.05)
    pair = make_pair(shapes["sphere"], cfg, np.random.default_rng(2))
    moved = apply_transform(pair.T_gt, pair.source)
    d, _ = cKDTree(pair.target).query(moved)
    assert 0.01 < np.median(d) < 0.2
    # source is an exact subsample of the shape
    d_src, _ = cKDTree(shapes["sphere"]).query(pair.source)
    assert d_src.max() == 0.0


def test_centroids_are_full_shape_centroid(shapes):
    cfg = PairConfig(mode="partial", n_points=512, noise_sigma=0.0)
    pair = make_pair(shapes["notched_box"], cfg, np.random.default_rng(4))
    c = shapes["notched_box"].mean(0)
    np.testing.assert_allclose(pair.source_centroid_gt, c)
    np.testing.assert_allclose(pair.target_centroid_gt, apply_transform(pair.T_gt, c[None])[0])
    # and not the centroid of the crop
    assert np.linalg.norm(pair.source.mean(0) - c) > 1e-3


def test_pose_ranges_over_many_pairs():
    shape = gen_shape("sphere", 64, np.random.default_rng(0))
    cfg = PairConfig(mode="duplicated", n_points=8, noise_sigma=0.0)
    rng = np.random.default_rng(0)
    lim = np.deg2rad(45) + 1e-9
    for _ in range(10_000):
        T = make_pair(shape, cfg, rng).T_gt
        assert max(abs(a) for a in matrix_to_euler_zyx(T.R)) <= lim
        assert np.linalg.norm(T.t) <= 0.5 + 1e-12


def test_overlap_unattainable_raises(shapes):
    cfg = PairConfig(mode="partial", n_points=512, overlap_min=1.0, noise_sigma=0.0)
    with pytest.raises(RuntimeError):
        make_pair(shapes["torus"], cfg, np.random.default_rng(0), max_retries=3)


def test_pair_config_validation():
    with pytest.raises(ValueError):
        PairConfig(n_points=4)
    with pytest.raises(ValueError):
        PairConfig(overlap_min=0.0)
    with pytest.raises(ValueError):
        PairConfig(mode="sideways")


def test_generate_pairs_deterministic():
    cfg = PairConfig(mode="partial", n_points=128, noise_sigma=0.01, pose=PoseSamplingConfig())
    a = generate_pairs(5, cfg, seed=3)
    b = generate_pairs(5, cfg, seed=3)
    for p, q in zip(a, b):
        assert np.array_equal(p.source, q.source) and np.array_equal(p.target, q.target)
        assert np.array_equal(p.T_gt.R, q.T_gt.R)


class TestIO:
    @pytest.mark.parametrize("suffix", [".ply", ".xyz"])
    def test_round_trip_bitwise(self, tmp_path, rng, suffix):
        pts = rng.normal(size=(257, 3)) * 1e3
        path = tmp_path / f"cloud{suffix}"
        save_pointset(path, pts)
        assert np.array_equal(load_pointset(path), pts)

    def test_ascii_fixture(self, tmp_path):
        path = tmp_path / "three.xyz"
        path.write_text("0 0 0\n1.5 -2 3\n# comment\n\n1e-3 2 4.25\n")
        np.testing.assert_array_equal(load_pointset(path), [[0, 0, 0], [1.5, -2, 3], [1e-3, 2, 4.25]])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.xyz"
        path.write_text("")
        with pytest.raises(PointCloudParseError):
            load_pointset(path)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0\n1 2\n")
        with pytest.raises(PointCloudParseError, match=":2:"):
            load_pointset(path)

    def test_truncated_ply(self, tmp_path, rng):
        path = tmp_path / "t.ply"
        save_pointset(path, rng.normal(size=(4, 3)))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(PointCloudParseError):
            load_pointset(path)

    def test_manifest_round_trip(self, tmp_path):
        pairs = generate_pairs(3, PairConfig(mode="duplicated", n_points=32, noise_sigma=0.0), seed=1)
        manifest = write_dataset(tmp_path, pairs, seed=1)
        records = [json.loads(line) for line in manifest.read_text().splitlines()]
        assert [r["pair_id"] for r in records] == [0, 1, 2]
        assert all(len(r["T_gt"]) == 12 for r in records)
        loaded = read_manifest(manifest)
        for (rec, p), q in zip(loaded, pairs):
            assert np.array_equal(p.source, q.source)
            assert np.array_equal(p.T_gt.R, q.T_gt.R) and np.array_equal(p.T_gt.t, q.T_gt.t)
            assert rec["mode"] == "duplicated"
