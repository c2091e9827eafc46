"""Synthetic shapes, registration pairs and point-cloud file I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    PoseSamplingConfig,
    RigidTransform,
    apply_transform,
    as_points,
    normalize_to_unit_cube,
    random_transform,
    random_unit_vector,
)
from .seeding import derive_rng

SHAPE_KINDS = ("sphere", "torus", "notched_box", "superellipsoid")
PAIR_MODES = ("duplicated", "unduplicated", "partial")


class PointCloudParseError(ValueError):
    pass


class OverlapError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# shapes


def _sphere(n, rng):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _torus(n, rng, major=0.7, minor=0.3):
    out = []
    while sum(len(o) for o in out) < n:
        u = rng.uniform(0, 2 * np.pi, size=2 * n)
        v = rng.uniform(0, 2 * np.pi, size=2 * n)
        # area element is proportional to (major + minor cos v)
        keep = rng.uniform(0, major + minor, size=2 * n) < major + minor * np.cos(v)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        out.append(np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1))
    return np.concatenate(out)[:n]


def _box(n, rng, half=(1.0, 0.6, 0.4)):
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1, 1, size=(n, 3)) * np.array(half)
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = sign * np.array(half)[axis]
    return pts


def _superellipsoid(n, rng, radii=(1.0, 0.7, 0.5), e1=0.5, e2=0.5):
    def spow(x, e):
        return np.sign(x) * np.abs(x) ** e

    eta = rng.uniform(-np.pi / 2, np.pi / 2, size=n)
    omega = rng.uniform(-np.pi, np.pi, size=n)
    a, b, c = radii
    x = a * spow(np.cos(eta), e1) * spow(np.cos(omega), e2)
    y = b * spow(np.cos(eta), e1) * spow(np.sin(omega), e2)
    z = c * spow(np.sin(eta), e1)
    return np.stack([x, y, z], axis=1)


def sample_surface(kind: str, n: int, rng: np.random.Generator, variation: float = 0.0) -> np.ndarray:
    """Raw, symmetric primitive surface samples (no symmetry breaking, no normalization)."""
    jit = 1.0 + variation * rng.uniform(-1, 1, size=3)
    if kind == "sphere":
        return _sphere(n, rng)
    if kind == "torus":
        return _torus(n, rng, major=0.7 * jit[0], minor=0.3 * jit[1])
    if kind == "notched_box":
        return _box(n, rng, half=tuple(np.array([1.0, 0.6, 0.4]) * jit))
    if kind == "superellipsoid":
        return _superellipsoid(n, rng, radii=tuple(np.array([1.0, 0.7, 0.5]) * jit))
    raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")


def _break_symmetry(kind, pts, rng):
    # bump: radial push around a fixed direction, notch: drop a corner region
    bump_dir = np.array([0.6, -0.5, 0.62])
    bump_dir /= np.linalg.norm(bump_dir)
    if kind == "notched_box":
        keep = ~((pts[:, 0] > 0.35) & (pts[:, 1] > 0.05) & (pts[:, 2] > -0.1))
        pts = pts[keep]
        # a raised ridge on the -y face near -x
        ridge = (pts[:, 1] < -0.59) & (pts[:, 0] < -0.3)
        pts = pts.copy()
        pts[ridge, 1] -= 0.25 * np.exp(-((pts[ridge, 0] + 0.65) ** 2) / 0.02)
        return pts
    if kind == "torus":
        ang = np.arctan2(pts[:, 1], pts[:, 0])
        pts = pts[~((ang > 0.2) & (ang < 1.0))]
        bump_dir = np.array([-0.7, -0.7, 0.3])
    elif kind == "sphere":
        pts = pts[pts[:, 2] < 0.75]
    elif kind == "superellipsoid":
        pts = pts.copy()
        pts[:, 0] *= 1.0 + 0.35 * pts[:, 2]  # taper
    r = np.linalg.norm(pts, axis=1, keepdims=True)
    u = pts / np.maximum(r, 1e-12)
    cos = u @ (bump_dir / np.linalg.norm(bump_dir))
    return pts + 0.3 * np.exp(-(1.0 - cos) / 0.04)[:, None] * u


def gen_shape(
    kind: str,
    n_dense: int,
    rng: np.random.Generator,
    variation: float = 0.0,
    asymmetric: bool = True,
) -> np.ndarray:
    """Dense, normalized sample of a synthetic shape.

    With ``asymmetric`` a notch and a bump are added so that the shape has
    no rotational symmetry and registration is well posed.
    """
    if not asymmetric:
        return normalize_to_unit_cube(sample_surface(kind, n_dense, rng, variation))[0]
    batch = int(n_dense * 1.6) + 16
    chunks = []
    while sum(len(c) for c in chunks) < n_dense:
        chunks.append(_break_symmetry(kind, sample_surface(kind, batch, rng, variation), rng))
    pts = np.concatenate(chunks)[:n_dense]
    return normalize_to_unit_cube(pts)[0]


# --------------------------------------------------------------------------
# pairs


@dataclass(frozen=True)
class PairConfig:
    mode: str = "partial"
    n_points: int = 1024
    overlap_min: float = 0.70
    noise_sigma: float = 0.1
    noise_sides: str = "target"
    pose: PoseSamplingConfig = field(default_factory=PoseSamplingConfig)

    def __post_init__(self):
        if self.mode not in PAIR_MODES:
            raise ValueError(f"mode must be one of {PAIR_MODES}, got {self.mode!r}")
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")
        if not 0 < self.overlap_min <= 1:
            raise ValueError("overlap_min must be in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.noise_sides not in ("target", "both"):
            raise ValueError("noise_sides must be 'target' or 'both'")


@dataclass(frozen=True)
class RegistrationPair:
    source: np.ndarray
    target: np.ndarray
    T_gt: RigidTransform
    source_centroid_gt: np.ndarray
    target_centroid_gt: np.ndarray
    mode: str = "duplicated"


def median_spacing(points: np.ndarray) -> float:
    d, _ = cKDTree(points).query(points, k=2)
    return float(np.median(d[:, 1]))


def overlap_fraction(a: np.ndarray, b: np.ndarray, radius: float | None = None) -> float:
    """Fraction of points of ``a`` with a point of ``b`` within ``radius`` (default 2x median spacing of b)."""
    if radius is None:
        radius = 2.0 * median_spacing(b)
    d, _ = cKDTree(b).query(a, k=1)
    return float(np.mean(d <= radius))


def symmetric_overlap(a: np.ndarray, b: np.ndarray) -> float:
    return min(overlap_fraction(a, b), overlap_fraction(b, a))


def _subsample(shape, n, rng):
    return shape[rng.choice(len(shape), size=n, replace=False)]


def farthest_point_sample(points, n, rng):
    """Greedy farthest-point subsample of ``n`` rows from a random start.

    Every input point lies within the covering radius of the result, and no two
    selected points are closer than that radius, so two such samples of the
    same dense set sit within one typical spacing of each other.
    """
    idx = np.empty(n, dtype=np.int64)
    idx[0] = rng.integers(len(points))
    d2 = np.sum((points - points[idx[0]]) ** 2, axis=1)
    for k in range(1, n):
        idx[k] = int(np.argmax(d2))
        np.minimum(d2, np.sum((points - points[idx[k]]) ** 2, axis=1), out=d2)
    return points[np.sort(idx)]


def _crop(points, n, v):
    order = np.argsort(-(points @ v), kind="stable")
    return points[np.sort(order[:n])]


def make_pair(shape, cfg: PairConfig, rng: np.random.Generator, max_retries: int = 100) -> RegistrationPair:
    """Build a source/target pair from a dense shape.

    The source stays in the shape frame; the target is the (cropped) sample
    moved by a random ``T_gt`` plus Gaussian noise.
    """
    shape = as_points(shape, "shape")
    n = cfg.n_points
    if len(shape) < 2 * n:
        raise ValueError(f"shape has {len(shape)} points; need at least {2 * n}")
    T = random_transform(rng, cfg.pose)
    centroid = shape.mean(axis=0)

    if cfg.mode == "duplicated":
        src = _subsample(shape, n, rng)
        tgt_local = src[rng.permutation(n)]
    elif cfg.mode == "unduplicated":
        src = farthest_point_sample(shape, n, rng)
        tgt_local = farthest_point_sample(shape, n, rng)
    else:
        dense_s = _subsample(shape, 2 * n, rng)
        dense_t = _subsample(shape, 2 * n, rng)
        src = _crop(dense_s, n, random_unit_vector(rng))
        for _ in range(max_retries):
            tgt_local = _crop(dense_t, n, random_unit_vector(rng))
            if symmetric_overlap(src, tgt_local) >= cfg.overlap_min:
                break
        else:
            raise OverlapError(f"could not reach overlap {cfg.overlap_min} after {max_retries} retries")

    tgt = apply_transform(T, tgt_local)
    if cfg.noise_sigma > 0:
        tgt = tgt + rng.normal(scale=cfg.noise_sigma, size=tgt.shape)
        if cfg.noise_sides == "both":
            src = src + rng.normal(scale=cfg.noise_sigma, size=src.shape)
    return RegistrationPair(
        source=src,
        target=tgt,
        T_gt=T,
        source_centroid_gt=centroid.copy(),
        target_centroid_gt=apply_transform(T, centroid[None])[0],
        mode=cfg.mode,
    )


def generate_pairs(
    n_pairs: int,
    cfg: PairConfig,
    seed: int,
    kinds=SHAPE_KINDS,
    n_dense: int | None = None,
    variation: float = 0.0,
    n_shapes_per_kind: int = 1,
) -> list[RegistrationPair]:
    """Deterministic list of pairs; pair ``i`` uses shape ``i mod (len(kinds) * n_shapes_per_kind)``."""
    n_dense = n_dense or 4 * cfg.n_points
    shapes = []
    for k, kind in enumerate(kinds):
        for s in range(n_shapes_per_kind):
            shapes.append(gen_shape(kind, n_dense, derive_rng(seed, "shape", k, s), variation=variation))
    return [make_pair(shapes[i % len(shapes)], cfg, derive_rng(seed, "pair", i)) for i in range(n_pairs)]


# --------------------------------------------------------------------------
# I/O


def save_pointset(path, points) -> None:
    """Write ``.ply`` (binary little-endian float64) or ASCII ``.xyz`` by extension."""
    pts = as_points(points)
    path = Path(path)
    if path.suffix.lower() == ".ply":
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {len(pts)}\n"
            "property double x\nproperty double y\nproperty double z\nend_header\n"
        )
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(pts.astype("<f8").tobytes())
    else:
        with open(path, "w") as fh:
            for x, y, z in pts.tolist():
                fh.write(f"{x!r} {y!r} {z!r}\n")


def _load_xyz(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 3:
                raise PointCloudParseError(f"{path}:{lineno}: expected 3 values, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise PointCloudParseError(f"{path}:{lineno}: non-numeric value in {s!r}") from None
    if not rows:
        raise PointCloudParseError(f"{path}: no points")
    return np.array(rows, dtype=np.float64)


def _load_ply(path):
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise PointCloudParseError(f"{path}:1: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    n = None
    props = []
    fmt = None
    for lineno, line in enumerate(header, start=1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element" and tok[1] == "vertex":
            n = int(tok[2])
        elif tok[0] == "property":
            props.append((tok[1], tok[2]))
        else:
            raise PointCloudParseError(f"{path}:{lineno}: unsupported header line {line!r}")
    if fmt != "binary_little_endian" or n is None:
        raise PointCloudParseError(f"{path}: only binary_little_endian vertex PLY is supported")
    if props != [("double", "x"), ("double", "y"), ("double", "z")]:
        raise PointCloudParseError(f"{path}: expected double x/y/z properties, got {props}")
    body = data[end + len(b"end_header\n"):]
    if len(body) != n * 24:
        raise PointCloudParseError(f"{path}: expected {n * 24} payload bytes, found {len(body)}")
    if n == 0:
        raise PointCloudParseError(f"{path}: no points")
    return np.frombuffer(body, dtype="<f8").reshape(n, 3).astype(np.float64)


def load_pointset(path) -> np.ndarray:
    path = Path(path)
    pts = _load_ply(path) if path.suffix.lower() == ".ply" else _load_xyz(path)
    if not np.all(np.isfinite(pts)):
        raise PointCloudParseError(f"{path}: non-finite coordinates")
    return pts


# --------------------------------------------------------------------------
# manifest


def pair_record(pair_id: int, pair: RegistrationPair, source_path: str, target_path: str, seed: int) -> dict:
    return {
        "pair_id": pair_id,
        "mode": pair.mode,
        "seed": seed,
        "source": source_path,
        "target": target_path,
        "T_gt": pair.T_gt.as_row_major_12(),
        "source_centroid_gt": pair.source_centroid_gt.tolist(),
        "target_centroid_gt": pair.target_centroid_gt.tolist(),
    }


def write_dataset(out_dir, pairs: list[RegistrationPair], seed: int) -> Path:
    """Write every pair as two PLY files plus ``manifest.jsonl``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for i, pair in enumerate(pairs):
            s_name, t_name = f"pair{i:05d}_src.ply", f"pair{i:05d}_tgt.ply"
            save_pointset(out_dir / s_name, pair.source)
            save_pointset(out_dir / t_name, pair.target)
            fh.write(json.dumps(pair_record(i, pair, s_name, t_name, seed)) + "\n")
    return manifest


def read_manifest(path) -> list[tuple[dict, RegistrationPair]]:
    path = Path(path)
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PointCloudParseError(f"{path}:{lineno}: {exc}") from None
            base = path.parent
            pair = RegistrationPair(
                source=load_pointset(base / rec["source"]),
                target=load_pointset(base / rec["target"]),
                T_gt=RigidTransform.from_row_major_12(rec["T_gt"]),
                source_centroid_gt=np.array(rec["source_centroid_gt"], dtype=np.float64),
                target_centroid_gt=np.array(rec["target_centroid_gt"], dtype=np.float64),
                mode=rec.get("mode", "duplicated"),
            )
            out.append((rec, pair))
    return out


__all__ = [
    "SHAPE_KINDS",
    "PairConfig",
    "RegistrationPair",
    "gen_shape",
    "generate_pairs",
    "load_pointset",
    "make_pair",
    "median_spacing",
    "overlap_fraction",
    "read_manifest",
    "sample_surface",
    "save_pointset",
    "symmetric_overlap",
    "write_dataset",
]
