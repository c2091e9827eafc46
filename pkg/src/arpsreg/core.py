"""Rigid-transform algebra, pose sampling, normalization and the weighted SVD solver.

Point sets are plain ``(N, 3)`` float64 arrays throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateConfigurationError(ValueError):
    """Raised when a rigid fit is not well posed (collinear points, zero weights)."""


def as_points(points, name: str = "points") -> np.ndarray:
    """Validate and return an ``(N, 3)`` float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one point")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


@dataclass(frozen=True)
class RigidTransform:
    """x -> R x + t."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def is_valid(self, tol: float = 1e-6) -> bool:
        orth = np.linalg.norm(self.R.T @ self.R - np.eye(3))
        return bool(orth < tol and abs(np.linalg.det(self.R) - 1.0) <= tol)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def as_row_major_12(self) -> list[float]:
        """[R|t] flattened row-major, the manifest/report encoding."""
        return np.hstack([self.R, self.t[:, None]]).ravel().tolist()

    @classmethod
    def from_row_major_12(cls, values) -> "RigidTransform":
        M = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return cls(M[:, :3], M[:, 3])

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return apply_transform(self, points)


def apply_transform(T: RigidTransform, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ T.R.T + T.t


def compose(T2: RigidTransform, T1: RigidTransform) -> RigidTransform:
    """Transform equal to applying ``T1`` first, then ``T2``."""
    return RigidTransform(T2.R @ T1.R, T2.R @ T1.t + T2.t)


def invert(T: RigidTransform) -> RigidTransform:
    return RigidTransform(T.R.T, -T.R.T @ T.t)


def rot_x(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_zyx_to_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Intrinsic Z-Y'-X'' rotation, angles in radians."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def matrix_to_euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_zyx_to_matrix` for |pitch| < 90 degrees."""
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    yaw = np.arctan2(R[1, 0], R[0, 0])
    roll = np.arctan2(R[2, 1], R[2, 2])
    return float(yaw), float(pitch), float(roll)


def axis_angle_to_matrix(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues formula."""
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        return np.eye(3)
    k = axis / norm
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1.0 - np.cos(angle_rad)) * (K @ K)


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


@dataclass(frozen=True)
class PoseSamplingConfig:
    euler_range_deg: float = 45.0
    translation_range: float = 0.5

    def __post_init__(self):
        if self.euler_range_deg < 0 or self.translation_range < 0:
            raise ValueError("pose sampling ranges must be non-negative")


def random_transform(rng: np.random.Generator, cfg: PoseSamplingConfig | None = None) -> RigidTransform:
    """Sample ZYX Euler angles uniformly in +-range and a translation along a random direction."""
    cfg = cfg or PoseSamplingConfig()
    lim = np.deg2rad(cfg.euler_range_deg)
    yaw, pitch, roll = rng.uniform(-lim, lim, size=3)
    u = random_unit_vector(rng)
    s = rng.uniform(-cfg.translation_range, cfg.translation_range)
    return RigidTransform(euler_zyx_to_matrix(yaw, pitch, roll), u * s)


def normalize_to_unit_cube(points) -> tuple[np.ndarray, float, np.ndarray]:
    """Fit the bounding box into [-1, 1]^3 keeping the aspect ratio.

    Returns ``(normalized, scale, offset)`` with ``normalized = scale * points + offset``.
    """
    pts = as_points(points)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    half = 0.5 * (hi - lo).max()
    if pts.shape[0] < 2 or not half > 0.0:
        raise DegenerateConfigurationError("point set has zero extent; cannot normalize")
    center = 0.5 * (lo + hi)
    scale = 1.0 / half
    offset = -scale * center
    out = (pts - center) * scale
    # exact +-1 on the dominant axis despite rounding
    axis = int(np.argmax(hi - lo))
    out[pts[:, axis] == lo[axis], axis] = -1.0
    out[pts[:, axis] == hi[axis], axis] = 1.0
    return out, float(scale), offset


def weighted_objective(T: RigidTransform, src, dst, weights) -> float:
    """sum_k w_k ||T(src_k) - dst_k||^2"""
    r = apply_transform(T, src) - np.asarray(dst, dtype=np.float64)
    return float(np.sum(np.asarray(weights, dtype=np.float64) * np.sum(r * r, axis=1)))


def weighted_umeyama(src_means, dst_means, weights, check: bool = False) -> RigidTransform:
    """Closed-form minimizer of ``sum_k w_k ||R src_k + t - dst_k||^2`` over SE(3).

    Parameters
    ----------
    src_means, dst_means : (K, 3) array_like
        Paired points, K >= 3 and not all collinear.
    weights : (K,) array_like
        Non-negative, not all zero.
    check : bool
        Verify the SO(3) invariants of the result (debug mode).

    Raises
    ------
    DegenerateConfigurationError
        Zero total weight or a cross-covariance of rank < 2.
    """
    src = np.asarray(src_means, dtype=np.float64)
    dst = np.asarray(dst_means, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3 or w.shape[0] != src.shape[0]:
        raise ValueError(f"shape mismatch: src {src.shape}, dst {dst.shape}, weights {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    wsum = w.sum()
    if not wsum > 0:
        raise DegenerateConfigurationError("weights sum to zero")
    wn = w / wsum
    c_src = wn @ src
    c_dst = wn @ dst
    H = (dst - c_dst).T @ (wn[:, None] * (src - c_src))
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= 1e-12 * max(S[0], 1e-300):
        raise DegenerateConfigurationError(
            f"cross-covariance has rank < 2 (singular values {S}); points are collinear or coincident"
        )
    d = np.sign(np.linalg.det(U @ Vt))
    if d == 0:
        d = 1.0
    R = U @ np.diag([1.0, 1.0, d]) @ Vt
    t = c_dst - R @ c_src
    T = RigidTransform(R, t)
    if check and not T.is_valid():
        raise AssertionError("weighted_umeyama produced a non-rotation")
    return T


def rotation_angle_deg(R1, R2) -> float:
    """Geodesic angle between two rotations, in degrees within [0, 180].

    Equal to ``arccos((trace(R1^T R2) - 1) / 2)`` but evaluated with atan2 so
    small angles keep full precision.
    """
    M = np.asarray(R1, dtype=np.float64).T @ np.asarray(R2, dtype=np.float64)
    cos_t = np.clip((np.trace(M) - 1.0) / 2.0, -1.0, 1.0)
    v = np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    sin_t = 0.5 * np.linalg.norm(v)
    return float(np.degrees(np.arctan2(sin_t, cos_t)))


def translation_error(t1, t2) -> float:
    return float(np.linalg.norm(np.asarray(t1, dtype=np.float64) - np.asarray(t2, dtype=np.float64)))
