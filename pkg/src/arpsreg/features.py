"""k-nearest neighbours and RRI (rigorously rotation-invariant) point features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import as_points


@dataclass(frozen=True)
class RriConfig:
    m_neighbors: int = 8


def _sorted_neighbors(points, queries, k, exclude_self):
    """Exact k nearest, ordered by (distance, index)."""
    tree = cKDTree(points)
    n = len(points)
    q = min(n, k + 5)
    while True:
        dist, idx = tree.query(queries, k=q)
        dist = np.asarray(dist).reshape(len(queries), q)
        idx = np.asarray(idx).reshape(len(queries), q)
        window_max = dist[:, -1]
        if exclude_self:
            dist = np.where(idx == np.arange(len(queries))[:, None], np.inf, dist)
        order = np.lexsort((idx, dist), axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        # a tie at the cutoff may hide lower indices just outside the window
        if q == n or np.all(dist[:, k - 1] < window_max):
            return idx[:, :k], dist[:, :k]
        q = min(n, 2 * q)


def knn(points, m: int) -> np.ndarray:
    """Indices of the ``m`` nearest other points of every point, ascending by distance.

    Ties are broken toward the lower index.
    """
    pts = as_points(points)
    if not 1 <= m < len(pts):
        raise ValueError(f"need 1 <= M < N, got M={m}, N={len(pts)}")
    idx, _ = _sorted_neighbors(pts, pts, m, exclude_self=True)
    return idx


@dataclass(frozen=True)
class RriFeatures:
    values: np.ndarray  # (N, 4M): M copies of r_i, then r_ik, theta_ik, phi_ik
    degenerate: np.ndarray  # (N,) bool

    @property
    def m_neighbors(self) -> int:
        return self.values.shape[1] // 4


def rri_features(points, cfg: RriConfig | None = None, neighbors: np.ndarray | None = None) -> RriFeatures:
    """RRI features with the origin as reference point.

    ``phi_ik`` is the azimuth of neighbour k's projection onto the plane
    orthogonal to ``x_i``, measured from the nearest neighbour's projection
    counter-clockwise about ``x_i``. Zero-radius points and vanishing
    projections yield zeros and are flagged in ``degenerate``.
    """
    cfg = cfg or RriConfig()
    pts = as_points(points)
    m = cfg.m_neighbors
    if neighbors is None:
        neighbors = knn(pts, m)
    nb = pts[neighbors]  # (N, M, 3)
    r = np.linalg.norm(pts, axis=1)
    rk = np.linalg.norm(nb, axis=2)
    tiny = 1e-12
    degenerate = r < tiny
    u = pts / np.where(r < tiny, 1.0, r)[:, None]
    cos = np.einsum("nd,nmd->nm", u, nb) / np.where(rk < tiny, 1.0, rk)
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    theta = np.where((rk < tiny) | (r[:, None] < tiny), 0.0, theta)

    proj = nb - np.einsum("nm,nd->nmd", np.einsum("nd,nmd->nm", u, nb), u)
    ref = proj[:, 0, :]
    ref_norm = np.linalg.norm(ref, axis=1)
    bad_ref = ref_norm < 1e-9
    degenerate = degenerate | bad_ref
    cross = np.cross(ref[:, None, :], proj)
    sin_part = np.einsum("nd,nmd->nm", u, cross)
    cos_part = np.einsum("nd,nmd->nm", ref, proj)
    phi = np.mod(np.arctan2(sin_part, cos_part), 2 * np.pi)
    proj_norm = np.linalg.norm(proj, axis=2)
    phi = np.where((proj_norm < 1e-9) | bad_ref[:, None] | (r[:, None] < tiny), 0.0, phi)
    phi = np.where(phi >= 2 * np.pi, 0.0, phi)

    values = np.concatenate([np.repeat(r[:, None], m, axis=1), rk, theta, phi], axis=1)
    return RriFeatures(values=values, degenerate=degenerate)
