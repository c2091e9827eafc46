"""Point-to-point ICP (Besl-McKay) refinement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .core import RigidTransform, apply_transform, as_points, compose, weighted_umeyama


@dataclass(frozen=True)
class IcpConfig:
    max_iters: int = 50
    convergence_tol: float = 1e-6
    max_correspondence_dist: float = np.inf

    def __post_init__(self):
        if self.max_iters < 1 or not self.convergence_tol > 0:
            raise ValueError("IcpConfig needs max_iters >= 1 and convergence_tol > 0")


class NearestNeighborIndex:
    """kd-tree over a static reference set; exact queries with ties to the lower index."""

    def __init__(self, reference):
        self.reference = as_points(reference, "reference")
        self.tree = cKDTree(self.reference)

    def query(self, points, exclude_self: bool = False):
        q = np.asarray(points, dtype=np.float64)
        n_ref = len(self.reference)
        k = min(n_ref, 3 if exclude_self else 2)
        dist, idx = self.tree.query(q, k=k)
        dist = np.asarray(dist).reshape(len(q), k)
        idx = np.asarray(idx).reshape(len(q), k)
        if exclude_self:
            dist = np.where(idx == np.arange(len(q))[:, None], np.inf, dist)
        order = np.lexsort((idx, dist), axis=1)
        best_d = np.take_along_axis(dist, order, axis=1)[:, 0]
        best_i = np.take_along_axis(idx, order, axis=1)[:, 0]
        # window entirely tied: fall back to an exact ball query for those rows
        if k < n_ref:
            unresolved = np.flatnonzero(dist.max(axis=1) <= best_d)
            for r in unresolved:
                cand = np.array(self.tree.query_ball_point(q[r], best_d[r] * (1 + 1e-12) + 1e-300))
                if exclude_self:
                    cand = cand[cand != r]
                best_i[r] = cand.min()
        return best_i, best_d


def nearest_neighbor(query, reference, exclude_self: bool = False):
    """Index into ``reference`` and distance of the nearest point for every query point."""
    return NearestNeighborIndex(reference).query(query, exclude_self=exclude_self)


class IcpResult(NamedTuple):
    transform: RigidTransform
    residuals: list  # mean squared correspondence distance, one per evaluated transform
    status: str  # "converged", "max_iters" or "no_correspondences"


def correspondence_residual(src, index: NearestNeighborIndex, T: RigidTransform, max_dist: float = np.inf) -> float:
    _, d = index.query(apply_transform(T, src))
    d = d[d <= max_dist]
    return float(np.mean(d * d)) if len(d) else np.inf


def icp_refine(src, tgt, T_init: RigidTransform | None = None, cfg: IcpConfig | None = None) -> IcpResult:
    """Refine ``T_init`` by alternating nearest-neighbour matching and unit-weight Procrustes.

    ``residuals[k]`` is the mean squared correspondence distance under the
    k-th transform (``residuals[0]`` for ``T_init``). Without a distance
    filter the trace is non-increasing; with one it need not be, so the
    transform with the lowest residual seen is returned.
    """
    cfg = cfg or IcpConfig()
    src = as_points(src, "src")
    index = NearestNeighborIndex(tgt)
    T = T_init or RigidTransform.identity()
    residuals = []
    best_T, best_res = T, np.inf
    status = "max_iters"
    for it in range(cfg.max_iters + 1):
        moved = apply_transform(T, src)
        idx, d = index.query(moved)
        keep = d <= cfg.max_correspondence_dist
        if not np.any(keep):
            return IcpResult(T_init or RigidTransform.identity(), residuals, "no_correspondences")
        residuals.append(float(np.mean(d[keep] ** 2)))
        if residuals[-1] < best_res:
            best_T, best_res = T, residuals[-1]
        if it == cfg.max_iters:
            break
        if it > 0 and residuals[-2] - residuals[-1] <= cfg.convergence_tol * max(residuals[-2], 1e-300):
            status = "converged"
            break
        if keep.sum() < 3:
            status = "no_correspondences"
            break
        try:
            delta = weighted_umeyama(moved[keep], index.reference[idx[keep]], np.ones(int(keep.sum())))
        except ValueError:
            status = "converged"
            break
        T_new = compose(delta, T)
        change = np.linalg.norm(delta.R - np.eye(3)) + np.linalg.norm(delta.t)
        T = T_new
        if change < cfg.convergence_tol:
            moved = apply_transform(T, src)
            idx, d = index.query(moved)
            keep = d <= cfg.max_correspondence_dist
            residuals.append(float(np.mean(d[keep] ** 2)) if np.any(keep) else residuals[-1])
            if residuals[-1] < best_res:
                best_T, best_res = T, residuals[-1]
            status = "converged"
            break
    return IcpResult(best_T, residuals, status)
