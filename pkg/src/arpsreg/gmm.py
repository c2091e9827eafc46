"""Isotropic Gaussian mixtures: parameters from memberships, likelihood, EM registration, GMR solve."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import RigidTransform, apply_transform, as_points, weighted_umeyama

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
EMPTY_MASS = 1e-12


@dataclass(frozen=True)
class GmmParams:
    pi: np.ndarray  # (J,)
    mu: np.ndarray  # (J, 3)
    sigma2: np.ndarray  # (J,)
    empty: np.ndarray = field(default=None)  # (J,) bool

    def __post_init__(self):
        if self.empty is None:
            object.__setattr__(self, "empty", np.zeros(len(self.pi), dtype=bool))

    @property
    def n_components(self) -> int:
        return len(self.pi)


def check_memberships(gamma, n_points: int | None = None, tol: float = 1e-6) -> np.ndarray:
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"membership matrix must be 2-D, got shape {g.shape}")
    if n_points is not None and g.shape[0] != n_points:
        raise ValueError(f"membership rows ({g.shape[0]}) != number of points ({n_points})")
    if np.any(g < 0) or np.any(np.abs(g.sum(axis=1) - 1.0) > tol):
        raise ValueError("membership matrix must be non-negative with rows summing to 1")
    return g


def gmm_from_memberships(points, gamma, sigma_floor: float = SIGMA_FLOOR) -> GmmParams:
    """Mixture weights, means and isotropic variances implied by soft memberships.

    pi_j = mean_i gamma_ij, mu_j the gamma-weighted mean, sigma_j^2 the
    gamma-weighted mean squared distance to mu_j divided by 3.
    """
    x = as_points(points)
    g = check_memberships(gamma, len(x))
    n = len(x)
    mass = g.sum(axis=0)  # N * pi_j
    empty = mass < EMPTY_MASS
    safe = np.where(empty, 1.0, mass)
    mu = (g.T @ x) / safe[:, None]
    d2 = ((x[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
    sigma2 = (g * d2).sum(axis=0) / (3.0 * safe)
    mu[empty] = 0.0
    sigma2[empty] = sigma_floor
    return GmmParams(pi=mass / n, mu=mu, sigma2=sigma2, empty=empty)


def _log_gauss(x, params):
    s2 = np.maximum(params.sigma2, SIGMA_FLOOR)
    d2 = ((x[:, None, :] - params.mu[None, :, :]) ** 2).sum(axis=2)
    with np.errstate(divide="ignore"):
        log_pi = np.log(params.pi)
    out = log_pi - 1.5 * np.log(2 * np.pi * s2) - 0.5 * d2 / s2
    return np.where(params.empty | (params.pi <= 0), -np.inf, out)


def gmm_log_likelihood(points, params: GmmParams) -> float:
    """sum_i log sum_j pi_j N(x_i | mu_j, sigma_j^2 I), via log-sum-exp."""
    x = as_points(points)
    if np.all(params.empty | (params.pi <= 0)):
        raise ValueError("all mixture components are empty")
    return float(logsumexp(_log_gauss(x, params), axis=1).sum())


def responsibilities(points, params: GmmParams) -> np.ndarray:
    lg = _log_gauss(np.asarray(points, dtype=np.float64), params)
    return np.exp(lg - logsumexp(lg, axis=1, keepdims=True))


def kmeanspp_init(points, n_components: int, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, n_components):
        total = d2.sum()
        idx = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


@dataclass
class EmFitResult:
    params: GmmParams
    ll_trace: list[float]
    reseeded: list[int]  # iterations at which an empty component was reseeded


def fit_gmm_em(points, n_components: int, max_iters: int = 100, tol: float = 1e-8, seed: int = 0) -> EmFitResult:
    """Maximum-likelihood isotropic GMM by EM with k-means++ seeding."""
    x = as_points(points)
    rng = np.random.default_rng(seed)
    J = n_components
    mu = kmeanspp_init(x, J, rng)
    # initial variance: mean squared distance to nearest seed
    d2 = ((x[:, None, :] - mu[None]) ** 2).sum(axis=2)
    s0 = max(d2.min(axis=1).mean() / 3.0, SIGMA_FLOOR)
    params = GmmParams(pi=np.full(J, 1.0 / J), mu=mu, sigma2=np.full(J, s0))
    trace = [gmm_log_likelihood(x, params)]
    reseeded = []
    for it in range(max_iters):
        gamma = responsibilities(x, params)
        new = gmm_from_memberships(x, gamma)
        sigma2 = np.maximum(new.sigma2, SIGMA_FLOOR)
        mu, pi = new.mu.copy(), new.pi.copy()
        weak = new.pi * len(x) < 1e-8
        if np.any(weak):
            # reseed collapsed components at the point worst explained by the rest
            far = np.argmax(-logsumexp(_log_gauss(x, new), axis=1))
            mu[weak] = x[far]
            sigma2[weak] = np.median(sigma2[~weak]) if np.any(~weak) else s0
            pi[weak] = 1.0 / len(x)
            pi /= pi.sum()
            reseeded.append(it)
            log.info("EM: reseeded %d empty component(s) at iteration %d", int(weak.sum()), it)
        params = GmmParams(pi=pi, mu=mu, sigma2=sigma2)
        trace.append(gmm_log_likelihood(x, params))
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
    return EmFitResult(params=params, ll_trace=trace, reseeded=reseeded)


def em_register(
    src,
    tgt,
    n_components: int = 16,
    max_iters: int = 100,
    tol: float = 1e-8,
    seed: int = 0,
    T_init: RigidTransform | None = None,
    fit_iters: int = 100,
):
    """Classical GMM registration of ``src`` onto ``tgt``.

    A GMM is fitted to the target by EM; the transform is then refined by EM
    on the source likelihood under that fixed model. Each M step is a
    weighted Procrustes problem and is solved in closed form, so the
    returned log-likelihood trace is non-decreasing.

    Returns ``(T, ll_trace)``.
    """
    if n_components < 3:
        raise ValueError("em_register needs at least 3 components")
    src = as_points(src, "src")
    tgt = as_points(tgt, "tgt")
    fit = fit_gmm_em(tgt, n_components, max_iters=fit_iters, seed=seed)
    params = fit.params
    s2 = np.maximum(params.sigma2, SIGMA_FLOOR)
    T = T_init or RigidTransform.identity()
    trace = [gmm_log_likelihood(apply_transform(T, src), params)]
    for _ in range(max_iters):
        r = responsibilities(apply_transform(T, src), params)
        w = r / s2[None, :]  # (N, J)
        wi = w.sum(axis=1)
        # sum_j w_ij ||T x_i - mu_j||^2 = wi ||T x_i - m_i||^2 + const
        m = (w @ params.mu) / np.maximum(wi, 1e-300)[:, None]
        T = weighted_umeyama(src, m, wi)
        trace.append(gmm_log_likelihood(apply_transform(T, src), params))
        if abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            break
    return T, trace


def gmr_solve(src, gamma_src, tgt, gamma_tgt, symmetric_weights: bool = False) -> RigidTransform:
    """Closed-form transform between two mixtures sharing component indices.

    Minimizes ``sum_j (pi_src_j / sigma_tgt_j^2) ||T(mu_src_j) - mu_tgt_j||^2``.
    With ``symmetric_weights`` the weight becomes
    ``(pi_src_j + pi_tgt_j) / (sigma_src_j^2 + sigma_tgt_j^2)``.
    Components empty on either side are skipped.
    """
    gs = check_memberships(gamma_src)
    gt = check_memberships(gamma_tgt)
    if gs.shape[1] != gt.shape[1]:
        raise ValueError(f"membership matrices disagree on J: {gs.shape[1]} vs {gt.shape[1]}")
    ps = gmm_from_memberships(src, gs)
    pt = gmm_from_memberships(tgt, gt)
    usable = ~(ps.empty | pt.empty)
    if usable.sum() < 3:
        raise ValueError(f"only {int(usable.sum())} usable components; need at least 3")
    w = gmr_weights(ps, pt, symmetric_weights)
    return weighted_umeyama(ps.mu[usable], pt.mu[usable], w[usable])


def gmr_weights(ps: GmmParams, pt: GmmParams, symmetric: bool = False) -> np.ndarray:
    if symmetric:
        return (ps.pi + pt.pi) / np.maximum(ps.sigma2 + pt.sigma2, SIGMA_FLOOR)
    return ps.pi / np.maximum(pt.sigma2, SIGMA_FLOOR)


def gmr_objective(T: RigidTransform, ps: GmmParams, pt: GmmParams, symmetric: bool = False) -> float:
    w = gmr_weights(ps, pt, symmetric)
    r = apply_transform(T, ps.mu) - pt.mu
    use = ~(ps.empty | pt.empty)
    return float((w * (r * r).sum(axis=1))[use].sum())
