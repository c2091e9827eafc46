"""Shared oracles and generators for the test suite."""

import itertools

import numpy as np
from scipy.optimize import minimize

from arpsreg.core import RigidTransform, apply_transform, axis_angle_to_matrix
from arpsreg.nn import tensor as tn


def random_rotation(rng):
    axis = rng.normal(size=3)
    return axis_angle_to_matrix(axis, rng.uniform(0, np.pi))


def random_rigid(rng, trans_scale=1.0):
    return RigidTransform(random_rotation(rng), rng.normal(scale=trans_scale, size=3))


def brute_force_rigid_min(objective, n_grid=6, extra_starts=()):
    """Minimize objective(T) over axis-angle + translation.

    Coarse grid over rotation vectors (translation started at 0), then
    BFGS refinement of the best few grid points and any extra starts.
    """

    def f(p):
        return objective(RigidTransform(axis_angle_to_matrix(p[:3], np.linalg.norm(p[:3])), p[3:]))

    axis_vals = np.linspace(-np.pi, np.pi, n_grid)
    grid = [np.r_[np.array(v), 0.0, 0.0, 0.0] for v in itertools.product(axis_vals, repeat=3)]
    grid = [g for g in grid if np.linalg.norm(g[:3]) <= np.pi]
    scored = sorted(grid, key=f)[:5]
    starts = list(scored) + [np.asarray(s, dtype=float) for s in extra_starts]
    best = np.inf
    for s in starts:
        res = minimize(f, s, method="BFGS", options={"gtol": 1e-12, "maxiter": 2000})
        res = minimize(f, res.x, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        best = min(best, res.fun)
    return best


def transformed(T, pts):
    return apply_transform(T, pts)


# (name, fn, leaf shapes) for finite-difference checks of every tensor primitive
PRIMITIVE_CASES = [
    ("add_broadcast", lambda a, b: a + b, [(3, 4), (4,)]),
    ("sub", lambda a, b: a - b, [(3, 4), (3, 1)]),
    ("mul", lambda a, b: a * b, [(2, 3, 4), (3, 4)]),
    ("div", lambda a, b: a / (tn.exp(b) + 1.0), [(3, 4), (3, 4)]),
    ("matmul", lambda a, b: a @ b, [(3, 4), (4, 5)]),
    ("batched_matmul", lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),
    ("relu", lambda a: tn.relu(a), [(4, 5)]),
    ("sigmoid", lambda a: tn.sigmoid(a), [(4, 5)]),
    ("softmax", lambda a: tn.softmax(a, axis=-1), [(4, 5)]),
    ("softmax_axis0", lambda a: tn.softmax(a, axis=0), [(4, 5)]),
    ("mean_axis", lambda a: tn.mean(a, axis=1), [(4, 5)]),
    ("sum_keepdims", lambda a: tn.tsum(a, axis=0, keepdims=True), [(4, 5)]),
    ("l2_norm", lambda a: tn.l2_norm(a, axis=-1), [(4, 5)]),
    ("exp_log", lambda a: tn.log(tn.exp(a) + 2.0), [(4, 5)]),
    ("sqrt_power", lambda a: tn.sqrt(a * a + 1.0) + tn.power(a, 3.0), [(4, 5)]),
    ("maximum", lambda a: tn.maximum(a, 0.1), [(4, 5)]),
    ("concat", lambda a, b: tn.concat([a, b], axis=-1), [(4, 2), (4, 3)]),
    ("reshape_swap", lambda a: tn.swapaxes(tn.reshape(a, (2, 3, 4)), 0, 2), [(6, 4)]),
    ("index", lambda a: a[1:3, ::2], [(4, 5)]),
    ("gather", lambda a: tn.gather(a, np.array([[2, 0, 2], [1, 1, 3]])), [(2, 4, 3)]),
    ("layer_norm", lambda a, g, b: tn.layer_norm(a, g, b), [(4, 6), (6,), (6,)]),
    ("neg_rsub_rdiv", lambda a: -a + (1.0 - a) + 2.0 / (tn.exp(a) + 1.0), [(4, 5)]),
    ("mean_all", lambda a: tn.mean(a) * a, [(4, 5)]),
    ("procrustes_rotation", lambda a: tn.procrustes_rotation(a), [(2, 3, 3)]),
]
