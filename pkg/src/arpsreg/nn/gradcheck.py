"""Analytic vs. central finite-difference gradient comparison."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_leaf: dict = field(default_factory=dict)
    tol: float = 1e-6

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.per_leaf.items() if not v < self.tol]


def _rel_error(a: np.ndarray, n: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def grad_check(
    fn: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    eps: float = 1e-6,
    tol: float = 1e-6,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare ``backward`` gradients of the scalar ``fn()`` with central differences.

    The relative error of a leaf is ``||g_analytic - g_fd|| / max(||g_analytic||, ||g_fd||)``;
    the report carries the maximum over leaves. Leaves should be float64.
    """
    for leaf in leaves:
        leaf.grad = None
        leaf.requires_grad = True
    out = fn()
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar output, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy() for leaf in leaves]

    per_leaf = {}
    for k, leaf in enumerate(leaves):
        numeric = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(fn().data)
            flat[i] = orig - eps
            f_minus = float(fn().data)
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2 * eps)
        name = (names[k] if names else None) or leaf.name or f"leaf{k}"
        per_leaf[name] = _rel_error(analytic[k], numeric)
    worst = max(per_leaf.values()) if per_leaf else 0.0
    return GradCheckReport(max_rel_error=worst, per_leaf=per_leaf, tol=tol)
