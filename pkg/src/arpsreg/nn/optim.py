"""Adam and the halve-on-plateau learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """In-place Adam update of ``params`` (name -> array) with bias correction.

    Parameters with a missing (None) gradient are left untouched.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p, dtype=np.float64)
            state.v[name] = np.zeros_like(p, dtype=np.float64)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= update.astype(p.dtype)
    return state


@dataclass
class PlateauState:
    """Halves the learning rate after ``patience`` epochs without improvement.

    Scores are higher-is-better; pass the negated loss for a loss.
    """

    patience: int = 5
    factor: float = 0.5
    best: float = -np.inf
    bad_epochs: int = 0
    n_reductions: int = 0


def lr_on_plateau(state: PlateauState, score: float, opt: AdamState) -> PlateauState:
    if score > state.best:
        state.best = score
        state.bad_epochs = 0
        return state
    state.bad_epochs += 1
    if state.bad_epochs >= state.patience:
        opt.lr *= state.factor
        state.bad_epochs = 0
        state.n_reductions += 1
    return state
