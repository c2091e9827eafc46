"""ARPS layers, membership head and the differentiable GMR solve.

All functions work on a *stacked* batch: the first ``B`` rows of the leading
axis are source sets, the next ``B`` rows the matching target sets. This
lets the Siamese (weight-shared) MHAs run once over both sets.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import RigidTransform
from ..features import RriConfig, rri_features
from ..gmm import SIGMA_FLOOR
from ..nn import tensor as tn
from ..nn.layers import AttentionConfig, ParamStore, init_linear, init_mha, init_mlp, linear, mha_forward, mlp_forward
from ..nn.tensor import Tensor

INPUT_MODES = ("xyz", "rri")


@dataclass(frozen=True)
class ArpsConfig:
    n_layers: int = 4
    feature_dim: int = 64  # C; attention runs at d_m = 2C
    n_heads: int = 4
    top_h: int | None = None  # default N // 4
    n_components: int = 16
    input_mode: str = "xyz"
    disable_attention: bool = False
    disable_recenter: bool = False
    rri_neighbors: int = 8
    step_hidden: int = 32
    member_hidden: int = 64
    step_penalty_eps: float = 1e-8
    symmetric_weights: bool = False

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.n_components < 3:
            raise ValueError("n_components must be >= 3")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if (2 * self.feature_dim) % self.n_heads:
            raise ValueError(f"d_m = {2 * self.feature_dim} is not divisible by n_heads = {self.n_heads}")

    def h_for(self, n_points: int) -> int:
        h = self.top_h if self.top_h is not None else max(1, n_points // 4)
        if not 1 <= h <= n_points:
            raise ValueError(f"top_h={h} outside [1, {n_points}]")
        return h

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(d_model=2 * self.feature_dim, n_heads=self.n_heads)

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ArpsConfig, rng: np.random.Generator, dtype=np.float32) -> ParamStore:
    C = cfg.feature_dim
    store = ParamStore(dtype)
    store.add("f0", rng.normal(scale=0.1, size=C))
    for l in range(cfg.n_layers):
        d_in = 4 * cfg.rri_neighbors if (l == 0 and cfg.input_mode == "rri") else 3
        init_mlp(store, f"L{l}.enc", [d_in, C, C], rng)
        init_mha(store, f"L{l}.self", cfg.attention, rng)
        init_mha(store, f"L{l}.cross", cfg.attention, rng)
        init_linear(store, f"L{l}.out", 2 * C, C, rng)
        init_mlp(store, f"L{l}.step", [3 + 2 * C, cfg.step_hidden, 1], rng)
    init_mlp(store, "member", [2 * C, cfg.member_hidden, cfg.n_components], rng)
    return store


@dataclass
class LayerTrace:
    src_idx: list = field(default_factory=list)  # per layer (B, H)
    tgt_idx: list = field(default_factory=list)
    alphas: list = field(default_factory=list)  # per layer Tensor (B, 1)
    steps: list = field(default_factory=list)  # per layer Tensor (B, 1): sigma(alpha)
    src_shifts: list = field(default_factory=list)  # per layer Tensor (B, 3)
    tgt_shifts: list = field(default_factory=list)

    def total_shift(self, side: str) -> Tensor | None:
        shifts = self.src_shifts if side == "src" else self.tgt_shifts
        if not shifts:
            return None
        tot = shifts[0]
        for s in shifts[1:]:
            tot = tot + s
        return tot


# --- layer pieces ---------------------------------------------------------------


def encode_points(points: Tensor, prev_features: Tensor, store: ParamStore, name: str) -> Tensor:
    """concat(f_i, phi_i) with phi = MLP(points); (S, N, C) + (S, N, d_in) -> (S, N, 2C)."""
    phi = mlp_forward(points, store, f"{name}.enc")
    if phi.shape[:-1] != prev_features.shape[:-1]:
        raise tn.ShapeError(f"{name}: features {prev_features.shape} do not match points {points.shape}")
    return tn.concat([prev_features, phi], axis=-1)


def swap_halves(x: Tensor) -> Tensor:
    B = x.shape[0] // 2
    return tn.concat([x[B:], x[:B]], axis=0)


def attend_pair(F: Tensor, store: ParamStore, name: str, disable: bool = False) -> Tensor:
    """Self attention within each set, then cross attention against the partner set.

    ``F`` stacks sources then targets; both MHAs share weights across the
    two sets.
    """
    if disable:
        return F
    F1 = mha_forward(F, F, F, store, f"{name}.self")
    other = swap_halves(F1)
    return mha_forward(F1, other, other, store, f"{name}.cross")


def select_top_h(features: np.ndarray, h: int) -> np.ndarray:
    """Indices of the ``h`` rows with the largest L2 norm, per leading batch entry.

    Ties go to the lower index; the returned indices are ordered by
    descending norm.
    """
    norms = np.linalg.norm(np.asarray(features, dtype=np.float64), axis=-1)
    order = np.argsort(-norms, axis=-1, kind="stable")
    return order[..., :h]


def step_size(mean_x: Tensor, mean_f: Tensor, store: ParamStore, name: str):
    """(alpha, sigma(alpha)) from source-minus-target differences of selected means."""
    B = mean_x.shape[0] // 2
    dx = mean_x[:B] - mean_x[B:]
    df = mean_f[:B] - mean_f[B:]
    alpha = mlp_forward(tn.concat([dx, df], axis=-1), store, f"{name}.step")
    return alpha, tn.sigmoid(alpha)


def recenter(points: Tensor, mean_x: Tensor, s: Tensor, disable: bool = False):
    """Shift every set by ``s * mean_x``; returns (shifted points, shift)."""
    if disable:
        shift = Tensor(np.zeros(mean_x.shape, dtype=mean_x.dtype))
        return points, shift
    shift = tn.concat([s, s], axis=0) * mean_x
    return points - tn.reshape(shift, (shift.shape[0], 1, 3)), shift


def arps_layer_forward(points: Tensor, features: Tensor, store: ParamStore, cfg: ArpsConfig, layer: int,
                       trace: LayerTrace, h: int, selection=None, encoder_input: Tensor | None = None):
    """One ARPS layer: encode, attend, select, step, recenter.

    Returns (shifted points, enhanced features F'', next-layer features).
    """
    name = f"L{layer}"
    enc_in = encoder_input if encoder_input is not None else points
    F = encode_points(enc_in, features, store, name)
    F2 = attend_pair(F, store, name, disable=cfg.disable_attention)
    idx = select_top_h(F2.data, h) if selection is None else np.asarray(selection)
    mean_x = tn.mean(tn.gather(points, idx), axis=-2)
    mean_f = tn.mean(tn.gather(F2, idx), axis=-2)
    alpha, s = step_size(mean_x, mean_f, store, name)
    new_points, shift = recenter(points, mean_x, s, disable=cfg.disable_recenter)
    B = points.shape[0] // 2
    trace.src_idx.append(idx[:B])
    trace.tgt_idx.append(idx[B:])
    trace.alphas.append(alpha)
    trace.steps.append(s)
    trace.src_shifts.append(shift[:B])
    trace.tgt_shifts.append(shift[B:])
    return new_points, F2, linear(F2, store, f"{name}.out")


# --- GMR --------------------------------------------------------------------------


def gmm_params_tensor(points: Tensor, gamma: Tensor):
    """(pi, mu, sigma2) per set: (S, J), (S, J, 3), (S, J)."""
    n = points.shape[-2]
    mass = tn.maximum(tn.tsum(gamma, axis=-2), 1e-12)
    mu = (gamma.T @ points) / tn.reshape(mass, mass.shape + (1,))
    diff = tn.reshape(points, points.shape[:-1] + (1, 3)) - tn.reshape(mu, mu.shape[:-2] + (1,) + mu.shape[-2:])
    d2 = tn.tsum(diff * diff, axis=-1)
    sigma2 = tn.tsum(gamma * d2, axis=-2) / (3.0 * mass)
    return mass * (1.0 / n), mu, sigma2


def gmr_solve_tensor(src_params, tgt_params, symmetric: bool = False):
    """Differentiable weighted Procrustes over component means; returns (R, t) tensors (B,3,3), (B,3)."""
    pi_s, mu_s, s2_s = src_params
    pi_t, mu_t, s2_t = tgt_params
    if symmetric:
        w = (pi_s + pi_t) / tn.maximum(s2_s + s2_t, SIGMA_FLOOR)
    else:
        w = pi_s / tn.maximum(s2_t, SIGMA_FLOOR)
    wn = w / tn.tsum(w, axis=-1, keepdims=True)
    wcol = tn.reshape(wn, wn.shape + (1,))
    c_s = tn.tsum(wcol * mu_s, axis=-2)
    c_t = tn.tsum(wcol * mu_t, axis=-2)
    a = mu_s - tn.reshape(c_s, (c_s.shape[0], 1, 3))
    b = mu_t - tn.reshape(c_t, (c_t.shape[0], 1, 3))
    H = b.T @ (wcol * a)
    R = tn.procrustes_rotation(H)
    t = c_t - tn.reshape(R @ tn.reshape(c_s, c_s.shape + (1,)), c_s.shape)
    return R, t


@dataclass
class NetworkOutput:
    R: Tensor  # (B, 3, 3) in original coordinates
    t: Tensor  # (B, 3)
    R_shifted: Tensor
    t_shifted: Tensor
    gamma_src: Tensor  # (B, N, J)
    gamma_tgt: Tensor
    trace: LayerTrace
    features: Tensor  # final F'' (2B, N, 2C)
    shifted_src: Tensor
    shifted_tgt: Tensor

    def transforms(self) -> list[RigidTransform]:
        R = self.R.data.astype(np.float64)
        t = self.t.data.astype(np.float64)
        return [RigidTransform(_orthonormalize(R[b]), t[b]) for b in range(R.shape[0])]


def _orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def network_forward(src, tgt, store: ParamStore, cfg: ArpsConfig, selection=None, shift_override=None) -> NetworkOutput:
    """Full network on a batch of pairs.

    ``src``/``tgt``: (B, N, 3) arrays. ``selection`` optionally fixes the
    top-H indices per layer (list of (2B, H) arrays), e.g. for gradient
    checks. ``shift_override`` (list of (2B, 3) arrays) replaces the learned
    shifts, used to test the coordinate bookkeeping.
    """
    dtype = store.dtype
    src = np.asarray(src, dtype=dtype)
    tgt = np.asarray(tgt, dtype=dtype)
    if src.ndim == 2:
        src, tgt = src[None], tgt[None]
    if src.shape != tgt.shape:
        raise tn.ShapeError(f"source {src.shape} and target {tgt.shape} must have the same shape")
    B, N, _ = src.shape
    h = cfg.h_for(N)
    X = Tensor(np.concatenate([src, tgt], axis=0))
    f = Tensor(np.zeros((2 * B, N, cfg.feature_dim), dtype=dtype)) + store["f0"]
    enc0 = None
    if cfg.input_mode == "rri":
        rcfg = RriConfig(cfg.rri_neighbors)
        enc0 = Tensor(np.stack([rri_features(p, rcfg).values for p in X.data]).astype(dtype))
    trace = LayerTrace()
    F2 = None
    for l in range(cfg.n_layers):
        sel = None if selection is None else selection[l]
        X_before = X
        X, F2, f = arps_layer_forward(X, f, store, cfg, l, trace, h, selection=sel,
                                      encoder_input=enc0 if l == 0 else None)
        if shift_override is not None:
            shift = Tensor(np.asarray(shift_override[l], dtype=dtype))
            X = X_before - tn.reshape(shift, (2 * B, 1, 3))
            trace.src_shifts[-1] = shift[:B]
            trace.tgt_shifts[-1] = shift[B:]
    gamma = tn.softmax(mlp_forward(F2, store, "member"), axis=-1)
    pi, mu, s2 = gmm_params_tensor(X, gamma)
    R_s, t_s = gmr_solve_tensor((pi[:B], mu[:B], s2[:B]), (pi[B:], mu[B:], s2[B:]), cfg.symmetric_weights)
    # back to original coordinates: t = t_s + shift_tgt - R shift_src
    s_src = trace.total_shift("src")
    s_tgt = trace.total_shift("tgt")
    t = t_s + s_tgt - tn.reshape(R_s @ tn.reshape(s_src, (B, 3, 1)), (B, 3))
    return NetworkOutput(R=R_s, t=t, R_shifted=R_s, t_shifted=t_s, gamma_src=gamma[:B], gamma_tgt=gamma[B:],
                         trace=trace, features=F2, shifted_src=X[:B], shifted_tgt=X[B:])


def predict(store: ParamStore, cfg: ArpsConfig, src, tgt, batch_size: int = 16) -> list[RigidTransform]:
    """Predicted transforms for lists/arrays of pairs, evaluated in batches."""
    src = np.asarray(src)
    tgt = np.asarray(tgt)
    if src.ndim == 2:
        src, tgt = src[None], tgt[None]
    out = []
    for i in range(0, len(src), batch_size):
        out.extend(network_forward(src[i : i + batch_size], tgt[i : i + batch_size], store, cfg).transforms())
    return out
