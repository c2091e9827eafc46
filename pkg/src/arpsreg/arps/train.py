"""Mini-batch training of the ARPS network."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import rotation_angle_deg, translation_error
from ..data import RegistrationPair
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.layers import ParamStore
from ..nn.optim import AdamState, PlateauState, adam_step, lr_on_plateau
from ..seeding import derive_rng
from .losses import total_loss
from .network import ArpsConfig, init_params, network_forward, predict

log = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "l_aff", "l_reg", "l_ctr", "l_stp", "total", "val_total", "lr")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    seed: int = 0
    diagnostics_dir: str | None = None


@dataclass
class TrainResult:
    params: ParamStore
    curves: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_total: float = np.inf
    lr_history: list = field(default_factory=list)
    seconds: float = 0.0


def stack_pairs(pairs: list[RegistrationPair]):
    return (
        np.stack([p.source for p in pairs]),
        np.stack([p.target for p in pairs]),
        np.stack([p.T_gt.R for p in pairs]),
        np.stack([p.T_gt.t for p in pairs]),
        np.stack([p.source_centroid_gt for p in pairs]),
        np.stack([p.target_centroid_gt for p in pairs]),
    )


def batch_loss(store: ParamStore, cfg: ArpsConfig, batch):
    src, tgt, R, t, cs, ct = batch
    out = network_forward(src, tgt, store, cfg)
    return total_loss(out, R, t, src, cs, ct, eps=cfg.step_penalty_eps)


def evaluate_loss(store: ParamStore, cfg: ArpsConfig, pairs, batch_size: int) -> float:
    if not pairs:
        return float("nan")
    tot = 0.0
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i : i + batch_size]
        tot += batch_loss(store, cfg, stack_pairs(chunk)).as_floats()["total"] * len(chunk)
    return tot / len(pairs)


def _dump_batch(tcfg: TrainConfig, epoch: int, step: int, batch):
    if not tcfg.diagnostics_dir:
        return None
    path = Path(tcfg.diagnostics_dir)
    path.mkdir(parents=True, exist_ok=True)
    fname = path / f"nan_epoch{epoch}_step{step}.npz"
    np.savez(fname, src=batch[0], tgt=batch[1], R_gt=batch[2], t_gt=batch[3])
    return fname


def train(
    train_pairs: list[RegistrationPair],
    val_pairs: list[RegistrationPair],
    cfg: ArpsConfig,
    tcfg: TrainConfig,
    params: ParamStore | None = None,
    callback=None,
) -> TrainResult:
    """Minimize l_aff + l_reg + l_ctr + l_stp with Adam; halve the LR on validation plateaus.

    The returned parameters are those of the epoch with the lowest
    validation total loss (the last epoch when no validation set is given).
    """
    start = time.perf_counter()
    store = params or init_params(cfg, derive_rng(tcfg.seed, "init"))
    opt = AdamState(lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.adam_eps)
    plateau = PlateauState(patience=tcfg.plateau_patience, factor=tcfg.plateau_factor)
    result = TrainResult(params=store)
    best_state = store.state_dict()
    arrays = {k: v.data for k, v in store.items()}
    for epoch in range(tcfg.epochs):
        order = derive_rng(tcfg.seed, "shuffle", epoch).permutation(len(train_pairs))
        sums = dict.fromkeys(("l_aff", "l_reg", "l_ctr", "l_stp", "total"), 0.0)
        for step, i in enumerate(range(0, len(order), tcfg.batch_size)):
            chunk = [train_pairs[j] for j in order[i : i + tcfg.batch_size]]
            batch = stack_pairs(chunk)
            store.zero_grad()
            try:
                losses = batch_loss(store, cfg, batch)
                vals = losses.as_floats()
            except np.linalg.LinAlgError as exc:
                # SVD of a non-finite cross-covariance
                losses, vals = None, {"error": str(exc), "total": float("nan")}
            if not np.isfinite(vals["total"]):
                dump = _dump_batch(tcfg, epoch, step, batch)
                raise TrainingDivergedError(f"non-finite loss {vals} at epoch {epoch}, step {step}; batch dumped to {dump}")
            losses.total.backward()
            adam_step(arrays, {k: v.grad for k, v in store.items()}, opt)
            for k in sums:
                sums[k] += vals[k] * len(chunk)
        row = {k: v / len(train_pairs) for k, v in sums.items()}
        val_total = evaluate_loss(store, cfg, val_pairs, tcfg.batch_size) if val_pairs else row["total"]
        row.update(epoch=epoch, val_total=val_total, lr=opt.lr)
        result.curves.append(row)
        result.lr_history.append(opt.lr)
        if val_total < result.best_val_total:
            result.best_val_total = val_total
            result.best_epoch = epoch
            best_state = store.state_dict()
        lr_on_plateau(plateau, -val_total, opt)
        log.info("epoch %d total %.5f val %.5f lr %.2e", epoch, row["total"], val_total, row["lr"])
        if callback is not None:
            callback(row)
    store.load_state_dict(best_state)
    result.seconds = time.perf_counter() - start
    return result


def write_curves(path, curves) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for row in curves:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in CURVE_FIELDS[1:]])


def save_model(path, store: ParamStore, cfg: ArpsConfig, extra: dict | None = None) -> None:
    meta = {"arps_config": cfg.to_dict()}
    if extra:
        meta.update(extra)
    save_checkpoint(path, store.state_dict(), meta)


def load_model(path) -> tuple[ParamStore, ArpsConfig]:
    state, meta = load_checkpoint(path)
    cfg = ArpsConfig(**meta["arps_config"])
    store = ParamStore(np.float32)
    for k, v in state.items():
        store.add(k, v)
    return store, cfg


def recall_on(store: ParamStore, cfg: ArpsConfig, pairs, rot_thr: float = 15.0, trans_thr: float = 0.2, batch_size: int = 16):
    """Fraction of pairs whose prediction is an inlier, plus per-pair (rot, trans) errors."""
    preds = predict(store, cfg, np.stack([p.source for p in pairs]), np.stack([p.target for p in pairs]), batch_size)
    errs = [(rotation_angle_deg(T.R, p.T_gt.R), translation_error(T.t, p.T_gt.t)) for T, p in zip(preds, pairs)]
    recall = float(np.mean([(r < rot_thr) and (t < trans_thr) for r, t in errs]))
    return recall, errs


def load_train_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


__all__ = ["TrainConfig", "TrainResult", "train", "write_curves", "save_model", "load_model", "recall_on"]
