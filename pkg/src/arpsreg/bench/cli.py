"""Command-line interface: ``arpsreg {gen,train,register,bench,eval,gradcheck}``.

Every subcommand accepts ``--config FILE`` (JSON object whose keys are the
long flag names with underscores). Values are resolved as
built-in defaults < config file < explicit flags.

The BLAS/OpenMP thread count defaults to ``$ARPSREG_NUM_THREADS`` (1 if
unset) and can be overridden with ``--threads``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..arps.network import ArpsConfig, init_params, network_forward, predict
from ..arps.losses import total_loss
from ..arps.train import TrainConfig, load_model, recall_on, save_model, stack_pairs, train, write_curves
from ..core import PoseSamplingConfig, RigidTransform, rotation_angle_deg, translation_error
from ..data import SHAPE_KINDS, PairConfig, generate_pairs, load_pointset, read_manifest, write_dataset
from ..gmm import em_register
from ..icp import IcpConfig, icp_refine
from ..nn.gradcheck import grad_check
from ..seeding import derive_rng
from .metrics import PRESETS, compute_metrics, read_reports, recall_curve, write_recall_curve_csv, write_summary_csv
from .runner import run_benchmark

THREADS_ENV = "ARPSREG_NUM_THREADS"

DEFAULTS = {
    "gen": dict(out=None, n_pairs=250, mode="partial", n_points=1024, overlap_min=0.7, noise_sigma=0.1,
                noise_sides="target", euler_range_deg=45.0, translation_range=0.5, seed=0, kinds=list(SHAPE_KINDS),
                variation=0.0, shapes_per_kind=1),
    "train": dict(manifest=None, out=None, n_val=50, n_layers=4, feature_dim=64, n_heads=4, top_h=None,
                  n_components=16, input_mode="xyz", disable_attention=False, disable_recenter=False,
                  rri_neighbors=8, symmetric_weights=False, epochs=400, batch_size=16, lr=1e-4, beta1=0.9,
                  beta2=0.999, adam_eps=1e-8, plateau_patience=5, plateau_factor=0.5, seed=0, diagnostics_dir=None),
    "register": dict(source=None, target=None, method="em_register", checkpoint=None, icp=False, gt=None,
                     n_components=16, seed=0),
    "bench": dict(manifest=None, out=None, methods=["em_register"], checkpoint_arps=None,
                  checkpoint_deepgmr_like=None, thresholds="modelnet", n_components=16, seed=0, workers=1,
                  timing=False),
    "eval": dict(reports=None, out=None, thresholds="modelnet", rot_grid=[1, 2, 5, 10, 15, 20, 30, 45, 90, 180],
                 trans_grid=[0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0]),
    "gradcheck": dict(n_points=16, n_components=4, n_layers=2, feature_dim=4, n_heads=2, top_h=4, seed=0, tol=1e-5),
}


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _add(p, name, type=None, nargs=None, help=None):
    kw = {"dest": name, "help": help}
    if type is not None:
        kw["type"] = type
    if nargs is not None:
        kw["nargs"] = nargs
    p.add_argument("--" + name.replace("_", "-"), **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arpsreg", description=__doc__.split("\n")[0],
                                     argument_default=argparse.SUPPRESS)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help):
        p = sub.add_parser(name, help=help, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--threads", type=int, help=f"BLAS thread count (default ${THREADS_ENV} or 1)")
        return p

    p = cmd("gen", "generate a synthetic pair dataset")
    _add(p, "out", help="output directory")
    for n in ("n_pairs", "n_points", "seed", "shapes_per_kind"):
        _add(p, n, int)
    for n in ("overlap_min", "noise_sigma", "euler_range_deg", "translation_range", "variation"):
        _add(p, n, float)
    _add(p, "mode")
    _add(p, "noise_sides")
    _add(p, "kinds", nargs="+")

    p = cmd("train", "train the ARPS network on a manifest")
    _add(p, "manifest")
    _add(p, "out", help="output directory for model.ckpt and curves.csv")
    for n in ("n_val", "n_layers", "feature_dim", "n_heads", "top_h", "n_components", "rri_neighbors", "epochs",
              "batch_size", "plateau_patience", "seed"):
        _add(p, n, int)
    for n in ("lr", "beta1", "beta2", "adam_eps", "plateau_factor"):
        _add(p, n, float)
    for n in ("disable_attention", "disable_recenter", "symmetric_weights"):
        _add(p, n, _bool)
    _add(p, "input_mode")
    _add(p, "diagnostics_dir")

    p = cmd("register", "register one source/target pair and print the transform")
    _add(p, "source")
    _add(p, "target")
    _add(p, "method", help="em_register, arps or deepgmr_like")
    _add(p, "checkpoint")
    _add(p, "icp", _bool)
    _add(p, "gt", float, nargs=12, help="ground truth as 12 row-major numbers [R|t]")
    _add(p, "n_components", int)
    _add(p, "seed", int)

    p = cmd("bench", "run methods over a manifest and write reports + summary")
    _add(p, "manifest")
    _add(p, "out")
    _add(p, "methods", nargs="+")
    _add(p, "checkpoint_arps")
    _add(p, "checkpoint_deepgmr_like")
    _add(p, "thresholds", help="preset name (modelnet, kitti)")
    for n in ("n_components", "seed", "workers"):
        _add(p, n, int)
    _add(p, "timing", _bool)

    p = cmd("eval", "summarize report files and write a recall curve")
    _add(p, "reports", nargs="+")
    _add(p, "out")
    _add(p, "thresholds")
    _add(p, "rot_grid", float, nargs="+")
    _add(p, "trans_grid", float, nargs="+")

    p = cmd("gradcheck", "finite-difference check of the full network graph")
    for n in ("n_points", "n_components", "n_layers", "feature_dim", "n_heads", "top_h", "seed"):
        _add(p, n, int)
    _add(p, "tol", float)
    return parser


def resolve(command: str, ns: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS[command])
    given = vars(ns)
    if given.get("config"):
        with open(given["config"]) as fh:
            cfg = json.load(fh)
        unknown = set(cfg) - set(opts) - {"threads"}
        if unknown:
            raise SystemExit(f"unknown config keys for {command}: {sorted(unknown)}")
        opts.update(cfg)
    opts.update({k: v for k, v in given.items() if k not in ("config", "command", "verbose")})
    return opts


def _require(opts, *names):
    missing = [n for n in names if opts.get(n) is None]
    if missing:
        raise SystemExit("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def cmd_gen(o) -> int:
    _require(o, "out")
    pose = PoseSamplingConfig(o["euler_range_deg"], o["translation_range"])
    cfg = PairConfig(mode=o["mode"], n_points=o["n_points"], overlap_min=o["overlap_min"],
                     noise_sigma=o["noise_sigma"], noise_sides=o["noise_sides"], pose=pose)
    pairs = generate_pairs(o["n_pairs"], cfg, o["seed"], kinds=tuple(o["kinds"]), variation=o["variation"],
                           n_shapes_per_kind=o["shapes_per_kind"])
    manifest = write_dataset(o["out"], pairs, o["seed"])
    print(manifest)
    return 0


ARPS_KEYS = ("n_layers", "feature_dim", "n_heads", "top_h", "n_components", "input_mode", "disable_attention",
             "disable_recenter", "rri_neighbors", "symmetric_weights")
TRAIN_KEYS = ("epochs", "batch_size", "lr", "beta1", "beta2", "adam_eps", "plateau_patience", "plateau_factor",
              "seed", "diagnostics_dir")


def cmd_train(o) -> int:
    _require(o, "manifest", "out")
    pairs = [p for _, p in read_manifest(o["manifest"])]
    n_val = int(o["n_val"])
    if not 0 <= n_val < len(pairs):
        raise SystemExit(f"n_val={n_val} must be in [0, {len(pairs)})")
    train_pairs, val_pairs = pairs[: len(pairs) - n_val], pairs[len(pairs) - n_val :]
    cfg = ArpsConfig(**{k: o[k] for k in ARPS_KEYS})
    tcfg = TrainConfig(**{k: o[k] for k in TRAIN_KEYS})
    res = train(train_pairs, val_pairs, cfg, tcfg)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.ckpt", res.params, cfg, {"best_epoch": res.best_epoch})
    write_curves(out / "curves.csv", res.curves)
    if val_pairs:
        recall, _ = recall_on(res.params, cfg, val_pairs)
        print(f"best epoch {res.best_epoch}  val total {res.best_val_total:.6g}  val recall {recall:.3f}")
    return 0


def cmd_register(o) -> int:
    _require(o, "source", "target")
    src, tgt = load_pointset(o["source"]), load_pointset(o["target"])
    if o["method"] == "em_register":
        T, _ = em_register(src, tgt, n_components=o["n_components"], seed=o["seed"])
    elif o["method"] in ("arps", "deepgmr_like"):
        _require(o, "checkpoint")
        store, cfg = load_model(o["checkpoint"])
        T = predict(store, cfg, src, tgt)[0]
    else:
        raise SystemExit(f"unknown method {o['method']!r}")
    if o["icp"]:
        T = icp_refine(src, tgt, T, IcpConfig()).transform
    np.set_printoptions(precision=9, suppress=True)
    print("R =\n" + str(T.R))
    print("t = " + str(T.t))
    if o["gt"] is not None:
        gt = RigidTransform.from_row_major_12(o["gt"])
        print(f"rotation error {rotation_angle_deg(T.R, gt.R):.6f} deg  translation error {translation_error(T.t, gt.t):.6f}")
    return 0


def cmd_bench(o) -> int:
    _require(o, "manifest", "out")
    checkpoints = {"arps": o["checkpoint_arps"], "deepgmr_like": o["checkpoint_deepgmr_like"]}
    summaries = run_benchmark(o["methods"], o["manifest"], o["out"], o["thresholds"], checkpoints, seed=o["seed"],
                              em_components=o["n_components"], workers=o["workers"], timing=o["timing"])
    for m, s in summaries.items():
        print(f"{m}: recall {s.recall:.3f}  MRE {s.mre:.3f}  MTE {s.mte:.4f}")
    return 0


def cmd_eval(o) -> int:
    _require(o, "reports", "out")
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    summaries = {}
    for path in o["reports"]:
        reports = read_reports(path)
        name = Path(path).stem
        summaries[name] = compute_metrics(reports, o["thresholds"])
        rows = recall_curve(reports, sorted(o["rot_grid"]), sorted(o["trans_grid"]))
        write_recall_curve_csv(out / f"{name}_recall_curve.csv", rows)
    write_summary_csv(out / "summary.csv", summaries)
    for m, s in summaries.items():
        print(f"{m}: recall {s.recall:.3f}  MRE {s.mre:.3f}  MTE {s.mte:.4f}  RRE {s.rre}  RTE {s.rte}")
    return 0


def cmd_gradcheck(o) -> int:
    cfg = ArpsConfig(n_layers=o["n_layers"], feature_dim=o["feature_dim"], n_heads=o["n_heads"],
                     n_components=o["n_components"], top_h=o["top_h"])
    store = init_params(cfg, derive_rng(o["seed"], "init"), np.float64)
    pc = PairConfig(mode="unduplicated", n_points=o["n_points"], noise_sigma=0.01)
    batch = stack_pairs(generate_pairs(2, pc, o["seed"]))
    out = network_forward(batch[0], batch[1], store, cfg)
    sel = [np.concatenate([a, b]) for a, b in zip(out.trace.src_idx, out.trace.tgt_idx)]

    def f():
        o2 = network_forward(batch[0], batch[1], store, cfg, selection=sel)
        return total_loss(o2, batch[2], batch[3], batch[0], batch[4], batch[5]).total

    rep = grad_check(f, list(store.values()), tol=o["tol"], names=list(store))
    for name, err in rep.per_leaf.items():
        print(f"{name:24s} {err:.3e}")
    print(f"max relative error {rep.max_rel_error:.3e}  ({'PASS' if rep.passed else 'FAIL'} at tol {o['tol']:g})")
    return 0 if rep.passed else 1


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "register": cmd_register, "bench": cmd_bench, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = resolve(ns.command, ns)
    threads = opts.pop("threads", None) or int(os.environ.get(THREADS_ENV, "1"))
    with threadpool_limits(limits=threads):
        return COMMANDS[ns.command](opts)


if __name__ == "__main__":
    sys.exit(main())
