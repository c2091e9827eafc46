"""Per-pair registration reports, summary metrics and recall curves."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..core import RigidTransform, rotation_angle_deg, translation_error


@dataclass(frozen=True)
class Thresholds:
    rot_deg: float = 15.0
    trans: float = 0.2

    def is_inlier(self, rot_err: float, trans_err: float) -> bool:
        return bool(rot_err < self.rot_deg and trans_err < self.trans)


PRESETS = {
    "modelnet": Thresholds(15.0, 0.2),
    "kitti": Thresholds(5.0, 0.6),
}


def thresholds_from(value) -> Thresholds:
    """Accept a preset name, a Thresholds, or a (rot_deg, trans) pair."""
    if isinstance(value, Thresholds):
        return value
    if isinstance(value, str):
        try:
            return PRESETS[value.lower()]
        except KeyError:
            raise ValueError(f"unknown threshold preset {value!r}; choose from {sorted(PRESETS)}") from None
    rot, trans = value
    return Thresholds(float(rot), float(trans))


def cosine_distance(R_a, R_b) -> float:
    """1 - cos(angle between the rotations)."""
    return float(1.0 - math.cos(math.radians(rotation_angle_deg(R_a, R_b))))


@dataclass
class RegistrationReport:
    pair_id: int
    method: str
    T_pred: RigidTransform
    T_gt: RigidTransform
    rotation_error_deg: float
    translation_error: float
    inlier: bool
    wall_time_ms: float | None = None
    seed: int | None = None
    rotation_cosine_distance: float = 0.0
    residual: float | None = None  # mean squared correspondence distance under T_pred
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "method": self.method,
            "T_pred": self.T_pred.as_row_major_12(),
            "T_gt": self.T_gt.as_row_major_12(),
            "rotation_error_deg": self.rotation_error_deg,
            "translation_error": self.translation_error,
            "rotation_cosine_distance": self.rotation_cosine_distance,
            "inlier": self.inlier,
            "residual": self.residual,
            "wall_time_ms": self.wall_time_ms,
            "seed": self.seed,
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegistrationReport":
        known = {"pair_id", "method", "T_pred", "T_gt", "rotation_error_deg", "translation_error",
                 "rotation_cosine_distance", "inlier", "residual", "wall_time_ms", "seed"}
        return cls(
            pair_id=int(d["pair_id"]),
            method=d["method"],
            T_pred=RigidTransform.from_row_major_12(d["T_pred"]),
            T_gt=RigidTransform.from_row_major_12(d["T_gt"]),
            rotation_error_deg=float(d["rotation_error_deg"]),
            translation_error=float(d["translation_error"]),
            inlier=bool(d["inlier"]),
            wall_time_ms=d.get("wall_time_ms"),
            seed=d.get("seed"),
            rotation_cosine_distance=float(d.get("rotation_cosine_distance", 0.0)),
            residual=d.get("residual"),
            extra={k: v for k, v in d.items() if k not in known},
        )


def make_report(pair_id, method, T_pred, T_gt, thresholds=PRESETS["modelnet"], wall_time_ms=None, seed=None,
                residual=None) -> RegistrationReport:
    thr = thresholds_from(thresholds)
    rot = rotation_angle_deg(T_pred.R, T_gt.R)
    trans = translation_error(T_pred.t, T_gt.t)
    return RegistrationReport(
        pair_id=int(pair_id),
        method=method,
        T_pred=T_pred,
        T_gt=T_gt,
        rotation_error_deg=rot,
        translation_error=trans,
        inlier=thr.is_inlier(rot, trans),
        wall_time_ms=wall_time_ms,
        seed=seed,
        rotation_cosine_distance=cosine_distance(T_pred.R, T_gt.R),
        residual=residual,
    )


@dataclass(frozen=True)
class MetricSummary:
    mre: float
    mte: float
    recall: float
    rre: float | None  # None when no pair is an inlier
    rte: float | None
    rot_threshold: float
    trans_threshold: float
    n_pairs: int
    mre_cosine: float

    def as_row(self, method: str) -> list:
        fmt = lambda v: "" if v is None else repr(float(v))
        return [method, fmt(self.mre), fmt(self.mte), fmt(self.recall), fmt(self.rre), fmt(self.rte), fmt(self.mre_cosine)]


SUMMARY_FIELDS = ("method", "mre", "mte", "recall", "rre", "rte", "mre_cosine")


def compute_metrics(reports, thresholds=PRESETS["modelnet"]) -> MetricSummary:
    """MRE/MTE over all pairs, recall, and RRE/RTE over the inliers.

    The inlier predicate is re-evaluated with ``thresholds`` rather than
    read from the reports.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("compute_metrics needs at least one report")
    thr = thresholds_from(thresholds)
    rot = np.array([r.rotation_error_deg for r in reports], dtype=np.float64)
    trans = np.array([r.translation_error for r in reports], dtype=np.float64)
    inl = (rot < thr.rot_deg) & (trans < thr.trans)
    n_in = int(inl.sum())
    return MetricSummary(
        mre=float(rot.mean()),
        mte=float(trans.mean()),
        recall=n_in / len(reports),
        rre=float(rot[inl].mean()) if n_in else None,
        rte=float(trans[inl].mean()) if n_in else None,
        rot_threshold=thr.rot_deg,
        trans_threshold=thr.trans,
        n_pairs=len(reports),
        mre_cosine=float(np.mean([r.rotation_cosine_distance for r in reports])),
    )


def recall_curve(reports, rot_grid, trans_grid) -> list[tuple[float, float, float]]:
    """Recall at every (rot, trans) threshold pair; rows ordered rot-major."""
    rot_grid = [float(v) for v in rot_grid]
    trans_grid = [float(v) for v in trans_grid]
    for name, g in (("rot_grid", rot_grid), ("trans_grid", trans_grid)):
        if any(b < a for a, b in zip(g, g[1:])):
            raise ValueError(f"{name} must be sorted ascending")
    reports = list(reports)
    rot = np.array([r.rotation_error_deg for r in reports], dtype=np.float64)
    trans = np.array([r.translation_error for r in reports], dtype=np.float64)
    n = max(len(reports), 1)
    rows = []
    for a in rot_grid:
        ok_r = rot < a
        for b in trans_grid:
            rows.append((a, b, int(np.sum(ok_r & (trans < b))) / n))
    return rows


def write_reports(path, reports) -> None:
    with open(path, "w") as fh:
        for r in sorted(reports, key=lambda r: r.pair_id):
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_reports(path) -> list[RegistrationReport]:
    with open(path) as fh:
        return [RegistrationReport.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_summary_csv(path, summaries: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for method, s in summaries.items():
            w.writerow(s.as_row(method))


def write_recall_curve_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rot_threshold", "trans_threshold", "recall"))
        for a, b, r in rows:
            w.writerow((repr(a), repr(b), repr(r)))
