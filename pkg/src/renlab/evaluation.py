"""Accuracy, stability, and ablation summaries over trained networks.

Read-only: everything here works on parameter snapshots and recorded metric
series.  Target labels enter the pipeline only through this module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError
from .losses import LossBreakdown
from .networks import ParamSet, forward_fc_plain

# canonical order of the cumulative ablation chain (weakest first)
ABLATION_CHAIN = ("cdan", "cdan_m", "cdan_m_d", "ren")


@dataclass
class MetricsRecord:
    """One evaluation snapshot during a run.

    For variants without a teacher, acc_teacher_target holds the student's
    accuracy (the deployed-network reading).
    """

    step: int
    lr: float
    parts: LossBreakdown
    acc_student_source: float
    acc_student_target: float
    acc_teacher_target: float


def accuracy(params_F: ParamSet, params_C: ParamSet, x: np.ndarray, y) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size == 0:
        raise ContractError("accuracy over an empty sample set")
    _, logits, _ = forward_fc_plain(params_F, params_C, np.asarray(x, dtype=np.float64))
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == y))


def stability(series, window_fraction: float = 0.5) -> float:
    """Sample standard deviation over the final window of an accuracy series.

    The window holds the last ceil(len * window_fraction) points and must
    contain at least two of them.
    """
    vals = np.asarray(series, dtype=np.float64).reshape(-1)
    if not (0.0 < window_fraction <= 1.0):
        raise ContractError(f"window_fraction must lie in (0, 1], got {window_fraction}")
    k = max(2, math.ceil(vals.size * window_fraction))
    if vals.size < k:
        raise ContractError(f"series of length {vals.size} too short for a window of {k}")
    return float(np.std(vals[-k:], ddof=1))


def ablation_report(results: dict[str, dict[int, float]],
                    tolerance: float = 0.005,
                    required_variants: tuple[str, ...] | None = None) -> dict:
    """Per-variant mean/std accuracies plus the cumulative-ordering verdict.

    results maps variant name -> {seed: final accuracy}.  The ordering check
    walks ABLATION_CHAIN restricted to the variants present: each mean may
    fall below its predecessor by at most `tolerance` (0.5 accuracy points
    by default, with accuracies on the 0..1 scale).
    """
    if required_variants:
        missing = [v for v in required_variants if v not in results]
        if missing:
            raise ContractError(f"missing variants: {', '.join(missing)}")
    variants = {}
    for name in sorted(results):
        per_seed = results[name]
        if not per_seed:
            raise ContractError(f"variant {name!r} has no runs")
        accs = [per_seed[s] for s in sorted(per_seed)]
        mean = float(np.mean(accs))
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        variants[name] = {"mean": mean, "std": std, "n_seeds": len(accs),
                          "per_seed": {str(s): per_seed[s] for s in sorted(per_seed)}}
    chain = [v for v in ABLATION_CHAIN if v in variants]
    ok = True
    steps = []
    for lo, hi in zip(chain, chain[1:]):
        delta = variants[hi]["mean"] - variants[lo]["mean"]
        holds = delta >= -tolerance
        ok = ok and holds
        steps.append({"from": lo, "to": hi, "delta": delta, "holds": holds})
    return {"variants": variants,
            "ordering": {"chain": chain, "tolerance": tolerance,
                         "steps": steps, "satisfied": ok}}


def project_2d(features: np.ndarray) -> np.ndarray:
    """Center and project onto the top-2 principal directions.

    Signs are fixed so each direction's largest-magnitude loading is
    positive, making the output deterministic.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ContractError(f"need at least 2 feature columns, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ContractError(f"need at least 2 rows, got {x.shape[0]}")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    basis = eigvecs[:, order]
    for j in range(2):
        lead = np.argmax(np.abs(basis[:, j]))
        if basis[lead, j] < 0:
            basis[:, j] = -basis[:, j]
    return centered @ basis


# ---------------------------------------------------------------------------
# serialization: metrics CSV, ablation JSON, projection CSV

METRICS_COLUMNS = ("step", "lr", "l_c", "l_d_stu", "l_d_tea", "l_con", "total",
                   "acc_student_source", "acc_student_target", "acc_teacher_target")


def metrics_to_csv(records: list[MetricsRecord]) -> str:
    lines = [",".join(METRICS_COLUMNS)]
    for r in records:
        lines.append(",".join([str(r.step)] + [
            repr(float(v)) for v in (
                r.lr,
                r.parts.l_c, r.parts.l_d_stu, r.parts.l_d_tea,
                r.parts.l_con, r.parts.total,
                r.acc_student_source, r.acc_student_target,
                r.acc_teacher_target,
            )
        ]))
    return "\n".join(lines) + "\n"


def save_metrics(records: list[MetricsRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write(metrics_to_csv(records))


def load_metrics(path) -> list[MetricsRecord]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != ",".join(METRICS_COLUMNS):
        raise ContractError(f"unrecognized metrics header in {path}")
    out = []
    for ln in lines[1:]:
        v = ln.split(",")
        parts = LossBreakdown(l_c=float(v[2]), l_d_stu=float(v[3]), l_d_tea=float(v[4]),
                              l_con=float(v[5]), total=float(v[6]))
        out.append(MetricsRecord(step=int(v[0]), lr=float(v[1]), parts=parts,
                                 acc_student_source=float(v[7]),
                                 acc_student_target=float(v[8]),
                                 acc_teacher_target=float(v[9])))
    return out


def save_ablation(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_projection(points: np.ndarray, domains, labels, path) -> None:
    """CSV of projected rows: id, domain, label, pc1, pc2."""
    points = np.asarray(points, dtype=np.float64)
    lines = ["id,domain,label,pc1,pc2"]
    for i in range(points.shape[0]):
        lines.append(f"{i},{domains[i]},{labels[i]},"
                     f"{float(points[i, 0])!r},{float(points[i, 1])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
