"""Conditioning inputs for the domain discriminators.

Two pieces: the row-wise outer product that couples a feature vector with a
class-probability vector, and a per-sample exponential moving average over
predictions.  Ensembled predictions are conditioning signals only, so they
are stored and returned as plain arrays, never attached to a graph.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, ContractError, ShapeError

_BRANCHES = ("student", "teacher")


def multilinear_map(f: T.Tensor, p: T.Tensor) -> T.Tensor:
    """Flattened outer product per row: out[i, j*c + k] = f[i, j] * p[i, k]."""
    return T.multilinear(f, p)


def multilinear_plain(f: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Graph-free twin of multilinear_map."""
    f = np.asarray(f, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if f.shape[0] != p.shape[0]:
        raise ShapeError(f"batch sizes differ: {f.shape} vs {p.shape}")
    m = f.shape[0]
    return np.einsum("ij,ik->ijk", f, p).reshape(m, f.shape[1] * p.shape[1])


def _check_prob_rows(p: np.ndarray, what: str) -> None:
    if p.size == 0:
        return
    if p.min() < -1e-12:
        raise ContractError(f"{what} has a negative entry ({p.min()})")
    sums = p.sum(axis=1)
    worst = np.abs(sums - 1.0).max()
    if worst > 1e-9:
        raise ContractError(f"{what} rows must sum to 1 (off by {worst:.3e})")


class PredEmaState:
    """Per-sample smoothed predictions for the student and teacher branches.

    Each sample id maps to one probability row; the first visit stores the
    prediction unchanged, later visits blend:
        smoothed_new = (1 - alpha_p) * smoothed_old + alpha_p * current
    Note the orientation: alpha_p weights the CURRENT prediction, which is
    the opposite of the weight-ensembling update.  alpha_p = 1 makes this
    the identity on the current prediction.
    """

    def __init__(self, alpha_p: float, n_classes: int):
        alpha_p = float(alpha_p)
        if not (0.0 <= alpha_p <= 1.0):
            raise ConfigError(f"alpha_p must lie in [0, 1], got {alpha_p}")
        if n_classes < 1:
            raise ConfigError(f"n_classes must be positive, got {n_classes}")
        self.alpha_p = alpha_p
        self.n_classes = n_classes
        self.rows: dict[str, dict[int, np.ndarray]] = {b: {} for b in _BRANCHES}

    def known_ids(self, which: str) -> list[int]:
        return sorted(self.rows[which])


def pred_ema(state: PredEmaState, which: str, sample_ids, p_n: np.ndarray) -> np.ndarray:
    """Blend current predictions into the stored per-sample average.

    Returns the updated rows in sample order as a detached array; the caller
    wraps them as a graph constant if they feed a loss.
    """
    if which not in _BRANCHES:
        raise ContractError(f"branch must be one of {_BRANCHES}, got {which!r}")
    p_n = np.asarray(p_n, dtype=np.float64)
    ids = np.asarray(sample_ids, dtype=np.int64).reshape(-1)
    if p_n.ndim != 2 or p_n.shape != (ids.shape[0], state.n_classes):
        raise ShapeError(f"predictions {p_n.shape} do not match {ids.shape[0]} ids "
                         f"x {state.n_classes} classes")
    _check_prob_rows(p_n, "prediction batch")
    store = state.rows[which]
    a = state.alpha_p
    out = np.empty_like(p_n)
    for i, sid in enumerate(ids):
        key = int(sid)
        prev = store.get(key)
        row = p_n[i].copy() if prev is None else (1.0 - a) * prev + a * p_n[i]
        store[key] = row
        out[i] = row
    return out
