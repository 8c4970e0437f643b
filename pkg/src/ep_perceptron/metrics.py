"""Evaluation of a trained student against its teacher.

Normalised MSE in decibels, posterior probability that a weight is nonzero,
ROC curves with AUC, and top-k sensitivity curves for support recovery.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

MSE_FLOOR_DB = -320.0


def normalized_mse_db(w, b) -> float:
    """10 log10 of the mean squared difference between w/|w| and b/|b|.

    Exact agreement (MSE = 0) maps to ``MSE_FLOOR_DB``.
    """
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    if w.shape != b.shape:
        raise ValueError(f"shape mismatch {w.shape} vs {b.shape}")
    nw, nb = np.linalg.norm(w), np.linalg.norm(b)
    if nw == 0 or nb == 0:
        raise ValueError("normalised MSE is undefined for an all-zero vector")
    mse = np.mean((w / nw - b / nb) ** 2)
    if mse <= 0:
        return MSE_FLOOR_DB
    return max(float(10.0 * np.log10(mse)), MSE_FLOOR_DB)


def p_nonzero(mu, sigma, rho: float, lam: float):
    """Posterior slab mass of the spike-and-slab tilted law for cavity (mu, sigma).

    Computed as a logistic of the log odds, so it stays accurate near 0 and 1.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("cavity variance must be positive")
    if rho >= 1.0:
        return np.ones_like(mu) if mu.ndim else 1.0
    if rho <= 0.0:
        return np.zeros_like(mu) if mu.ndim else 0.0
    ls = lam * sigma
    log_odds = (np.log(rho) - np.log1p(-rho) + 0.5 * np.log(ls / (1.0 + ls))
                + mu * mu / (2.0 * sigma * (1.0 + ls)))
    out = 0.5 * (1.0 + np.tanh(0.5 * log_odds))
    return out if out.ndim else float(out)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _check_truth(truth):
    truth = np.asarray(truth, dtype=bool)
    n_pos = int(truth.sum())
    if n_pos == 0 or n_pos == truth.size:
        raise ValueError("ROC needs at least one positive and one negative")
    return truth, n_pos, truth.size - n_pos


def roc_and_auc(scores, truth) -> RocCurve:
    """ROC by descending threshold sweep, one vertex per distinct score; trapezoid AUC."""
    scores = np.asarray(scores, dtype=float)
    truth, n_pos, n_neg = _check_truth(truth)
    if scores.shape != truth.shape:
        raise ValueError("scores and truth must have the same shape")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    # last index of each group of tied scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tpr = np.r_[0.0, tp[ends] / n_pos]
    fpr = np.r_[0.0, fp[ends] / n_neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, auc)


def sensitivity_curve(scores, truth) -> np.ndarray:
    """Fraction of true positives recovered among the k top-scored weights, k = 1..N.

    Returns an (N, 2) array of (k, fraction); ties keep index order.
    """
    scores = np.asarray(scores, dtype=float)
    truth, n_pos, _ = _check_truth(truth)
    order = np.argsort(-scores, kind="stable")
    k = np.arange(1, scores.size + 1)
    return np.column_stack([k, np.cumsum(truth[order]) / n_pos])


def curve_csv(columns: dict, meta: dict | None = None) -> str:
    """Render named equal-length columns as CSV, metadata as leading ``#`` comments."""
    buf = io.StringIO()
    for key, val in (meta or {}).items():
        buf.write(f"# {key}: {val}\n")
    names = list(columns)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in zip(*(np.asarray(columns[c]).tolist() for c in names)):
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_roc_csv(path, roc: RocCurve, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(curve_csv({"fpr": roc.fpr, "tpr": roc.tpr}, {**(meta or {}), "auc": roc.auc}))


def write_sensitivity_csv(path, curve: np.ndarray, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(curve_csv({"k": curve[:, 0].astype(int), "fraction": curve[:, 1]}, meta))
