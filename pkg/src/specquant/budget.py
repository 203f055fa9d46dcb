"""Channel importance metrics and softmax frequency-budget allocation."""

from dataclasses import dataclass

import numpy as np

from . import spectral
from .validation import as_matrix

METRICS = ("abs-mean", "abs-max", "l2-norm", "spectral-entropy", "activation-aware")
DEFAULT_METRIC = "spectral-entropy"


@dataclass
class ImportanceVector:
    metric: str
    scores: np.ndarray


@dataclass
class BudgetPlan:
    """Per-channel retained-bin counts and the softmax weights behind them."""

    rho: np.ndarray
    k: np.ndarray
    alpha: float
    total_budget: int

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        self.k = np.asarray(self.k, dtype=np.int64)
        if self.rho.size != self.k.size:
            raise ValueError("rho and k must have equal length")


def _entropy_scores(w):
    """Shannon entropy (base 2) of each channel's spectral energy split."""
    scores = np.zeros(w.shape[1])
    for j in range(w.shape[1]):
        p = np.abs(spectral.fft(w[:, j])) ** 2
        total = p.sum()
        if total == 0.0:
            continue
        p = p / total
        nz = p > 0
        scores[j] = float(-(p[nz] * np.log2(p[nz])).sum())
    return scores


def importance(w_smoothed, x_calib=None, metric=DEFAULT_METRIC):
    """Score output channels of a (smoothed) weight matrix.

    `activation-aware` pairs the mean of activation channel j with the mean
    of weight column j; the pairing is only well defined when the layer is
    square (c_in == c_out), and requires calibration activations.
    """
    w = as_matrix(w_smoothed, "w_smoothed")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    if metric == "abs-mean":
        scores = np.abs(w).mean(axis=0)
    elif metric == "abs-max":
        scores = np.abs(w).max(axis=0)
    elif metric == "l2-norm":
        scores = np.linalg.norm(w, axis=0)
    elif metric == "spectral-entropy":
        scores = _entropy_scores(w)
    else:
        if x_calib is None:
            raise ValueError("activation-aware importance requires calibration activations")
        x = as_matrix(x_calib, "x_calib")
        if x.shape[1] != w.shape[0]:
            raise ValueError(
                f"activations have {x.shape[1]} channels, weights expect {w.shape[0]}"
            )
        if w.shape[0] != w.shape[1]:
            raise ValueError(
                "activation-aware importance indexes activation and weight "
                "channels by the same j and is defined for square layers only"
            )
        scores = np.abs(x.mean(axis=0) * w.mean(axis=0))
    return ImportanceVector(metric=metric, scores=np.asarray(scores, dtype=np.float64))


def allocate(scores, alpha, total_budget, c_in):
    """Turn importance scores into per-channel retained-bin counts.

    rho = softmax(alpha * score); provisional k_j = floor(rho_j * budget),
    clamped to [1, c_in // 2 + 1]. Whatever the flooring and clamping leave
    over is handed out one bin at a time to channels in descending score
    order (ties broken by ascending index), cycling until the budget or the
    caps are exhausted. If the keep-at-least-DC floor overshoots the budget,
    bins are taken back in the mirrored order.
    """
    s = scores.scores if isinstance(scores, ImportanceVector) else scores
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError("scores must be 1-D")
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    total_budget = int(total_budget)
    c_out = s.size
    if total_budget < c_out:
        raise ValueError(
            f"total_budget {total_budget} cannot cover the DC bin of {c_out} channels"
        )
    if c_out == 0:
        return BudgetPlan(
            rho=np.zeros(0), k=np.zeros(0, dtype=np.int64), alpha=float(alpha), total_budget=0
        )
    cap = spectral.half_spectrum_length(c_in)
    z = float(alpha) * s
    z = z - z.max()
    e = np.exp(z)
    rho = e / e.sum()
    k = np.floor(rho * total_budget).astype(np.int64)
    np.clip(k, 1, cap, out=k)
    target = min(total_budget, cap * c_out)
    give_order = np.lexsort((np.arange(c_out), -s))
    short = target - int(k.sum())
    while short > 0:
        moved = False
        for j in give_order:
            if k[j] < cap:
                k[j] += 1
                short -= 1
                moved = True
                if short == 0:
                    break
        if not moved:
            break
    while short < 0:
        moved = False
        for j in give_order[::-1]:
            if k[j] > 1:
                k[j] -= 1
                short += 1
                moved = True
                if short == 0:
                    break
        if not moved:
            break
    return BudgetPlan(rho=rho, k=k, alpha=float(alpha), total_budget=total_budget)
