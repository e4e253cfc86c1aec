"""Selection and estimation summaries over simulation replications."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError

GROUP_WEIGHTS = (0.1, 0.15, 0.15, 0.1)
# blocks whose members are all truly nonzero (1) or all truly zero (0)
GROUP_KINDS = (1, 0, 0, 1)
assert abs(2 * sum(GROUP_WEIGHTS) - 1.0) < 1e-15


def _as_set(support, p: Optional[int] = None) -> frozenset:
    s = frozenset(int(j) for j in support)
    if p is not None and any(j < 0 or j >= p for j in s):
        raise InvalidArgumentError(f"support indices must lie in [0, {p})")
    return s


def selection_metrics(estimated, true, p: Optional[int] = None):
    """``(tp, fp, sm, exact)`` for an estimated support against the true one.

    ``sm = |S_hat & S| / sqrt(|S_hat| |S|)``, taken as 0 when either set is empty.
    """
    est, tru = _as_set(estimated, p), _as_set(true, p)
    tp = len(est & tru)
    fp = len(est - tru)
    sm = tp / math.sqrt(len(est) * len(tru)) if est and tru else 0.0
    return tp, fp, sm, est == tru


def mse(estimates, truth) -> tuple[float, float]:
    """Mean and sample SD of ``||beta_hat_k - beta_0||^2`` over replications (SD 0 for B = 1)."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    err = np.sum((est - np.asarray(truth, dtype=float)[None, :]) ** 2, axis=1)
    sd = float(np.std(err, ddof=1)) if err.size > 1 else 0.0
    return float(err.mean()), sd


def grouping_statistic(estimated, groups: Sequence[int] = (2, 3, 3, 2), d: Optional[int] = None) -> float:
    """Weighted grouping indicator for two sub-models sharing the block layout ``groups``.

    Blocks 1 and 4 count when every member is selected, blocks 2 and 3 when
    none is. ``estimated`` indexes the stacked coefficient vector.
    """
    if len(groups) != len(GROUP_WEIGHTS):
        raise InvalidArgumentError("grouping statistic expects four blocks per sub-model")
    d = sum(groups) if d is None else d
    est = _as_set(estimated, 2 * d)
    total = 0.0
    for k in range(2):
        start = k * d
        for size, w, kind in zip(groups, GROUP_WEIGHTS, GROUP_KINDS):
            members = range(start, start + size)
            chosen = [j in est for j in members]
            total += w * (all(chosen) if kind == 1 else not any(chosen))
            start += size
    return total


@dataclass
class MetricsReport:
    tp: float
    fp: float
    sm: float
    tm: float
    mse: float
    mse_sd: float
    g: Optional[float] = None
    gamma_mean: float = math.nan
    gamma_sd: float = math.nan
    phi_mean: float = math.nan
    phi_sd: float = math.nan
    per_replication: list = field(default_factory=list)

    def row(self) -> dict:
        out = {
            "MSE": self.mse, "SD": self.mse_sd, "TP": self.tp, "FP": self.fp, "SM": self.sm, "TM": self.tm,
            "gamma_mean": self.gamma_mean, "gamma_sd": self.gamma_sd, "phi_mean": self.phi_mean, "phi_sd": self.phi_sd,
        }
        if self.g is not None:
            out["G"] = self.g
        return out


def _mean_sd(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    return float(x.mean()), float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def summarize(supports, estimates, truth, gammas=(), phis=(), groups: Optional[Sequence[int]] = None) -> MetricsReport:
    """Aggregate per-replication supports and coefficient estimates."""
    truth = np.asarray(truth, dtype=float)
    p = truth.size
    true_support = np.flatnonzero(truth != 0)
    q = true_support.size
    rows = []
    for k, s in enumerate(supports):
        tp, fp, sm, exact = selection_metrics(s, true_support, p)
        assert tp <= q and fp <= p - q
        row = {"rep": k, "tp": tp, "fp": fp, "sm": sm, "exact": int(exact),
               "sq_error": float(np.sum((np.asarray(estimates[k]) - truth) ** 2))}
        if groups is not None:
            row["g"] = grouping_statistic(s, groups, p // 2)
        rows.append(row)
    if not rows:
        raise InvalidArgumentError("no replications to summarise")
    m, sd = mse(estimates, truth)
    gm, gs = _mean_sd(gammas)
    pm, ps = _mean_sd(phis)
    return MetricsReport(
        tp=float(np.mean([r["tp"] for r in rows])),
        fp=float(np.mean([r["fp"] for r in rows])),
        sm=float(np.mean([r["sm"] for r in rows])),
        tm=float(np.mean([r["exact"] for r in rows])),
        mse=m, mse_sd=sd,
        g=None if groups is None else float(np.mean([r["g"] for r in rows])),
        gamma_mean=gm, gamma_sd=gs, phi_mean=pm, phi_sd=ps,
        per_replication=rows,
    )
