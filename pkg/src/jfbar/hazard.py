"""Piecewise-constant baseline hazards on quantile cut points."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

TIE_STEP = 1e-9


def build_cuts(times, Q: int) -> np.ndarray:
    """Cut points ``{0, q/Q quantiles of times}`` for ``q = 1..Q``.

    Quantiles use linear interpolation (numpy's default, type 7). Repeated
    cut points are nudged upward in steps of 1e-9 so the result is strictly
    increasing; the last cut is never below ``max(times)``.
    """
    t = np.asarray(times, dtype=float).ravel()
    if t.size == 0:
        raise InvalidArgumentError("build_cuts needs at least one time")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise InvalidArgumentError("times must be finite and non-negative")
    if Q < 1:
        raise InvalidArgumentError(f"Q must be >= 1, got {Q}")
    if np.all(t == 0):
        raise InvalidArgumentError("all times are zero; no intervals can be formed")
    cuts = np.empty(Q + 1)
    cuts[0] = 0.0
    cuts[1:] = np.quantile(t, np.arange(1, Q + 1) / Q)
    for q in range(1, Q + 1):
        if cuts[q] <= cuts[q - 1]:
            cuts[q] = cuts[q - 1] + TIE_STEP
    return cuts


@dataclass(frozen=True)
class PiecewiseHazard:
    """Step hazard ``heights[q]`` on ``[cuts[q], cuts[q+1])``.

    Beyond the last cut the final height is extended.
    """

    cuts: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        cuts = np.asarray(self.cuts, dtype=float)
        heights = np.asarray(self.heights, dtype=float)
        if cuts.ndim != 1 or heights.ndim != 1 or cuts.size != heights.size + 1:
            raise InvalidArgumentError("need len(cuts) == len(heights) + 1")
        if cuts[0] != 0.0 or np.any(np.diff(cuts) <= 0):
            raise InvalidArgumentError("cuts must start at 0 and increase strictly")
        if np.any(heights <= 0) or not np.all(np.isfinite(heights)):
            raise InvalidArgumentError("hazard heights must be positive and finite")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "heights", heights)

    @property
    def n_intervals(self) -> int:
        return self.heights.size

    def hazard_at(self, t):
        return hazard_at(self, t)

    def cumulative(self, t):
        return cumulative(self, t)


def interval_index(cuts: np.ndarray, t) -> np.ndarray:
    """Index q with ``cuts[q] <= t < cuts[q+1]``, clipped to the last interval."""
    q = np.searchsorted(cuts, np.asarray(t, dtype=float), side="right") - 1
    return np.clip(q, 0, cuts.size - 2)


def exposure_matrix(cuts: np.ndarray, t) -> np.ndarray:
    """Time spent in each interval up to ``t``; rows per time, columns per interval.

    The last column is unbounded so that ``exposure @ heights`` includes the
    linear extrapolation beyond the final cut.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    lo = cuts[:-1]
    width = np.diff(cuts)
    width = np.concatenate([width[:-1], [np.inf]])
    return np.maximum(0.0, np.minimum(width[None, :], t[:, None] - lo[None, :]))


def _check_t(t) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise InvalidArgumentError("hazard evaluated at negative time")
    return arr


def hazard_at(h: PiecewiseHazard, t):
    arr = _check_t(t)
    out = h.heights[interval_index(h.cuts, arr)]
    return float(out) if np.ndim(arr) == 0 else out


def cumulative(h: PiecewiseHazard, t):
    arr = _check_t(t)
    out = exposure_matrix(h.cuts, arr) @ h.heights
    return float(out[0]) if np.ndim(arr) == 0 else out.reshape(arr.shape)
