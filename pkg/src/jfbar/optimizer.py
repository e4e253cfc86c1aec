"""Derivative-free Nelder-Mead minimiser used for the nuisance parameters."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class SimplexConfig:
    """Stopping rules and move coefficients.

    ``init_step=None`` uses ``0.1 * max(1, |x0_j|)`` per coordinate.
    """

    max_iter: int = 2000
    f_tol: float = 1e-10
    x_tol: float = 1e-8
    init_step: Optional[float] = None
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    restart: bool = False

    def __post_init__(self):
        if self.max_iter < 0:
            raise InvalidArgumentError("max_iter must be non-negative")
        if self.f_tol < 0 or self.x_tol < 0:
            raise InvalidArgumentError("tolerances must be non-negative")
        if self.init_step is not None and not self.init_step > 0:
            raise InvalidArgumentError("init_step must be positive")
        if not (self.reflection > 0 and self.expansion > 1 and 0 < self.contraction < 1 and 0 < self.shrink < 1):
            raise InvalidArgumentError("simplex coefficients outside their valid ranges")


class MinimizeResult(NamedTuple):
    x: np.ndarray
    fun: float
    n_iter: int
    converged: bool


def initial_steps(x0: np.ndarray, cfg: SimplexConfig) -> np.ndarray:
    if cfg.init_step is None:
        return 0.1 * np.maximum(1.0, np.abs(x0))
    return np.full(x0.shape, float(cfg.init_step))


def minimize(f: Callable[[np.ndarray], float], x0, cfg: Optional[SimplexConfig] = None) -> MinimizeResult:
    """Minimise ``f`` from ``x0`` with the Nelder-Mead simplex method.

    Converged when the simplex diameter (max distance of a vertex from the
    best one) drops below ``x_tol`` or the spread of vertex values drops
    below ``f_tol``. Hitting ``max_iter`` returns the best vertex with
    ``converged=False``. Objective failures and non-finite values count as
    ``+inf`` away from ``x0``.

    With ``cfg.restart`` one fresh simplex is built around the incumbent;
    its result is kept only when it improves on it.
    """
    cfg = cfg or SimplexConfig()
    x0 = np.array(x0, dtype=float).ravel()
    if x0.size == 0 or not np.all(np.isfinite(x0)):
        raise InvalidArgumentError("x0 must be a non-empty finite vector")
    f0 = float(f(x0))
    if not np.isfinite(f0):
        raise InvalidArgumentError("objective is not finite at x0")

    def fx(x):
        try:
            v = float(f(x))
        except (ArithmeticError, ValueError):
            return np.inf
        return v if np.isfinite(v) else np.inf

    res = _run(fx, x0, f0, initial_steps(x0, cfg), cfg, cfg.max_iter)
    if cfg.restart and res.n_iter < cfg.max_iter:
        again = _run(fx, res.x, res.fun, initial_steps(res.x, cfg), cfg, cfg.max_iter - res.n_iter)
        total = res.n_iter + again.n_iter
        if again.fun < res.fun:
            res = MinimizeResult(again.x, again.fun, total, again.converged)
        else:
            res = MinimizeResult(res.x, res.fun, total, res.converged)
    return res


def _run(fx, x0, f0, steps, cfg: SimplexConfig, max_iter: int) -> MinimizeResult:
    k = x0.size
    simplex = np.tile(x0, (k + 1, 1))
    simplex[np.arange(1, k + 1), np.arange(k)] += steps
    fvals = np.empty(k + 1)
    fvals[0] = f0
    for j in range(1, k + 1):
        fvals[j] = fx(simplex[j])
    alpha, chi, psi, sigma = cfg.reflection, cfg.expansion, cfg.contraction, cfg.shrink
    it = 0
    while True:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        spread = fvals[-1] - fvals[0]
        diameter = np.max(np.abs(simplex[1:] - simplex[0]))
        if diameter < cfg.x_tol or (np.isfinite(spread) and spread < cfg.f_tol):
            return MinimizeResult(simplex[0].copy(), float(fvals[0]), it, True)
        if it >= max_iter:
            return MinimizeResult(simplex[0].copy(), float(fvals[0]), it, False)
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = fx(xr)
        if fr < fvals[0]:
            xe = centroid + chi * (xr - centroid)
            fe = fx(xe)
            simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + psi * (xr - centroid)
            fc = fx(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + psi * (worst - centroid)
            fc = fx(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
        for j in range(1, k + 1):
            fvals[j] = fx(simplex[j])
