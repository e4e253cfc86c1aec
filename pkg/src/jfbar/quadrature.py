"""Gauss-Hermite rules and mode-centred (adaptive) quadrature.

Nodes come from the Golub-Welsch eigenproblem of the Hermite Jacobi matrix
and are then polished by Newton iterations on the orthonormal Hermite
functions, so that the scaled weights ``w_j * exp(x_j**2)`` keep full
relative accuracy even in the tails, where they matter for adaptive rules.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import logsumexp

from .errors import InvalidArgumentError, NumericError

MAX_ORDER = 128
CURVATURE_FLOOR = 1e-8
MODE_BRACKET = (-40.0, 40.0)

__all__ = [
    "QuadratureRule",
    "AdaptiveQuadState",
    "gauss_hermite_rule",
    "find_mode",
    "adaptive_integrate",
    "adaptive_log_integrate",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Physicists' Gauss-Hermite rule (weight function ``exp(-x**2)``)."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int
    # log(w_j) + x_j**2, the weights used when the integrand is not
    # divided by the Gaussian kernel.
    log_scaled_weights: np.ndarray = field(repr=False, compare=False)

    def integrate_raw(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Plain rule sum, approximating the integral of ``f(x) exp(-x^2)``."""
        return float(np.sum(self.weights * f(self.nodes)))


@dataclass(frozen=True)
class AdaptiveQuadState:
    mode: float
    scale: float
    curvature: float

    @classmethod
    def from_curvature(cls, mode: float, curvature: float) -> "AdaptiveQuadState":
        k = max(float(curvature), CURVATURE_FLOOR)
        return cls(mode=float(mode), scale=1.0 / math.sqrt(k), curvature=k)


def _hermite_functions(x: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal Hermite functions psi_{order} and psi_{order-1} at ``x``.

    psi_k(x) = p_k(x) exp(-x^2/2) with p_k orthonormal for exp(-x^2).
    """
    p_prev = np.zeros_like(x)
    p = np.full_like(x, math.pi ** -0.25) * np.exp(-0.5 * x * x)
    for k in range(1, order + 1):
        p_prev, p = p, math.sqrt(2.0 / k) * x * p - math.sqrt((k - 1) / k) * p_prev
    return p, p_prev


_RULE_CACHE: dict[int, QuadratureRule] = {}


def gauss_hermite_rule(order: int) -> QuadratureRule:
    """Return the ``order``-point Gauss-Hermite rule.

    Parameters
    ----------
    order : int
        Number of nodes, ``1 <= order <= 128``.

    Raises
    ------
    InvalidArgumentError
        If ``order`` is outside the supported range.
    """
    if isinstance(order, bool) or int(order) != order or not 1 <= order <= MAX_ORDER:
        raise InvalidArgumentError(f"quadrature order must be an integer in [1, {MAX_ORDER}], got {order!r}")
    order = int(order)
    cached = _RULE_CACHE.get(order)
    if cached is not None:
        return cached

    if order == 1:
        x = np.zeros(1)
    else:
        off = np.sqrt(np.arange(1, order) / 2.0)
        x = eigh_tridiagonal(np.zeros(order), off, eigvals_only=True)
        for _ in range(3):
            # psi_m' = sqrt(2m) psi_{m-1} - x psi_m; at a root psi_m = 0.
            pm, pm1 = _hermite_functions(x, order)
            x = x - pm / (math.sqrt(2.0 * order) * pm1 - x * pm)
        x = np.sort(x)
        x = 0.5 * (x - x[::-1])

    # Christoffel weights: w_j = 1 / (m * p_{m-1}(x_j)^2); in Hermite-function
    # form this gives w_j exp(x_j^2) directly.
    _, pm1 = _hermite_functions(x, order)
    log_scaled = -np.log(order) - 2.0 * np.log(np.abs(pm1))
    log_scaled = 0.5 * (log_scaled + log_scaled[::-1])
    weights = np.exp(log_scaled - x * x)
    for arr in (x, weights, log_scaled):
        arr.setflags(write=False)
    rule = QuadratureRule(nodes=x, weights=weights, order=order, log_scaled_weights=log_scaled)
    _RULE_CACHE[order] = rule
    return rule


def _central_derivs(f: Callable[[float], float], u: float) -> tuple[float, float]:
    h = 1e-6 * max(1.0, abs(u))
    fp, f0, fm = f(u + h), f(u), f(u - h)
    return (fp - fm) / (2 * h), (fp - 2 * f0 + fm) / (h * h)


def find_mode(
    log_g: Callable[[float], float],
    u0: float = 0.0,
    dlog_g: Optional[Callable[[float], float]] = None,
    d2log_g: Optional[Callable[[float], float]] = None,
    bracket: tuple[float, float] = MODE_BRACKET,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> AdaptiveQuadState:
    """Locate the mode of ``exp(log_g)`` by safeguarded Newton iteration.

    The bracket is shrunk with every iterate using the sign of the first
    derivative; Newton steps that leave it are replaced by bisection.
    Analytic derivatives are used when given, central differences otherwise.
    """
    if not np.isfinite(u0) or not np.isfinite(log_g(u0)):
        raise InvalidArgumentError(f"log_g is not finite at the starting point u0={u0!r}")

    def derivs(u: float) -> tuple[float, float]:
        if dlog_g is not None and d2log_g is not None:
            return dlog_g(u), d2log_g(u)
        d1, d2 = _central_derivs(log_g, u)
        if dlog_g is not None:
            d1 = dlog_g(u)
        return d1, d2

    lo, hi = bracket
    u = float(min(max(u0, lo), hi))
    for _ in range(max_iter):
        d1, d2 = derivs(u)
        if not np.isfinite(d1):
            raise NumericError(f"non-finite derivative of log_g at u={u!r}", last_iterate=u)
        if abs(d1) <= tol:
            return AdaptiveQuadState.from_curvature(u, -d2)
        if d1 > 0:
            lo = u
        else:
            hi = u
        step = -d1 / d2 if d2 < 0 else None
        cand = u + step if step is not None else None
        if cand is None or not lo < cand < hi:
            cand = 0.5 * (lo + hi)
        if cand == u:
            break
        u = cand
    d1, d2 = derivs(u)
    if abs(d1) <= tol:
        return AdaptiveQuadState.from_curvature(u, -d2)
    raise NumericError(f"mode search did not converge after {max_iter} iterations", last_iterate=u)


def adaptive_log_integrate(
    log_g: Callable[[np.ndarray], np.ndarray], state: AdaptiveQuadState, rule: QuadratureRule
) -> float:
    """Log of the adaptive GH approximation, for an integrand given as ``log g``."""
    s = math.sqrt(2.0) * state.scale
    u = state.mode + s * rule.nodes
    vals = np.asarray(log_g(u), dtype=float)
    bad = ~np.isfinite(vals) & ~(vals == -np.inf)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise NumericError(f"integrand is not finite at node {j} (u={u[j]!r})", last_iterate=float(u[j]))
    return float(math.log(s) + logsumexp(rule.log_scaled_weights + vals))


def adaptive_integrate(
    g: Callable[[np.ndarray], np.ndarray],
    state: AdaptiveQuadState,
    rule: QuadratureRule,
    log_space: bool = False,
) -> float:
    """Approximate the integral of a positive ``g`` over the real line.

    Uses ``sqrt(2) s sum_j w_j exp(x_j^2) g(mu + sqrt(2) s x_j)`` with
    ``mu``/``s`` taken from ``state``. With ``log_space=True`` the callable
    returns ``log g`` and the sum is accumulated with one max-subtraction.
    """
    if log_space:
        return math.exp(adaptive_log_integrate(g, state, rule))
    s = math.sqrt(2.0) * state.scale
    u = state.mode + s * rule.nodes
    vals = np.asarray(g(u), dtype=float)
    if not np.all(np.isfinite(vals)):
        j = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise NumericError(f"integrand is not finite at node {j} (u={u[j]!r})", last_iterate=float(u[j]))
    return float(s * np.sum(np.exp(rule.log_scaled_weights) * vals))
