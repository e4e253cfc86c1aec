"""Broken adaptive ridge (BAR) selection for the joint frailty model.

Each outer iteration replaces ``beta`` by the solution of the reweighted
ridge system ``(Omega + lam D) beta = v`` with

    Omega = -H(beta),  v = g(beta) - H(beta) beta,  D = diag(1 / (beta^2 + eta^2)),

where ``g`` and ``H`` are the score and Hessian of the marginal
log-likelihood, and then re-optimises the nuisance parameters
(baseline heights, gamma, phi) by Nelder-Mead with ``beta`` fixed.
The penalty level is chosen by GCV on unpenalised refits over the
estimated support.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .derivatives import score_and_hessian
from .errors import ConvergenceError, InvalidArgumentError, NumericError
from .hazard import PiecewiseHazard
from .likelihood import Dataset, NuisanceObjective, ParameterVector, _resolve_rule, log_likelihood
from .optimizer import SimplexConfig, minimize

log = logging.getLogger(__name__)

NONZERO_FLOOR = 1e-4
DEFAULT_LAMBDA_GRID = tuple(float(x) for x in np.geomspace(1.0, 8.0, 16))
NUISANCE_SIMPLEX = SimplexConfig(max_iter=3000, f_tol=1e-9, x_tol=1e-7, init_step=0.05)


@dataclass(frozen=True)
class BarConfig:
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    eta: float = 1e-6
    zero_threshold: float = 1e-4
    max_outer_iter: int = 100
    beta_tol: float = 1e-6
    quad_order: int = 30
    epsilon_gcv: float = 1e-6
    nuisance_simplex: SimplexConfig = NUISANCE_SIMPLEX
    threads: int = 1

    def __post_init__(self):
        grid = tuple(float(x) for x in np.atleast_1d(self.lambda_grid))
        if len(grid) == 0:
            raise InvalidArgumentError("lambda_grid must be non-empty")
        if any(not (x > 0 and math.isfinite(x)) for x in grid):
            raise InvalidArgumentError("lambda values must be positive and finite")
        if list(grid) != sorted(grid):
            raise InvalidArgumentError("lambda_grid must be sorted")
        object.__setattr__(self, "lambda_grid", grid)
        for name in ("eta", "zero_threshold", "beta_tol", "epsilon_gcv"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.max_outer_iter < 1:
            raise InvalidArgumentError("max_outer_iter must be >= 1")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be >= 1")


@dataclass(frozen=True)
class BarWorkspace:
    omega: np.ndarray
    v: np.ndarray
    d_diag: np.ndarray

    @classmethod
    def build(cls, gradient, hessian, beta, eta: float) -> "BarWorkspace":
        beta = np.asarray(beta, dtype=float)
        H = np.asarray(hessian, dtype=float)
        omega = -0.5 * (H + H.T)
        v = np.asarray(gradient, dtype=float) - H @ beta
        return cls(omega, v, 1.0 / (beta * beta + eta * eta))


def bar_step(ws: BarWorkspace, lam: float) -> np.ndarray:
    """Solve ``(Omega + lam D) beta = v`` by Cholesky."""
    A = ws.omega + lam * np.diag(ws.d_diag)
    try:
        c = cho_factor(A, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericError(
            f"ridge system at lambda={lam:g} is not positive definite; increase eta or lambda"
        ) from exc
    return cho_solve(c, ws.v)


def workspace_at(data: Dataset, params: ParameterVector, cfg: BarConfig, rule=None) -> BarWorkspace:
    sh = score_and_hessian(data, params, rule if rule is not None else cfg.quad_order)
    return BarWorkspace.build(sh.gradient, sh.hessian, params.beta, cfg.eta)


def fixed_point_residual(data: Dataset, params: ParameterVector, lam: float, cfg: BarConfig) -> float:
    """``max |beta - (Omega + lam D)^{-1} v|`` at the current estimate."""
    return float(np.max(np.abs(params.beta - bar_step(workspace_at(data, params, cfg), lam))))


# --- nuisance and unpenalised updates ---------------------------------------------


MIN_SIMPLEX_STEP = 1e-4


class NuisanceUpdater:
    """Nelder-Mead over the nuisance coordinates with ``beta`` held fixed.

    The simplex starts at the current nuisance values. Its size follows the
    previous accepted move (within ``[1e-4, init_step]``) because successive
    updates shrink as the outer iteration settles. A result is kept only
    when it improves the log-likelihood by more than ``f_tol``, so the
    nuisance part stays put once it has converged.
    """

    def __init__(self, data: Dataset, rule, simplex: SimplexConfig):
        self.data, self.rule, self.simplex = data, rule, simplex
        self.max_step = simplex.init_step or 0.1
        self.step = self.max_step

    def __call__(self, params: ParameterVector):
        obj = NuisanceObjective(self.data, params, self.rule)
        x0 = params.nuisance_vector()
        f0 = obj(x0)
        if not math.isfinite(f0):
            raise NumericError("log-likelihood is not finite at the current estimate")
        cfg = replace(self.simplex, init_step=self.step)
        res = minimize(obj, x0, cfg)
        if res.fun < f0 - self.simplex.f_tol:
            move = float(np.max(np.abs(res.x - x0)))
            self.step = float(np.clip(2.0 * move, MIN_SIMPLEX_STEP, self.max_step))
            return params.with_nuisance(res.x), -res.fun, True
        return params, -f0, False


def update_nuisance(data: Dataset, params: ParameterVector, rule, simplex: SimplexConfig):
    """Single nuisance update; returns ``(params, loglik, moved)``."""
    return NuisanceUpdater(data, rule, simplex)(params)


def _newton_beta(data: Dataset, params: ParameterVector, support: np.ndarray, rule) -> tuple[ParameterVector, float]:
    """One damped Newton step on ``beta[support]``; returns the new params and the step size."""
    if support.size == 0:
        return params, 0.0
    sh = score_and_hessian(data, params, rule)
    g = sh.gradient[support]
    A = -sh.hessian[np.ix_(support, support)]
    mu = 0.0
    for _ in range(30):
        try:
            c = cho_factor(A + mu * np.eye(support.size), lower=True)
            break
        except LinAlgError:
            mu = max(1e-6, 10 * mu) if mu else 1e-6 * max(1.0, float(np.abs(np.diag(A)).max()))
    else:
        raise NumericError("Hessian restricted to the support could not be regularised")
    step = cho_solve(c, g)
    beta = params.beta
    ll0 = sh.loglik
    t = 1.0
    for _ in range(40):
        trial = beta.copy()
        trial[support] += t * step
        cand = params.with_beta(trial)
        try:
            ll = log_likelihood(data, cand, rule)
        except NumericError:
            ll = -np.inf
        if ll >= ll0 - 1e-10 * max(1.0, abs(ll0)):
            return cand, float(np.max(np.abs(t * step)))
        t *= 0.5
    return params, 0.0


@dataclass(frozen=True)
class UnpenalizedFit:
    params: ParameterVector
    loglik: float
    iterations: int
    converged: bool


def fit_unpenalized(
    data: Dataset, start: ParameterVector, support, cfg: BarConfig, max_iter: Optional[int] = None
) -> UnpenalizedFit:
    """Maximise the likelihood over ``beta[support]`` and the nuisance part.

    Alternates a damped Newton step on the coefficients with a Nelder-Mead
    update of the nuisance parameters. Coefficients off the support are set
    to zero. Stops when the Newton step is below ``beta_tol`` and the
    nuisance update finds no improvement.
    """
    rule = _resolve_rule(cfg.quad_order)
    support = np.asarray(sorted(int(j) for j in support), dtype=int)
    beta = np.zeros(start.beta.size)
    beta[support] = start.beta[support]
    params = start.with_beta(beta)
    max_iter = cfg.max_outer_iter if max_iter is None else max_iter
    ll = log_likelihood(data, params, rule)
    nuisance = NuisanceUpdater(data, rule, cfg.nuisance_simplex)
    for it in range(1, max_iter + 1):
        params, step = _newton_beta(data, params, support, rule)
        params, ll, moved = nuisance(params)
        if step < cfg.beta_tol and not moved:
            return UnpenalizedFit(params, ll, it, True)
    return UnpenalizedFit(params, ll, max_iter, False)


# --- step 1 -------------------------------------------------------------------


def force_nonzero(beta, floor: float = NONZERO_FLOOR) -> np.ndarray:
    """``|beta_j| <- max(|beta_j|, floor)`` keeping the sign (zero maps to +floor)."""
    beta = np.asarray(beta, dtype=float)
    sign = np.where(beta < 0, -1.0, 1.0)
    return sign * np.maximum(np.abs(beta), floor)


def initial_fit(data: Dataset, start: Optional[ParameterVector] = None, cfg: Optional[BarConfig] = None,
                method: str = "alternating", max_iter: Optional[int] = None) -> ParameterVector:
    """Unpenalised estimates used to start the BAR iteration.

    ``method="alternating"`` uses :func:`fit_unpenalized` on the full
    coefficient vector; ``method="nelder-mead"`` runs the simplex on every
    coordinate jointly. Either way no coefficient is left at exactly zero.
    """
    cfg = cfg or BarConfig()
    if data.p >= data.n:
        raise InvalidArgumentError(f"need p < n for the unpenalised fit, got p={data.p}, n={data.n}")
    start = start or default_start(data)
    if method == "alternating":
        fit = fit_unpenalized(data, start, np.arange(data.p), cfg, max_iter)
        params = fit.params
    elif method == "nelder-mead":
        rule = _resolve_rule(cfg.quad_order)
        p = data.p
        x0 = np.concatenate([start.beta, start.nuisance_vector()])

        def f(x):
            obj = NuisanceObjective(data, start.with_beta(x[:p]), rule)
            return obj(x[p:])

        res = minimize(f, x0, SimplexConfig(max_iter=max_iter or 20000, f_tol=1e-8, x_tol=1e-7))
        params = start.with_beta(res.x[:p]).with_nuisance(res.x[p:])
    else:
        raise InvalidArgumentError(f"unknown initial-fit method {method!r}")
    return params.with_beta(force_nonzero(params.beta))


def default_start(data: Dataset) -> ParameterVector:
    """Zero coefficients, crude constant rates, gamma = 1 and phi = 1."""
    pk = data.packed
    exposure = float(pk.followup.sum())
    h = max(pk.delta.sum(), 1.0) / exposure
    r = max(pk.nrec.sum(), 1.0) / exposure
    return ParameterVector(
        np.zeros(data.d1), np.zeros(data.d2),
        PiecewiseHazard(data.cuts_terminal, np.full(data.Q_terminal, h)),
        PiecewiseHazard(data.cuts_recurrent, np.full(data.Q_recurrent, r)),
        1.0, 1.0,
    )


def _poisson_univariate(z, counts, exposure, iters: int = 50) -> float:
    """Coefficient of a single covariate in a piecewise-exponential model without frailty.

    ``counts`` and ``exposure`` are n x Q; the baseline heights are profiled out.
    """
    b = 0.0
    for _ in range(iters):
        w = np.exp(b * z)
        base = counts.sum(axis=0) / np.maximum((exposure * w[:, None]).sum(axis=0), 1e-300)
        mu = (exposure * base[None, :]).sum(axis=1) * w
        g = float(z @ (counts.sum(axis=1) - mu))
        # profile information for the single coefficient
        ez = (exposure * (w * z)[:, None]).sum(axis=0)
        e0 = (exposure * w[:, None]).sum(axis=0)
        ezz = (exposure * (w * z * z)[:, None]).sum(axis=0)
        dq = counts.sum(axis=0)
        info = float(np.sum(dq * (ezz / np.maximum(e0, 1e-300) - (ez / np.maximum(e0, 1e-300)) ** 2)))
        if info <= 0:
            break
        step = g / info
        b += float(np.clip(step, -2, 2))
        if abs(step) < 1e-10:
            break
    return b


def univariate_start(data: Dataset) -> np.ndarray:
    """Coefficients from one-covariate-at-a-time fits of each sub-model (no frailty)."""
    pk = data.packed
    term_counts = np.zeros_like(pk.term_exposure)
    term_counts[np.arange(pk.n), pk.term_index] = pk.delta
    b1 = [_poisson_univariate(pk.Z1[:, j], pk.rec_counts, pk.rec_exposure) for j in range(data.d1)]
    b2 = [_poisson_univariate(pk.Z2[:, j], term_counts, pk.term_exposure) for j in range(data.d2)]
    return np.array(b1 + b2)


# --- BAR path and GCV -----------------------------------------------------------------


@dataclass(frozen=True)
class LambdaResult:
    lam: float
    params: ParameterVector
    iterations: int
    converged: bool
    support: tuple
    refit: Optional[UnpenalizedFit]
    gcv: float
    df: float
    fixed_point_residual: float
    error: Optional[str] = None


def bar_path(data: Dataset, start: ParameterVector, lam: float, cfg: BarConfig):
    """Iterate BAR at one penalty level. Returns ``(params, iterations, converged)``."""
    rule = _resolve_rule(cfg.quad_order)
    params = start
    nuisance = NuisanceUpdater(data, rule, cfg.nuisance_simplex)
    for m in range(1, cfg.max_outer_iter + 1):
        ws = workspace_at(data, params, cfg, rule)
        beta_new = bar_step(ws, lam)
        change = float(np.max(np.abs(beta_new - params.beta)))
        params, _, _ = nuisance(params.with_beta(beta_new))
        if change < cfg.beta_tol:
            return params, m, True
    return params, cfg.max_outer_iter, False


def effective_df(beta, lam: float, eta: float, eps: float) -> float:
    """``tr[(D + Sigma)^{-1} D]`` with ``D = diag(1/(beta^2+eta^2))`` and ``Sigma = lam diag(1/s(beta))``."""
    beta = np.asarray(beta, dtype=float)
    D = 1.0 / (beta * beta + eta * eta)
    s = np.where(beta != 0, np.abs(beta), eps)
    return float(np.sum(D / (D + lam / s)))


def gcv_value(loglik: float, df: float, n: int) -> float:
    denom = n * (1.0 - df / n) ** 2
    if denom <= 0:
        return math.inf
    return -loglik / denom


def support_of(beta, threshold: float) -> tuple:
    return tuple(int(j) for j in np.flatnonzero(np.abs(beta) > threshold))


@dataclass
class BarFit:
    beta_penalized: np.ndarray
    support: tuple
    beta_refit: np.ndarray
    params_penalized: ParameterVector
    params_refit: ParameterVector
    lambda_selected: float
    gcv_values: np.ndarray
    outer_iterations: int
    converged: bool
    fixed_point_residual: float
    initial: ParameterVector
    per_lambda: list = field(default_factory=list)
    empty_support: bool = False
    config: Optional[BarConfig] = None

    @property
    def nuisance(self) -> dict:
        p = self.params_refit
        return {"h": p.h.heights.tolist(), "r": p.r.heights.tolist(), "gamma": p.gamma, "phi": p.phi}

    def to_dict(self) -> dict:
        return {
            "beta_penalized": self.beta_penalized.tolist(),
            "support": list(self.support),
            "beta_refit": self.beta_refit.tolist(),
            "params_penalized": self.params_penalized.to_dict(),
            "params_refit": self.params_refit.to_dict(),
            "nuisance": self.nuisance,
            "lambda_selected": self.lambda_selected,
            "lambda_grid": [r.lam for r in self.per_lambda],
            "gcv_values": [None if not math.isfinite(g) else g for g in self.gcv_values],
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "fixed_point_residual": self.fixed_point_residual,
            "empty_support": self.empty_support,
            "zero_threshold": None if self.config is None else self.config.zero_threshold,
        }


def fit_bar(data: Dataset, cfg: Optional[BarConfig] = None, init: Optional[ParameterVector] = None,
            initial_method: str = "alternating") -> BarFit:
    """BAR over the whole lambda grid with GCV selection.

    ``init`` is the starting point of the unpenalised step-1 fit (defaults
    to :func:`default_start`). Every lambda starts from the same step-1
    estimates. Refits are shared between lambdas with the same support.
    """
    cfg = cfg or BarConfig()
    if data.p >= data.n:
        raise InvalidArgumentError(f"need p < n, got p={data.p}, n={data.n}")
    initial = initial_fit(data, init, cfg, method=initial_method)
    refits: dict = {}

    def run(lam: float) -> LambdaResult:
        try:
            params, iters, conv = bar_path(data, initial, lam, cfg)
        except NumericError as exc:
            log.warning("lambda=%g failed: %s", lam, exc)
            return LambdaResult(lam, initial, 0, False, (), None, math.inf, math.nan, math.nan, str(exc))
        fpr = fixed_point_residual(data, params, lam, cfg)
        return LambdaResult(lam, params, iters, conv, support_of(params.beta, cfg.zero_threshold), None, math.inf, math.nan, fpr)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(run, cfg.lambda_grid))
    else:
        results = [run(lam) for lam in cfg.lambda_grid]

    finished = []
    for res in results:
        if res.error is None:
            if res.support not in refits:
                refits[res.support] = fit_unpenalized(data, initial, res.support, cfg)
            rf = refits[res.support]
            df = effective_df(rf.params.beta, res.lam, cfg.eta, cfg.epsilon_gcv)
            res = LambdaResult(res.lam, res.params, res.iterations, res.converged, res.support, rf,
                               gcv_value(rf.loglik, df, data.n), df, res.fixed_point_residual)
        finished.append(res)

    gcv = np.array([r.gcv if r.converged else math.inf for r in finished])
    if not np.isfinite(gcv).any():
        diag = [(r.lam, r.iterations, r.converged, r.error) for r in finished]
        raise ConvergenceError("BAR did not converge for any lambda", last_iterate=finished, diagnostics=diag)
    best = finished[int(np.argmin(gcv))]  # argmin returns the first, i.e. smallest, lambda on ties
    return BarFit(
        beta_penalized=best.params.beta,
        support=best.support,
        beta_refit=best.refit.params.beta,
        params_penalized=best.params,
        params_refit=best.refit.params,
        lambda_selected=best.lam,
        gcv_values=np.array([r.gcv for r in finished]),
        outer_iterations=best.iterations,
        converged=best.converged,
        fixed_point_residual=best.fixed_point_residual,
        initial=initial,
        per_lambda=finished,
        empty_support=len(best.support) == 0,
        config=cfg,
    )


def oracle_fit(data: Dataset, support, cfg: Optional[BarConfig] = None, init: Optional[ParameterVector] = None,
               initial: Optional[ParameterVector] = None) -> UnpenalizedFit:
    """Unpenalised fit on a known support, started from the step-1 estimates."""
    cfg = cfg or BarConfig()
    if initial is None:
        initial = initial_fit(data, init, cfg)
    return fit_unpenalized(data, initial, support, cfg)
