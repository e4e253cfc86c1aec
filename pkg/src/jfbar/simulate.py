"""Simulation designs for the joint frailty model.

Covariates are continuous (AR(rho) Gaussian), correlated binary, or grouped
Gaussian blocks. Terminal times come from inverting the linear-hazard
cumulative baseline; recurrent times are generated gap by gap with the
conditional probability-inversion recursion. Censoring is Uniform(0, c).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import multivariate_normal, norm

from .errors import InvalidArgumentError
from .hazard import PiecewiseHazard
from .likelihood import Dataset, ParameterVector, SubjectRecord

INIT_SIGMAS = {"star": 0.1, "2star": 0.25, "3star": 0.4}
WARM_NUISANCE_SD = 0.25
POSITIVE_FLOOR = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 300
    d1: int = 10
    d2: int = 10
    beta01: tuple = (1.0, 0, 0, 0, 0, 0, 0, 0, 0, -1.0)
    beta02: tuple = (1.0, -0.5, 0, 0, 0, 0, 0, 0, 0, 0)
    rho: float = 0.25
    gamma: float = 1.0
    phi: float = 1.0
    baseline_terminal: tuple = (5.0, 0.2)
    baseline_recurrent: tuple = (8.0, 0.2)
    censor_upper: float = 2.0
    # "mixed": first half continuous AR(rho), rest correlated Bernoulli(0.5);
    # "continuous": all AR(rho); "grouped": block-diagonal AR(rho) over `groups`.
    covariate_mix: str = "mixed"
    binary_rho: float = 0.25
    binary_prob: float = 0.5
    groups: tuple = (2, 3, 3, 2)
    seed: int = 0
    scenario: int = 1

    def __post_init__(self):
        if len(self.beta01) != self.d1 or len(self.beta02) != self.d2:
            raise InvalidArgumentError("true coefficient lengths must match d1 and d2")
        if self.d1 != self.d2:
            raise InvalidArgumentError("shared covariates require d1 == d2")
        if not 0 <= self.rho < 1:
            raise InvalidArgumentError("rho must lie in [0, 1)")
        if self.censor_upper <= 0:
            raise InvalidArgumentError("censor_upper must be positive")
        if self.phi <= 0:
            raise InvalidArgumentError("phi must be positive")
        for a, b in (self.baseline_terminal, self.baseline_recurrent):
            if a <= 0 or a + b * self.censor_upper <= 0:
                raise InvalidArgumentError("baseline hazard a + b t must stay positive on [0, censor_upper]")
        if self.covariate_mix not in ("mixed", "continuous", "grouped"):
            raise InvalidArgumentError(f"unknown covariate_mix {self.covariate_mix!r}")
        if self.covariate_mix == "grouped" and sum(self.groups) != self.d1:
            raise InvalidArgumentError("group sizes must sum to d1")

    @property
    def beta0(self) -> np.ndarray:
        return np.concatenate([self.beta01, self.beta02]).astype(float)

    @property
    def true_support(self) -> np.ndarray:
        return np.flatnonzero(self.beta0 != 0)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


HIGH_CENSOR_UPPER = 0.5


def diverging_dimension(n: int) -> int:
    """Covariates per sub-model in the diverging-dimension design, floor(5 n^(1/5))."""
    d = int(math.floor(5.0 * n ** 0.2))
    # guard against 5*n^(1/5) landing a hair under an integer
    if 5.0 * n ** 0.2 - d > 1 - 1e-12:
        d += 1
    return d


def scenario_config(scenario: int = 1, n: int = 300, gamma: float = 1.0, rho: Optional[float] = None,
                    censor_upper: Optional[float] = None, seed: int = 0, high_censoring: bool = False) -> ScenarioConfig:
    """Standard designs: 1 fixed p = 20, 2 diverging p_n, 3 grouped covariates.

    ``high_censoring`` shortens the censoring window to U(0, 0.5), which
    censors about 40% of subjects; an explicit ``censor_upper`` wins.
    """
    if censor_upper is None:
        censor_upper = HIGH_CENSOR_UPPER if high_censoring else 2.0
    if scenario == 1:
        return ScenarioConfig(n=n, gamma=gamma, rho=0.25 if rho is None else rho, censor_upper=censor_upper, seed=seed, scenario=1)
    if scenario == 2:
        d = diverging_dimension(n)
        b1 = [0.0] * d
        b1[0], b1[-1] = 1.0, -1.0
        b2 = [0.0] * d
        b2[0], b2[1] = 1.0, -0.5
        return ScenarioConfig(n=n, d1=d, d2=d, beta01=tuple(b1), beta02=tuple(b2), gamma=gamma,
                              rho=0.25 if rho is None else rho, censor_upper=censor_upper, seed=seed, scenario=2)
    if scenario == 3:
        return ScenarioConfig(
            n=n, beta01=(0.8, 0.8, 0, 0, 0, 0, 0, 0, -0.8, 0.8), beta02=(0.95, 0.95, 0, 0, 0, 0, 0, 0, -0.75, -0.75),
            gamma=gamma, rho=0.75 if rho is None else rho, censor_upper=censor_upper, covariate_mix="grouped",
            seed=seed, scenario=3,
        )
    raise InvalidArgumentError(f"scenario must be 1, 2 or 3, got {scenario!r}")


# --- covariates ---------------------------------------------------------------


def ar_correlation(d: int, rho: float) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def binary_correlation(latent_r: float, p: float) -> float:
    """Correlation of two Bernoulli(p) obtained by thresholding a bivariate normal."""
    t = norm.ppf(1.0 - p)
    both = multivariate_normal.cdf([-t, -t], mean=[0, 0], cov=[[1, latent_r], [latent_r, 1]])
    return (both - p * p) / (p * (1 - p))


def calibrate_latent(target: float, p: float, tol: float = 1e-6) -> float:
    """Latent Gaussian correlation inducing binary correlation ``target`` (bisection)."""
    if target == 0:
        return 0.0
    lo, hi = (0.0, 0.999999) if target > 0 else (-0.999999, 0.0)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if (binary_correlation(mid, p) < target) == (target > 0):
            lo, hi = (mid, hi) if target > 0 else (lo, mid)
        else:
            lo, hi = (lo, mid) if target > 0 else (mid, hi)
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _mvn(rng: np.random.Generator, n: int, corr: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as exc:
        raise InvalidArgumentError("correlation target is not positive definite") from exc
    return rng.standard_normal((n, corr.shape[0])) @ L.T


_LATENT_CACHE: dict = {}


def correlated_binary(rng: np.random.Generator, n: int, d: int, rho: float, p: float) -> np.ndarray:
    key = (d, rho, p)
    if key not in _LATENT_CACHE:
        lags = {lag: calibrate_latent(rho**lag, p) for lag in range(1, d)}
        latent = np.eye(d)
        for i in range(d):
            for j in range(d):
                if i != j:
                    latent[i, j] = lags[abs(i - j)]
        _LATENT_CACHE[key] = latent
    z = _mvn(rng, n, _LATENT_CACHE[key])
    return (z > norm.ppf(1.0 - p)).astype(float)


def gen_covariates(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    d = cfg.d1
    if cfg.covariate_mix == "continuous":
        Z = _mvn(rng, cfg.n, ar_correlation(d, cfg.rho))
    elif cfg.covariate_mix == "grouped":
        blocks = [_mvn(rng, cfg.n, ar_correlation(g, cfg.rho)) for g in cfg.groups]
        Z = np.hstack(blocks)
    else:
        n_cont = d - d // 2
        cont = _mvn(rng, cfg.n, ar_correlation(n_cont, cfg.rho))
        binary = correlated_binary(rng, cfg.n, d - n_cont, cfg.binary_rho, cfg.binary_prob)
        Z = np.hstack([cont, binary])
    return Z, Z


# --- event times ----------------------------------------------------------------


def linear_cumhaz_inverse(c, a: float, b: float):
    """Solve ``a t + b t^2 / 2 = c`` for ``t >= 0`` (stable root form)."""
    c = np.asarray(c, dtype=float)
    return 2.0 * c / (a + np.sqrt(a * a + 2.0 * b * c))


def linear_cumhaz(t, a: float, b: float):
    t = np.asarray(t, dtype=float)
    return a * t + 0.5 * b * t * t


def draw_terminal_time(linpred: float, baseline, rng: np.random.Generator, U: Optional[float] = None) -> float:
    """Terminal time ``H0^{-1}(-log(U) exp(-linpred))`` for ``h0(t) = a + b t``."""
    a, b = baseline
    if a <= 0:
        raise InvalidArgumentError("baseline intercept must be positive")
    if U is None:
        U = rng.uniform()
    return float(linear_cumhaz_inverse(-math.log(U) * math.exp(-linpred), a, b))


def draw_recurrent_times(linpred: float, baseline, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Event times on ``(0, horizon]`` of a process with intensity ``r0(t) exp(linpred)``."""
    if horizon <= 0:
        raise InvalidArgumentError("horizon must be positive")
    a, b = baseline
    scale = math.exp(-linpred)
    times = []
    cum = 0.0
    while True:
        cum += -math.log1p(-rng.uniform()) * scale
        t = float(linear_cumhaz_inverse(cum, a, b))
        if t > horizon:
            break
        if times and t <= times[-1]:
            continue
        times.append(t)
    return np.array(times)


def gen_dataset(cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None, Q: int = 5) -> Dataset:
    """Simulate one dataset; ``dataset.meta`` records the truth and summary rates."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    Z1, Z2 = gen_covariates(cfg, rng)
    u = rng.normal(0.0, cfg.phi, size=cfg.n)
    lp1 = Z1 @ np.asarray(cfg.beta01, dtype=float) + u
    lp2 = Z2 @ np.asarray(cfg.beta02, dtype=float) + cfg.gamma * u
    subjects = []
    for i in range(cfg.n):
        D = draw_terminal_time(lp2[i], cfg.baseline_terminal, rng)
        C = rng.uniform(0.0, cfg.censor_upper)
        Y = min(C, D)
        rec = draw_recurrent_times(lp1[i], cfg.baseline_recurrent, Y, rng)
        subjects.append(SubjectRecord(rec, Y, int(D <= C), Z1[i], Z2[i]))
    data = Dataset.from_subjects(subjects, Q)
    events = np.array([s.n_events for s in subjects])
    data.meta = {
        "censoring_rate": float(1.0 - np.mean([s.terminal for s in subjects])),
        "mean_recurrent_events": float(events.mean()),
        "frailty": u,
        "scenario": cfg.to_dict(),
    }
    return data


# --- starting values ------------------------------------------------------------------


@dataclass(frozen=True)
class InitScheme:
    """Starting values: ``perturb`` adds N(0, sigma^2) to every true component;
    ``warm`` takes externally supplied coefficients and perturbs the nuisance part."""

    kind: str = "perturb"
    sigma: float = 0.1
    h0_start: float = 5.0
    r0_start: float = 8.0
    beta: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("perturb", "warm"):
            raise InvalidArgumentError(f"unknown init kind {self.kind!r}")
        if self.kind == "perturb" and self.sigma < 0:
            raise InvalidArgumentError("sigma must be non-negative")

    @classmethod
    def named(cls, name: str, beta=None) -> "InitScheme":
        if name in INIT_SIGMAS:
            return cls(kind="perturb", sigma=INIT_SIGMAS[name])
        if name == "warm":
            return cls(kind="warm", sigma=WARM_NUISANCE_SD, beta=None if beta is None else tuple(beta))
        raise InvalidArgumentError(f"unknown init scheme {name!r}")


def truth_parameters(cfg: ScenarioConfig, data: Dataset, scheme: Optional[InitScheme] = None) -> ParameterVector:
    """True regression/frailty values with the flat hazard starts of ``scheme``."""
    scheme = scheme or InitScheme()
    return ParameterVector(
        cfg.beta01,
        cfg.beta02,
        PiecewiseHazard(data.cuts_terminal, np.full(data.Q_terminal, scheme.h0_start)),
        PiecewiseHazard(data.cuts_recurrent, np.full(data.Q_recurrent, scheme.r0_start)),
        cfg.gamma,
        cfg.phi,
    )


def make_initial(scheme: InitScheme, truth: ParameterVector, rng: np.random.Generator) -> ParameterVector:
    """Perturbed starting point. Hazard heights and phi are floored at 0.05."""
    if scheme.kind == "warm":
        if scheme.beta is None:
            raise InvalidArgumentError("warm start needs externally supplied coefficients")
        beta = np.asarray(scheme.beta, dtype=float)
        sd = scheme.sigma
        start = truth.with_beta(beta)
        noise_h = rng.normal(0, sd, truth.h.n_intervals)
        noise_r = rng.normal(0, sd, truth.r.n_intervals)
        g_noise, p_noise = rng.normal(0, sd, 2)
    else:
        sd = scheme.sigma
        beta = truth.beta + rng.normal(0, sd, truth.beta.size)
        noise_h = rng.normal(0, sd, truth.h.n_intervals)
        noise_r = rng.normal(0, sd, truth.r.n_intervals)
        g_noise, p_noise = rng.normal(0, sd, 2)
        start = truth.with_beta(beta)
    h = np.maximum(truth.h.heights + noise_h, POSITIVE_FLOOR)
    r = np.maximum(truth.r.heights + noise_r, POSITIVE_FLOOR)
    return ParameterVector(
        start.beta1, start.beta2,
        PiecewiseHazard(truth.h.cuts, h), PiecewiseHazard(truth.r.cuts, r),
        truth.gamma + g_noise, max(truth.phi + p_noise, POSITIVE_FLOOR),
    )
