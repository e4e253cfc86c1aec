"""Marginal likelihood of the joint frailty model for recurrent and terminal events.

For subject ``i`` with frailty ``u ~ N(0, phi^2)``::

    recurrent hazard  r0(t) exp(beta1' z1 + u)
    terminal hazard   h0(t) exp(beta2' z2 + gamma u)

Both baselines are piecewise constant. The frailty is integrated out with
mode-centred Gauss-Hermite quadrature; every integrand is handled in
log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import InvalidArgumentError, NumericError
from .hazard import PiecewiseHazard, build_cuts, exposure_matrix, interval_index
from .quadrature import (
    CURVATURE_FLOOR,
    MODE_BRACKET,
    AdaptiveQuadState,
    QuadratureRule,
    adaptive_log_integrate,
    find_mode,
    gauss_hermite_rule,
)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
MODE_TOL = 1e-8
MODE_MAX_ITER = 200


@dataclass(frozen=True)
class SubjectRecord:
    recurrent_times: np.ndarray
    followup: float
    terminal: int
    z1: np.ndarray
    z2: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.recurrent_times, dtype=float).ravel()
        object.__setattr__(self, "recurrent_times", t)
        object.__setattr__(self, "z1", np.asarray(self.z1, dtype=float).ravel())
        object.__setattr__(self, "z2", np.asarray(self.z2, dtype=float).ravel())
        object.__setattr__(self, "followup", float(self.followup))
        if self.terminal not in (0, 1, True, False):
            raise InvalidArgumentError(f"terminal indicator must be 0 or 1, got {self.terminal!r}")
        object.__setattr__(self, "terminal", int(self.terminal))
        if not np.isfinite(self.followup) or self.followup < 0:
            raise InvalidArgumentError("follow-up time must be finite and >= 0")
        if t.size:
            if np.any(np.diff(t) <= 0):
                raise InvalidArgumentError("recurrent times must be strictly increasing")
            if t[0] <= 0 or t[-1] > self.followup:
                raise InvalidArgumentError("recurrent times must lie in (0, followup]")

    @property
    def n_events(self) -> int:
        return self.recurrent_times.size


@dataclass(frozen=True)
class ParameterVector:
    """Full parameter set (beta1, beta2, h, r, gamma, phi); ``phi`` is the frailty SD."""

    beta1: np.ndarray
    beta2: np.ndarray
    h: PiecewiseHazard
    r: PiecewiseHazard
    gamma: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "beta1", np.asarray(self.beta1, dtype=float).ravel())
        object.__setattr__(self, "beta2", np.asarray(self.beta2, dtype=float).ravel())
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "phi", float(self.phi))
        if not self.phi > 0 or not np.isfinite(self.phi):
            raise InvalidArgumentError(f"phi must be positive, got {self.phi!r}")

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate([self.beta1, self.beta2])

    @property
    def d1(self) -> int:
        return self.beta1.size

    def nuisance_vector(self) -> np.ndarray:
        """Unconstrained nuisance coordinates ``(log h, log r, gamma, log phi)``."""
        return np.concatenate([np.log(self.h.heights), np.log(self.r.heights), [self.gamma, math.log(self.phi)]])

    def with_beta(self, beta) -> "ParameterVector":
        beta = np.asarray(beta, dtype=float)
        return ParameterVector(beta[: self.d1], beta[self.d1 :], self.h, self.r, self.gamma, self.phi)

    def with_nuisance(self, vec) -> "ParameterVector":
        vec = np.asarray(vec, dtype=float)
        qh, qr = self.h.n_intervals, self.r.n_intervals
        h = PiecewiseHazard(self.h.cuts, np.exp(vec[:qh]))
        r = PiecewiseHazard(self.r.cuts, np.exp(vec[qh : qh + qr]))
        return ParameterVector(self.beta1, self.beta2, h, r, vec[qh + qr], math.exp(vec[qh + qr + 1]))

    def to_dict(self) -> dict:
        return {
            "beta1": self.beta1.tolist(),
            "beta2": self.beta2.tolist(),
            "h": self.h.heights.tolist(),
            "r": self.r.heights.tolist(),
            "cuts_terminal": self.h.cuts.tolist(),
            "cuts_recurrent": self.r.cuts.tolist(),
            "gamma": self.gamma,
            "phi": self.phi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterVector":
        return cls(
            d["beta1"],
            d["beta2"],
            PiecewiseHazard(np.asarray(d["cuts_terminal"]), np.asarray(d["h"])),
            PiecewiseHazard(np.asarray(d["cuts_recurrent"]), np.asarray(d["r"])),
            d["gamma"],
            d["phi"],
        )


class Dataset:
    """Subjects plus the cut points shared by all of them.

    The per-subject quantities the likelihood needs (interval exposures,
    event counts per interval, ...) are packed once into arrays.
    """

    def __init__(self, subjects: Sequence[SubjectRecord], cuts_terminal, cuts_recurrent):
        if len(subjects) == 0:
            raise InvalidArgumentError("dataset must contain at least one subject")
        d1, d2 = subjects[0].z1.size, subjects[0].z2.size
        for i, s in enumerate(subjects):
            if s.z1.size != d1 or s.z2.size != d2:
                raise InvalidArgumentError(f"subject {i} has covariate dimensions ({s.z1.size}, {s.z2.size}), expected ({d1}, {d2})")
        self.subjects = list(subjects)
        self.cuts_terminal = np.asarray(cuts_terminal, dtype=float)
        self.cuts_recurrent = np.asarray(cuts_recurrent, dtype=float)
        self.d1, self.d2 = d1, d2
        self.meta: dict = {}

    @classmethod
    def from_subjects(cls, subjects: Sequence[SubjectRecord], Q: int = 5) -> "Dataset":
        """Build cuts from the observed follow-up and recurrent event times."""
        followups = np.array([s.followup for s in subjects])
        cuts_d = build_cuts(followups, Q)
        rec = np.concatenate([s.recurrent_times for s in subjects]) if subjects else np.array([])
        cuts_r = build_cuts(rec, Q) if rec.size else cuts_d.copy()
        return cls(subjects, cuts_d, cuts_r)

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def p(self) -> int:
        return self.d1 + self.d2

    @property
    def Q_terminal(self) -> int:
        return self.cuts_terminal.size - 1

    @property
    def Q_recurrent(self) -> int:
        return self.cuts_recurrent.size - 1

    def subset(self, index) -> "Dataset":
        return Dataset([self.subjects[i] for i in index], self.cuts_terminal, self.cuts_recurrent)

    @cached_property
    def packed(self) -> "PackedData":
        return PackedData.from_dataset(self)


@dataclass(frozen=True)
class PackedData:
    Z1: np.ndarray
    Z2: np.ndarray
    delta: np.ndarray
    nrec: np.ndarray
    followup: np.ndarray
    term_exposure: np.ndarray  # n x Q_terminal
    term_index: np.ndarray  # interval holding Y_i
    rec_exposure: np.ndarray  # n x Q_recurrent
    rec_counts: np.ndarray  # events per recurrent interval
    n: int = field(default=0)

    @classmethod
    def from_dataset(cls, data: Dataset) -> "PackedData":
        subs = data.subjects
        n = len(subs)
        Y = np.array([s.followup for s in subs])
        counts = np.zeros((n, data.Q_recurrent))
        for i, s in enumerate(subs):
            if s.n_events:
                np.add.at(counts[i], interval_index(data.cuts_recurrent, s.recurrent_times), 1.0)
        return cls(
            Z1=np.array([s.z1 for s in subs]).reshape(n, data.d1),
            Z2=np.array([s.z2 for s in subs]).reshape(n, data.d2),
            delta=np.array([s.terminal for s in subs], dtype=float),
            nrec=np.array([s.n_events for s in subs], dtype=float),
            followup=Y,
            term_exposure=exposure_matrix(data.cuts_terminal, Y),
            term_index=interval_index(data.cuts_terminal, Y),
            rec_exposure=exposure_matrix(data.cuts_recurrent, Y),
            rec_counts=counts,
            n=n,
        )


@dataclass
class FrailtyTerms:
    """Per-subject coefficients of ``log m1(u)``.

    ``log m1(u) = const + lin*u - Rc*exp(u) - Hc*exp(gamma*u) - u^2/(2 phi^2)``
    where ``Rc*exp(u)`` and ``Hc*exp(gamma*u)`` are the conditional
    cumulative hazards of the recurrent and terminal processes at ``Y_i``.
    """

    const: np.ndarray
    lin: np.ndarray
    Rc: np.ndarray
    Hc: np.ndarray
    nrec: np.ndarray
    delta: np.ndarray
    gamma: float
    phi: float

    def log_m1(self, u: np.ndarray) -> np.ndarray:
        """``log m1`` at ``u`` of shape (n,) or (n, k)."""
        g, inv = self.gamma, 1.0 / (self.phi * self.phi)
        if u.ndim == 2:
            c, a, R, H = (x[:, None] for x in (self.const, self.lin, self.Rc, self.Hc))
        else:
            c, a, R, H = self.const, self.lin, self.Rc, self.Hc
        return c + a * u - R * np.exp(u) - H * np.exp(g * u) - 0.5 * inv * u * u

    def dlog_m1(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g, inv = self.gamma, 1.0 / (self.phi * self.phi)
        R = self.Rc * np.exp(u)
        H = self.Hc * np.exp(g * u)
        d1 = self.lin - R - g * H - inv * u
        d2 = -R - g * g * H - inv
        return d1, d2


def frailty_terms(data: Dataset, params: ParameterVector) -> FrailtyTerms:
    pk = data.packed
    return _assemble_terms(pk, pk.Z1 @ params.beta1, pk.Z2 @ params.beta2, params.h.heights, params.r.heights, params.gamma, params.phi)


def _assemble_terms(pk: "PackedData", eta1, eta2, h, r, gamma: float, phi: float) -> FrailtyTerms:
    const = (
        pk.delta * (np.log(h)[pk.term_index] + eta2)
        + pk.rec_counts @ np.log(r)
        + pk.nrec * eta1
        - math.log(phi)
        - LOG_SQRT_2PI
    )
    return FrailtyTerms(
        const=const,
        lin=pk.delta * gamma + pk.nrec,
        Rc=(pk.rec_exposure @ r) * np.exp(eta1),
        Hc=(pk.term_exposure @ h) * np.exp(eta2),
        nrec=pk.nrec,
        delta=pk.delta,
        gamma=float(gamma),
        phi=float(phi),
    )


def newton_modes(deriv, n: int, lo=None, hi=None, u0=None, tol: float = MODE_TOL, max_iter: int = MODE_MAX_ITER):
    """Vectorised safeguarded Newton search for the maxima of ``n`` 1-d functions.

    ``deriv(u)`` returns first and second derivatives at ``u`` (shape (n,)).
    Returns ``(u, d2, ok)``; ``ok`` is False where the search failed.
    """
    lo = np.full(n, MODE_BRACKET[0]) if lo is None else np.array(lo, dtype=float)
    hi = np.full(n, MODE_BRACKET[1]) if hi is None else np.array(hi, dtype=float)
    u = np.zeros(n) if u0 is None else np.clip(np.array(u0, dtype=float), lo, hi)
    ok = np.zeros(n, dtype=bool)
    d1 = d2 = np.zeros(n)
    for _ in range(max_iter):
        d1, d2 = deriv(u)
        with np.errstate(invalid="ignore"):
            ok = np.abs(d1) <= tol
        if ok.all():
            break
        pos = d1 > 0
        lo = np.where(pos & ~ok, u, lo)
        hi = np.where(~pos & ~ok, u, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = u - d1 / d2
        bad = ~(d2 < 0) | ~(cand > lo) | ~(cand < hi)
        cand = np.where(bad, 0.5 * (lo + hi), cand)
        u = np.where(ok, u, cand)
    return u, d2, ok


def m1_states(terms: FrailtyTerms, u0=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mode, curvature and scale of every subject's ``m1`` integrand."""
    n = terms.const.size
    mode, d2, ok = newton_modes(terms.dlog_m1, n, u0=u0)
    if not ok.all():
        i = int(np.flatnonzero(~ok)[0])
        raise NumericError(f"frailty mode search failed for subject {i}", last_iterate=float(mode[i]), subject=i)
    curv = np.maximum(-d2, CURVATURE_FLOOR)
    return mode, curv, 1.0 / np.sqrt(curv)


def _row_logsumexp(v: np.ndarray) -> np.ndarray:
    mx = v.max(axis=1)
    return mx + np.log(np.exp(v - mx[:, None]).sum(axis=1))


@dataclass
class QuadratureGrid:
    """Adaptive nodes of every subject's ``m1`` integrand."""

    mode: np.ndarray
    scale: np.ndarray
    curvature: np.ndarray
    u: np.ndarray  # n x m transformed nodes
    log_terms: np.ndarray  # log(w e^{x^2}) + log m1(u), n x m
    log_scale: np.ndarray  # log(sqrt(2) * scale)
    loglik: np.ndarray  # per-subject log L_i


def quadrature_grid(terms: FrailtyTerms, rule: QuadratureRule, u0=None) -> QuadratureGrid:
    mode, curv, scale = m1_states(terms, u0)
    s = math.sqrt(2.0) * scale
    u = mode[:, None] + s[:, None] * rule.nodes[None, :]
    lt = rule.log_scaled_weights[None, :] + terms.log_m1(u)
    log_s = np.log(s)
    ll = log_s + _row_logsumexp(lt)
    return QuadratureGrid(mode, scale, curv, u, lt, log_s, ll)


def _resolve_rule(rule) -> QuadratureRule:
    if rule is None:
        return gauss_hermite_rule(30)
    if isinstance(rule, (int, np.integer)):
        return gauss_hermite_rule(int(rule))
    return rule


def subject_logliks(data: Dataset, params: ParameterVector, rule=None) -> np.ndarray:
    """Vector of per-subject marginal log-likelihoods."""
    rule = _resolve_rule(rule)
    ll = quadrature_grid(frailty_terms(data, params), rule).loglik
    bad = ~np.isfinite(ll)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite marginal likelihood for subject {i}", subject=i)
    return ll


def log_likelihood(data: Dataset, params: ParameterVector, rule=None) -> float:
    """Total marginal log-likelihood (pairwise summation, fixed order)."""
    return float(np.sum(subject_logliks(data, params, rule)))


class NuisanceObjective:
    """Negative log-likelihood as a function of ``(log h, log r, gamma, log phi)``.

    ``beta`` is held fixed, so the linear predictors are computed once; each
    call starts the mode search from the previous call's modes.
    """

    def __init__(self, data: Dataset, params: ParameterVector, rule=None):
        pk = data.packed
        self.pk = pk
        self.params = params
        self.rule = _resolve_rule(rule)
        self.eta1 = pk.Z1 @ params.beta1
        self.eta2 = pk.Z2 @ params.beta2
        self.qh, self.qr = params.h.n_intervals, params.r.n_intervals
        self._modes = None
        self.n_calls = 0

    def __call__(self, vec) -> float:
        vec = np.asarray(vec, dtype=float)
        self.n_calls += 1
        qh, qr = self.qh, self.qr
        if not np.all(np.isfinite(vec)) or np.any(np.abs(vec[: qh + qr]) > 700) or abs(vec[qh + qr + 1]) > 20:
            return np.inf
        h, r = np.exp(vec[:qh]), np.exp(vec[qh : qh + qr])
        t = _assemble_terms(self.pk, self.eta1, self.eta2, h, r, vec[qh + qr], math.exp(vec[qh + qr + 1]))
        u0 = np.zeros(t.const.size) if self._modes is None else self._modes
        ll, modes = _kernels.marginal_logliks(
            t.const, t.lin, t.Rc, t.Hc, t.gamma, t.phi, self.rule.nodes, self.rule.log_scaled_weights,
            u0, MODE_BRACKET[0], MODE_BRACKET[1], MODE_TOL, MODE_MAX_ITER, CURVATURE_FLOOR,
        )
        total = float(np.sum(ll))
        if not np.isfinite(total):
            return np.inf
        self._modes = modes
        return -total


# --- single-subject API -------------------------------------------------------


def _subject_pieces(subject: SubjectRecord, params: ParameterVector):
    eta1 = float(subject.z1 @ params.beta1)
    eta2 = float(subject.z2 @ params.beta2)
    Y = subject.followup
    H0 = params.h.cumulative(Y)
    R0 = params.r.cumulative(Y)
    h0 = params.h.hazard_at(Y)
    log_r = float(np.sum(np.log(params.r.hazard_at(subject.recurrent_times)))) if subject.n_events else 0.0
    return eta1, eta2, H0, R0, h0, log_r


def conditional_terminal_loglik(subject: SubjectRecord, params: ParameterVector, u):
    """``delta*log h_i(Y|u) - H_i(Y|u)``."""
    _, eta2, H0, _, h0, _ = _subject_pieces(subject, params)
    lp = eta2 + params.gamma * np.asarray(u, dtype=float)
    out = -H0 * np.exp(lp)
    if subject.terminal:
        out = out + math.log(h0) + lp
    return out


def conditional_recurrent_loglik(subject: SubjectRecord, params: ParameterVector, u):
    """``sum_k log r_i(T_k|u) - R_i(Y|u)``."""
    eta1, _, _, R0, _, log_r = _subject_pieces(subject, params)
    lp = eta1 + np.asarray(u, dtype=float)
    return log_r + subject.n_events * lp - R0 * np.exp(lp)


def log_frailty_density(u, phi: float):
    u = np.asarray(u, dtype=float)
    return -0.5 * (u / phi) ** 2 - math.log(phi) - LOG_SQRT_2PI


def subject_log_m1(subject: SubjectRecord, params: ParameterVector):
    """``log m1`` of one subject with its analytic first/second derivatives."""
    eta1, eta2, H0, R0, h0, log_r = _subject_pieces(subject, params)
    g, phi, n, d = params.gamma, params.phi, subject.n_events, subject.terminal
    Rc, Hc = R0 * math.exp(eta1), H0 * math.exp(eta2)

    def log_m1(u):
        return (
            conditional_terminal_loglik(subject, params, u)
            + conditional_recurrent_loglik(subject, params, u)
            + log_frailty_density(u, phi)
        )

    def d1(u):
        return d * g - g * Hc * math.exp(g * u) + n - Rc * math.exp(u) - u / phi**2

    def d2(u):
        return -g * g * Hc * math.exp(g * u) - Rc * math.exp(u) - 1.0 / phi**2

    return log_m1, d1, d2


def subject_m1_state(subject: SubjectRecord, params: ParameterVector) -> AdaptiveQuadState:
    log_m1, d1, d2 = subject_log_m1(subject, params)
    return find_mode(log_m1, 0.0, dlog_g=d1, d2log_g=d2)


def subject_marginal_likelihood(subject: SubjectRecord, params: ParameterVector, rule=None) -> float:
    """Integral over the frailty of ``g1 * g2 * f_phi`` for one subject."""
    rule = _resolve_rule(rule)
    log_m1, _, _ = subject_log_m1(subject, params)
    state = subject_m1_state(subject, params)
    return math.exp(adaptive_log_integrate(log_m1, state, rule))
