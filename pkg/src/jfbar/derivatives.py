"""Analytic score and Hessian of the marginal log-likelihood in ``beta``.

With ``R = R_i(Y|u)`` and ``H = H_i(Y|u)`` the conditional cumulative
hazards, every derivative is an integral of ``m1(u)`` times a factor:

=====  ==========================  ========================
index  factor                      used for
=====  ==========================  ========================
1      1                           likelihood ``L_i``
2      n_i - R                     score, beta1 block
3      delta_i - H                 score, beta2 block
4      (n_i - R)^2 - R             Hessian, beta1 block
5      (delta_i - H)^2 - H         Hessian, beta2 block
6      (n_i - R)(delta_i - H)      Hessian, cross block
=====  ==========================  ========================

The recurrent factor ``n_i - R`` pairs with ``beta1`` and the terminal factor
``delta_i - H`` with ``beta2``; finite differences of the log-likelihood
confirm this pairing.

Integrals 2-6 are signed. Each is evaluated with its own mode/curvature
when the factor keeps one sign over the effective support of ``m1``
(``mode +- 8 scale``) and the mode search succeeds; otherwise the ``m1``
nodes are reused. Positive and negative node contributions are
accumulated separately in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .likelihood import (
    Dataset,
    FrailtyTerms,
    ParameterVector,
    SubjectRecord,
    _resolve_rule,
    frailty_terms,
    newton_modes,
    quadrature_grid,
)
from .quadrature import CURVATURE_FLOOR

WINDOW_HALF_WIDTH = 8.0
DENOM_FLOOR = 1e-6


@dataclass(frozen=True)
class ScoreHessian:
    gradient: np.ndarray
    hessian: np.ndarray
    loglik: float


def _factor(j: int, terms: FrailtyTerms, u: np.ndarray):
    """Factor ``F_j`` and its first two u-derivatives at ``u`` (broadcast per subject)."""
    shape2 = u.ndim == 2
    n = terms.nrec[:, None] if shape2 else terms.nrec
    d = terms.delta[:, None] if shape2 else terms.delta
    Rc = terms.Rc[:, None] if shape2 else terms.Rc
    Hc = terms.Hc[:, None] if shape2 else terms.Hc
    g = terms.gamma
    R = Rc * np.exp(u)
    H = Hc * np.exp(g * u)
    a, a1, a2 = n - R, -R, -R
    b, b1, b2 = d - H, -g * H, -g * g * H
    if j == 2:
        return a, a1, a2
    if j == 3:
        return b, b1, b2
    if j == 4:
        return a * a - R, 2 * a * a1 - R, 2 * a1 * a1 + 2 * a * a2 - R
    if j == 5:
        return b * b - H, 2 * b * b1 - g * H, 2 * b1 * b1 + 2 * b * b2 - g * g * H
    if j == 6:
        return a * b, a1 * b + a * b1, a2 * b + 2 * a1 * b1 + a * b2
    raise ValueError(j)


def _values_only(j: int, terms: FrailtyTerms, u: np.ndarray) -> np.ndarray:
    n, d = terms.nrec[:, None], terms.delta[:, None]
    R = terms.Rc[:, None] * np.exp(u)
    H = terms.Hc[:, None] * np.exp(terms.gamma * u)
    a, b = n - R, d - H
    return {2: a, 3: b, 4: a * a - R, 5: b * b - H, 6: a * b}[j]


def _constant_sign(j: int, terms: FrailtyTerms, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Whether ``F_j`` keeps one strict sign on ``[lo, hi]`` (per subject).

    ``R`` and ``H`` are monotone in ``u``, so each factor is a polynomial in
    a monotone quantity and the check reduces to locating its roots.
    """
    n, d, g = terms.nrec, terms.delta, terms.gamma
    R_lo, R_hi = terms.Rc * np.exp(lo), terms.Rc * np.exp(hi)
    H_a, H_b = terms.Hc * np.exp(g * lo), terms.Hc * np.exp(g * hi)
    H_lo, H_hi = np.minimum(H_a, H_b), np.maximum(H_a, H_b)

    def outside(vlo, vhi, roots):
        ok = np.ones_like(vlo, dtype=bool)
        for rt in roots:
            ok &= ~((vlo <= rt) & (rt <= vhi))
        return ok

    def quad_roots(c):
        disc = np.sqrt(4 * c + 1)
        return ((2 * c + 1) - disc) / 2, ((2 * c + 1) + disc) / 2

    if j == 2:
        return outside(R_lo, R_hi, [n]) & (n > 0) | (n == 0) & (terms.Rc > 0)
    if j == 3:
        return outside(H_lo, H_hi, [d]) & (d > 0) | (d == 0) & (terms.Hc > 0)
    if j == 4:
        r1, r2 = quad_roots(n)
        return outside(R_lo, R_hi, [r1, r2]) & (terms.Rc > 0) | (terms.Rc == 0) & (n > 0)
    if j == 5:
        r1, r2 = quad_roots(d)
        return outside(H_lo, H_hi, [r1, r2]) & (terms.Hc > 0) | (terms.Hc == 0) & (d > 0)
    if j == 6:
        return _constant_sign(2, terms, lo, hi) & _constant_sign(3, terms, lo, hi)
    raise ValueError(j)


def _signed_log_sum(log_abs: np.ndarray, sign: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``log|sum s e^t|`` and its sign."""
    mx = log_abs.max(axis=1)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    tot = (sign * np.exp(log_abs - mx[:, None])).sum(axis=1)
    with np.errstate(divide="ignore"):
        return mx + np.log(np.abs(tot)), np.sign(tot)


def _specific_states(j: int, terms: FrailtyTerms, lo: np.ndarray, hi: np.ndarray, m1_mode: np.ndarray, use: np.ndarray):
    """Mode/curvature of ``|m_j|`` for the subjects in ``use``."""
    idx = np.flatnonzero(use)
    sub = FrailtyTerms(
        terms.const[idx], terms.lin[idx], terms.Rc[idx], terms.Hc[idx], terms.nrec[idx], terms.delta[idx], terms.gamma, terms.phi
    )

    def deriv(u):
        d1, d2 = sub.dlog_m1(u)
        F, F1, F2 = _factor(j, sub, u)
        with np.errstate(divide="ignore", invalid="ignore"):
            return d1 + F1 / F, d2 + (F2 * F - F1 * F1) / (F * F)

    mode, d2, ok = newton_modes(deriv, idx.size, lo=lo[idx], hi=hi[idx], u0=m1_mode[idx])
    F, _, _ = _factor(j, sub, mode)
    ok &= np.isfinite(mode) & (np.abs(F) >= DENOM_FLOOR) & (-d2 > CURVATURE_FLOOR)
    # roots hugging a bracket end mean the maximum is on the boundary
    ok &= (mode > lo[idx] + 1e-9) & (mode < hi[idx] - 1e-9)
    return idx[ok], mode[ok], -d2[ok]


def auxiliary_ratios(terms: FrailtyTerms, rule, specific: bool = True):
    """Per-subject ``log L_i`` and the ratios ``int m_j / L_i`` for j = 2..6.

    Returns ``(loglik, ratios, used_specific)`` with ``ratios`` of shape
    (5, n) and ``used_specific`` a boolean (5, n) mask.
    """
    grid = quadrature_grid(terms, rule)
    n = terms.const.size
    ratios = np.empty((5, n))
    used = np.zeros((5, n), dtype=bool)
    # m1-node path for everyone: weights normalised by L_i
    w = np.exp(grid.log_terms - grid.loglik[:, None] + grid.log_scale[:, None])
    for j in range(2, 7):
        ratios[j - 2] = (w * _values_only(j, terms, grid.u)).sum(axis=1)
    if not specific:
        return grid.loglik, ratios, used

    lo = grid.mode - WINDOW_HALF_WIDTH * grid.scale
    hi = grid.mode + WINDOW_HALF_WIDTH * grid.scale
    sqrt2 = math.sqrt(2.0)
    for j in range(2, 7):
        cand = _constant_sign(j, terms, lo, hi)
        if not cand.any():
            continue
        idx, mode, curv = _specific_states(j, terms, lo, hi, grid.mode, cand)
        if idx.size == 0:
            continue
        s = sqrt2 / np.sqrt(curv)
        u = mode[:, None] + s[:, None] * rule.nodes[None, :]
        sub = FrailtyTerms(
            terms.const[idx], terms.lin[idx], terms.Rc[idx], terms.Hc[idx], terms.nrec[idx], terms.delta[idx], terms.gamma, terms.phi
        )
        F = _values_only(j, sub, u)
        with np.errstate(divide="ignore"):
            la = rule.log_scaled_weights[None, :] + sub.log_m1(u) + np.log(np.abs(F))
        lsum, sgn = _signed_log_sum(la, np.sign(F))
        ratios[j - 2, idx] = sgn * np.exp(lsum + np.log(s) - grid.loglik[idx])
        used[j - 2, idx] = True
    return grid.loglik, ratios, used


def score_and_hessian(data: Dataset, params: ParameterVector, rule=None, specific: bool = True) -> ScoreHessian:
    """Gradient and Hessian of the log-likelihood with respect to ``(beta1, beta2)``."""
    rule = _resolve_rule(rule)
    terms = frailty_terms(data, params)
    ll, ratios, _ = auxiliary_ratios(terms, rule, specific=specific)
    if not np.all(np.isfinite(ratios)):
        i = int(np.flatnonzero(~np.isfinite(ratios).all(axis=0))[0])
        raise NumericError(f"non-finite derivative integrals for subject {i}", subject=i)
    e2, e3, e4, e5, e6 = ratios
    pk = data.packed
    Z1, Z2 = pk.Z1, pk.Z2
    grad = np.concatenate([Z1.T @ e2, Z2.T @ e3])
    h11 = (Z1 * (e4 - e2 * e2)[:, None]).T @ Z1
    h22 = (Z2 * (e5 - e3 * e3)[:, None]).T @ Z2
    h12 = (Z1 * (e6 - e2 * e3)[:, None]).T @ Z2
    hess = np.block([[h11, h12], [h12.T, h22]])
    hess = 0.5 * (hess + hess.T)
    return ScoreHessian(gradient=grad, hessian=hess, loglik=float(np.sum(ll)))


def subject_auxiliary_integrals(subject: SubjectRecord, params: ParameterVector, rule=None):
    """``(L_i, int m2, int m3, int m4, int m5, int m6)`` for one subject.

    ``int m2`` and ``int m3`` are the recurrent and terminal score
    integrals (the numerators of the two gradient blocks).
    """
    rule = _resolve_rule(rule)
    data = Dataset([subject], params.h.cuts, params.r.cuts)
    ll, ratios, _ = auxiliary_ratios(frailty_terms(data, params), rule)
    L = math.exp(ll[0])
    return (L,) + tuple(float(L * r) for r in ratios[:, 0])
