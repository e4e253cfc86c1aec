"""Compiled per-subject marginal log-likelihood used inside the nuisance search.

Same algorithm as :func:`jfbar.likelihood.quadrature_grid`: safeguarded
Newton for the mode of each ``log m1``, then mode-centred Gauss-Hermite in
log space.
"""
from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def marginal_logliks(const, lin, Rc, Hc, gamma, phi, nodes, log_w, u0, lo0, hi0, tol, max_iter, floor):
    n = const.size
    m = nodes.size
    inv = 1.0 / (phi * phi)
    out = np.empty(n)
    modes = np.empty(n)
    sq2 = math.sqrt(2.0)
    for i in range(n):
        a, R, H, c = lin[i], Rc[i], Hc[i], const[i]
        lo, hi = lo0, hi0
        u = min(max(u0[i], lo), hi)
        ok = False
        d2 = -inv
        for _ in range(max_iter):
            eR = R * math.exp(u)
            eH = H * math.exp(gamma * u)
            d1 = a - eR - gamma * eH - inv * u
            d2 = -eR - gamma * gamma * eH - inv
            if abs(d1) <= tol:
                ok = True
                break
            if d1 > 0:
                lo = u
            else:
                hi = u
            cand = u - d1 / d2
            if not (d2 < 0.0) or not (cand > lo) or not (cand < hi):
                cand = 0.5 * (lo + hi)
            u = cand
        if not ok:
            out[i] = np.nan
            modes[i] = u
            continue
        curv = max(-d2, floor)
        s = sq2 / math.sqrt(curv)
        mx = -np.inf
        vals = np.empty(m)
        for j in range(m):
            x = u + s * nodes[j]
            v = log_w[j] + c + a * x - R * math.exp(x) - H * math.exp(gamma * x) - 0.5 * inv * x * x
            vals[j] = v
            if v > mx:
                mx = v
        tot = 0.0
        for j in range(m):
            tot += math.exp(vals[j] - mx)
        out[i] = math.log(s) + mx + math.log(tot)
        modes[i] = u
    return out, modes
