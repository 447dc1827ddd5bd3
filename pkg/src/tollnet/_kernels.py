"""Compiled inner loops.

``integrate`` is the RK4 loop for exponential links under none/marginal/fixed
tolls. It mirrors ``FlowDynamics`` and ``_guard`` operation for operation; the
numpy path stays the reference and handles every other case.
``lattice_argmin4`` is the exhaustive 4-path scan behind the grid oracle.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .links import _SERIES_CUTOFF, _SERIES_TERMS, SENTINEL

POLICY_CODES = {"none": 0, "marginal": 1, "fixed": 2}

# status codes returned by integrate
OK, NON_FINITE, LEFT_DOMAIN, LEFT_SIMPLEX, ALL_BLOCKED = 0, 1, 2, 3, 4


@njit(cache=True)
def _rhs(z, x, dz, dx, C, a, policy, fixed, A, same_tail, inv_deg, arrivals, exog,
         eta, beta, demand, split_floor):
    n_links, n_paths = A.shape
    f = np.empty(n_links)
    cost = np.empty(n_links)
    blocked = np.zeros(n_links, dtype=np.bool_)
    for e in range(n_links):
        fe = -C[e] * math.expm1(-a[e] * x[e])
        f[e] = fe
        u = fe / C[e]
        if u >= 1.0:
            blocked[e] = True
            cost[e] = 0.0
            continue
        if fe > 0.0:
            T = -math.log1p(-u) / (a[e] * fe)
        else:
            T = 1.0 / (a[e] * C[e])
        w = 0.0
        if policy == 1:
            if u < _SERIES_CUTOFF:
                s = 0.0
                for k in range(_SERIES_TERMS - 1, 0, -1):
                    s = s * u + k / (k + 1)
                d = s / (a[e] * C[e] * C[e])
            else:
                d = (u / (1.0 - u) + math.log1p(-u)) / (a[e] * fe * fe)
            w = fe * d
        elif policy == 2:
            w = fixed[e]
        cost[e] = T + w

    pc = np.zeros(n_paths)
    cmin = np.inf
    for p in range(n_paths):
        c = 0.0
        for e in range(n_links):
            if A[e, p] != 0.0:
                if blocked[e]:
                    c = SENTINEL
                    break
                c += cost[e]
        pc[p] = c
        if c < SENTINEL and c < cmin:
            cmin = c
    if cmin == np.inf:
        return ALL_BLOCKED
    total = 0.0
    for p in range(n_paths):
        if pc[p] < SENTINEL:
            pc[p] = math.exp(-beta * (pc[p] - cmin))
        else:
            pc[p] = 0.0
        total += pc[p]
    for p in range(n_paths):
        dz[p] = eta * (pc[p] / total - z[p])

    fz = np.empty(n_links)
    for e in range(n_links):
        s = 0.0
        for p in range(n_paths):
            s += A[e, p] * z[p]
        fz[e] = demand * s
    for e in range(n_links):
        tot = 0.0
        inflow = exog[e]
        for j in range(n_links):
            tot += same_tail[e, j] * fz[j]
            inflow += arrivals[e, j] * f[j]
        G = fz[e] / tot if tot >= split_floor else inv_deg[e]
        dx[e] = G * inflow - f[e]
    return OK


@njit(cache=True)
def integrate(z, x, n_steps, stride, dt, ts, zs, xs, diag, C, a, policy, fixed, A, same_tail,
              inv_deg, arrivals, exog, eta, beta, demand, split_floor, guard, renorm):
    """Run ``n_steps`` RK4 steps; returns (status, step). diag = [max drift, min z, min x]."""
    P, E = z.size, x.size
    k1z, k2z, k3z, k4z = np.empty(P), np.empty(P), np.empty(P), np.empty(P)
    k1x, k2x, k3x, k4x = np.empty(E), np.empty(E), np.empty(E), np.empty(E)
    tz, tx = np.empty(P), np.empty(E)
    h = 0.5 * dt
    r = 1
    for k in range(1, n_steps + 1):
        st = _rhs(z, x, k1z, k1x, C, a, policy, fixed, A, same_tail, inv_deg, arrivals, exog,
                  eta, beta, demand, split_floor)
        if st != OK:
            return st, k
        for i in range(P):
            tz[i] = z[i] + h * k1z[i]
        for i in range(E):
            tx[i] = x[i] + h * k1x[i]
        st = _rhs(tz, tx, k2z, k2x, C, a, policy, fixed, A, same_tail, inv_deg, arrivals, exog,
                  eta, beta, demand, split_floor)
        if st != OK:
            return st, k
        for i in range(P):
            tz[i] = z[i] + h * k2z[i]
        for i in range(E):
            tx[i] = x[i] + h * k2x[i]
        st = _rhs(tz, tx, k3z, k3x, C, a, policy, fixed, A, same_tail, inv_deg, arrivals, exog,
                  eta, beta, demand, split_floor)
        if st != OK:
            return st, k
        for i in range(P):
            tz[i] = z[i] + dt * k3z[i]
        for i in range(E):
            tx[i] = x[i] + dt * k3x[i]
        st = _rhs(tz, tx, k4z, k4x, C, a, policy, fixed, A, same_tail, inv_deg, arrivals, exog,
                  eta, beta, demand, split_floor)
        if st != OK:
            return st, k
        c = dt / 6.0
        zsum, zmin, xmin = 0.0, np.inf, np.inf
        finite = True
        for i in range(P):
            z[i] = z[i] + c * (k1z[i] + 2.0 * k2z[i] + 2.0 * k3z[i] + k4z[i])
            zsum += z[i]
            zmin = min(zmin, z[i])
            finite = finite and math.isfinite(z[i])
        for i in range(E):
            x[i] = x[i] + c * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i])
            xmin = min(xmin, x[i])
            finite = finite and math.isfinite(x[i])
        if not finite:
            return NON_FINITE, k
        diag[0] = max(diag[0], abs(zsum - 1.0))
        diag[1] = min(diag[1], zmin)
        diag[2] = min(diag[2], xmin)
        if xmin < -guard or zmin < -guard:
            return LEFT_DOMAIN, k
        if xmin < 0.0:
            for i in range(E):
                x[i] = max(x[i], 0.0)
        if zmin < 0.0:
            zsum = 0.0
            for i in range(P):
                z[i] = max(z[i], 0.0)
                zsum += z[i]
        if abs(zsum - 1.0) > guard:
            return LEFT_SIMPLEX, k
        if abs(zsum - 1.0) > renorm:
            for i in range(P):
                z[i] = z[i] / zsum
        if k % stride == 0 or k == n_steps:
            ts[r] = k * dt
            zs[r, :] = z
            xs[r, :] = x
            r += 1
    return OK, n_steps


@njit(cache=True)
def lattice_argmin4(tables, A, N):
    """Exhaustive scan of the 4-path lattice sum(k) = N in lexicographic order.

    tables[e, j] is link e's objective at flow index j; A is the integer
    link-path incidence. Returns (best value, best k); ties keep the first.
    """
    n_links = tables.shape[0]
    best = np.inf
    arg = np.zeros(4, dtype=np.int64)
    for k0 in range(N + 1):
        for k1 in range(N + 1 - k0):
            for k2 in range(N + 1 - k0 - k1):
                k3 = N - k0 - k1 - k2
                v = 0.0
                for e in range(n_links):
                    v += tables[e, A[e, 0] * k0 + A[e, 1] * k1 + A[e, 2] * k2 + A[e, 3] * k3]
                if v < best:
                    best = v
                    arg[0], arg[1], arg[2], arg[3] = k0, k1, k2, k3
    return best, arg
