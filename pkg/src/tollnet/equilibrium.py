"""Static equilibria over the path simplex.

* :func:`social_optimum` minimizes total latency sum_e mu_e^-1(f_e).
* :func:`wardrop` minimizes the Beckmann potential sum_e int_0^f (T_e + w_e).
* :func:`perturbed_equilibrium` finds the logit fixed point, checked against
  mirror descent on the entropy-regularized potential.
* :func:`grid_oracle` brute-forces either objective on a simplex lattice and
  is the independent reference for the two Frank-Wolfe solvers.

Both Frank-Wolfe solvers work on path shares z with link flows f = demand * A z.
They use pairwise steps (mass moves from the costliest used path to the
cheapest one) so the rate stays linear when the optimum sits on a face.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import xlogy

from .choice import logit_response, path_costs
from .errors import CapacityExceeded, CapacityTooSmall, FixedPointNotConverged, TooManyPaths, ValidationError
from .links import LinkArray, TollPolicy, adaptive_simpson, delay, delay_derivative, perceived_cost_integral, toll
from .network import PathSet, check_simplex

log = logging.getLogger(__name__)

FW_TOL = 1e-9
FW_MAX_ITER = 100_000
LINE_SEARCH_TOL = 1e-12
USED_PATH = 1e-9
WARDROP_TOL = 1e-6

FP_DAMPING = 0.5
FP_TOL = 1e-12
FP_MAX_ITER = 1_000_000
FP_STALL = 5_000  # iterations without a new best residual before giving up
MD_TOL = 1e-13
MD_MAX_ITER = 100_000
AGREEMENT_TOL = 1e-8

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


@dataclass
class EquilibriumResult:
    f: np.ndarray
    z: np.ndarray
    objective: float
    wardrop_gap: float
    iterations: int
    converged: bool
    kind: str = ""
    demand: float = 1.0
    details: dict = field(default_factory=dict)

    def to_dict(self, paths: PathSet | None = None) -> dict:
        out = {
            "kind": self.kind,
            "demand": self.demand,
            "flows": [float(v) for v in self.f],
            "path_distribution": [float(v) for v in self.z],
            "objective": float(self.objective),
            "wardrop_gap": float(self.wardrop_gap),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "details": self.details,
        }
        if paths is not None:
            out["links"] = list(paths.network.link_ids)
            out["paths"] = paths.labels
        return out


@dataclass
class LatencyReport:
    total_latency: float
    contributions: np.ndarray


def _check_capacity(links: LinkArray, demand: float) -> None:
    if not demand > 0:
        raise ValidationError(f"demand must be positive, got {demand}")
    short = np.flatnonzero(links.capacity <= demand)
    if short.size:
        raise CapacityTooSmall(f"links {short.tolist()} have capacity <= demand {demand}")


def _used_gap(costs: np.ndarray, z: np.ndarray) -> float:
    used = z > USED_PATH
    return float(max(0.0, costs[used].max() - costs.min()))


def wardrop_gap(paths: PathSet, links: LinkArray, policy: TollPolicy, f, z) -> float:
    """max over used paths of (cost - cheapest path cost); 0 certifies Wardrop."""
    z = check_simplex(z, paths.n_paths)
    return _used_gap(path_costs(paths, links, policy, np.asarray(f, float)), z)


def _bisect_line(dphi: Callable[[float], float], tmax: float) -> float:
    if dphi(tmax) <= 0.0:
        return tmax
    lo, hi = 0.0, tmax
    while hi - lo > LINE_SEARCH_TOL:
        mid = 0.5 * (lo + hi)
        if dphi(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _pairwise_frank_wolfe(paths: PathSet, link_cost: Callable[[np.ndarray], np.ndarray], demand: float,
                          tol: float = FW_TOL, max_iter: int = FW_MAX_ITER):
    """Minimize a separable convex potential with gradient ``link_cost`` over the path simplex.

    Returns (z, iterations, final Frank-Wolfe duality gap).
    """
    A = paths.incidence
    z = np.zeros(paths.n_paths)
    z[int(np.argmin(A.T @ link_cost(np.zeros(A.shape[0]))))] = 1.0
    gap = math.inf
    for it in range(1, max_iter + 1):
        f = demand * (A @ z)
        g = demand * (A.T @ link_cost(f))
        s = int(np.argmin(g))
        gap = float(g @ z - g[s])
        if gap <= tol:
            return z, it, gap
        active = np.flatnonzero(z > 0)
        v = int(active[np.argmax(g[active])])
        if v == s:
            return z, it, gap
        df = demand * (A[:, s] - A[:, v])
        tmax = z[v]
        t = _bisect_line(lambda t: float(df @ link_cost(f + t * df)), tmax)
        z[s] += t
        if t >= tmax:
            z[v] = 0.0
        else:
            z[v] -= t
    return z, max_iter, gap


def social_optimum(paths: PathSet, links: LinkArray, demand: float = 1.0) -> EquilibriumResult:
    """Flow minimizing total latency sum_e f_e T_e(f_e) = sum_e mu_e^-1(f_e)."""
    _check_capacity(links, demand)
    z, it, gap = _pairwise_frank_wolfe(paths, links.marginal_latency, demand)
    f = demand * (paths.incidence @ z)
    marginal = paths.incidence.T @ links.marginal_latency(f)
    result = EquilibriumResult(
        f=f, z=z, objective=float(links.inverse_sum_terms(f).sum()), wardrop_gap=_used_gap(marginal, z),
        iterations=it, converged=gap <= FW_TOL, kind="social_optimum", demand=demand,
        details={"fw_gap": gap, "certificate_costs": "marginal latency"},
    )
    if not result.converged:
        log.warning("social optimum did not converge: FW gap %.3g after %d iterations", gap, it)
    return result


def beckmann_potential(links: LinkArray, policy: TollPolicy, f) -> float:
    return math.fsum(perceived_cost_integral(p, policy, float(v), link=e)
                     for e, (p, v) in enumerate(zip(links.params, f)))


def wardrop(paths: PathSet, links: LinkArray, policy: TollPolicy, demand: float = 1.0) -> EquilibriumResult:
    """Wardrop equilibrium under ``policy`` via Frank-Wolfe on the Beckmann potential."""
    _check_capacity(links, demand)
    policy.check_size(len(links))

    def link_cost(f):
        return links.delay(f) + policy.values(links, f)

    z, it, gap = _pairwise_frank_wolfe(paths, link_cost, demand)
    f = demand * (paths.incidence @ z)
    wg = wardrop_gap(paths, links, policy, f, z)
    result = EquilibriumResult(
        f=f, z=z, objective=beckmann_potential(links, policy, f), wardrop_gap=wg,
        iterations=it, converged=gap <= FW_TOL and wg <= WARDROP_TOL, kind=f"wardrop[{policy.kind}]",
        demand=demand, details={"fw_gap": gap},
    )
    if not result.converged:
        log.warning("wardrop[%s] did not converge: FW gap %.3g, wardrop gap %.3g", policy.kind, gap, wg)
    return result


def _logit_fixed_point(response, n: int, damping: float = FP_DAMPING):
    z = np.full(n, 1.0 / n)
    best, since_best = math.inf, 0
    for it in range(1, FP_MAX_ITER + 1):
        z_new = (1.0 - damping) * z + damping * response(z)
        res = float(np.abs(z_new - z).sum())
        z = z_new
        if res <= FP_TOL:
            return z, it, True
        if res < best:
            best, since_best = res, 0
        else:
            since_best += 1
            if since_best > FP_STALL:
                return z, it, False
    return z, FP_MAX_ITER, False


def _interval_integral(links: LinkArray, policy: TollPolicy, a: np.ndarray, b: np.ndarray) -> float:
    """sum_e int_{a_e}^{b_e} (T_e + w_e) by Gauss-Legendre; exact enough for short steps."""
    half, mid = 0.5 * (b - a), 0.5 * (b + a)
    total = 0.0
    for x, w in zip(_GL_NODES, _GL_WEIGHTS):
        s = mid + half * x
        total += w * float(half @ (links.delay(s) + policy.values(links, s)))
    return total


def _entropic_mirror_descent(paths: PathSet, links: LinkArray, policy: TollPolicy, beta: float, demand: float):
    """Minimize (1/demand) sum_e D_e(demand (Az)_e) + (1/beta) sum_p z_p ln z_p.

    Steps are multiplicative, z+ ~ z^(1-k) exp(-k beta c), with k chosen by
    backtracking on the relative-smoothness descent condition. A step size
    that once failed the condition is never retried: near the solution the
    condition compares round-off-sized quantities and cannot be trusted.
    """
    A = paths.incidence
    n = paths.n_paths
    logz = np.full(n, -math.log(n))
    z = np.full(n, 1.0 / n)
    kappa = cap = 1.0
    for it in range(1, MD_MAX_ITER + 1):
        f = demand * (A @ z)
        c = path_costs(paths, links, policy, f)
        grad = c + (1.0 + logz) / beta
        while True:
            cand = (1.0 - kappa) * logz - kappa * beta * c
            cand -= cand.max()
            cand -= math.log(np.exp(cand).sum())
            z_new = np.exp(cand)
            f_new = demand * (A @ z_new)
            d_phi = (_interval_integral(links, policy, f, f_new) / demand
                     + float(xlogy(z_new, z_new).sum() - xlogy(z, z).sum()) / beta)
            step = kappa * beta
            kl = float(np.sum(z_new * (cand - logz)))
            bound = float(grad @ (z_new - z)) + kl / step
            if d_phi <= bound + 1e-15 * (1.0 + abs(bound)) or kappa < 1e-12:
                break
            kappa *= 0.5
            cap = kappa
        delta = float(np.abs(z_new - z).sum())
        logz, z = cand, z_new
        if delta <= MD_TOL:
            return z, it, True
        kappa = min(cap, 2.0 * kappa)
    return z, MD_MAX_ITER, False


def perturbed_equilibrium(paths: PathSet, links: LinkArray, policy: TollPolicy, beta: float,
                          demand: float = 1.0) -> EquilibriumResult:
    """Logit equilibrium z = F(demand A z), solved two independent ways.

    The damped fixed-point iteration (damping 0.5) is primary; the entropic
    mirror descent result must agree with it to 1e-8 when both converge.
    """
    _check_capacity(links, demand)
    policy.check_size(len(links))
    if not (beta > 0 and math.isfinite(beta)):
        raise ValidationError(f"beta must be positive and finite, got {beta}")
    A = paths.incidence

    def response(z):
        return logit_response(path_costs(paths, links, policy, demand * (A @ z)), beta)

    z_fp, it_fp, ok_fp = _logit_fixed_point(response, paths.n_paths)
    z_md, it_md, ok_md = _entropic_mirror_descent(paths, links, policy, beta, demand)
    if not (ok_fp or ok_md):
        raise FixedPointNotConverged(f"logit equilibrium not found at beta={beta} by either method")

    details = {"fixed_point_converged": ok_fp, "fixed_point_iterations": it_fp,
               "mirror_descent_converged": ok_md, "mirror_descent_iterations": it_md}
    if ok_fp and ok_md:
        disagreement = float(np.abs(z_fp - z_md).sum())
        details["method_disagreement_l1"] = disagreement
        if disagreement > AGREEMENT_TOL:
            details["multiplicity_suspected"] = True
            log.warning("fixed point and mirror descent disagree by %.3g at beta=%g", disagreement, beta)
    z = z_fp if ok_fp else z_md
    f = demand * (A @ z)
    objective = beckmann_potential(links, policy, f) / demand + float(xlogy(z, z).sum()) / beta
    return EquilibriumResult(
        f=f, z=z, objective=objective, wardrop_gap=wardrop_gap(paths, links, policy, f, z),
        iterations=it_fp if ok_fp else it_md, converged=True, kind=f"perturbed[{policy.kind}]",
        demand=demand, details=details | {"beta": beta, "method": "fixed_point" if ok_fp else "mirror_descent"},
    )


def fixed_marginal_tolls(paths: PathSet, links: LinkArray, nominal_demand: float = 1.0) -> TollPolicy:
    """Constant tolls w*_e = f*_e T'_e(f*_e) frozen at the nominal social optimum."""
    opt = social_optimum(paths, links, nominal_demand)
    return TollPolicy.fixed([fe * delay_derivative(p, fe) for p, fe in zip(links.params, opt.f)])


def total_latency(links: LinkArray, f) -> LatencyReport:
    f = np.asarray(f, dtype=float)
    if np.any(f >= links.capacity):
        raise CapacityExceeded(f"flows {f} reach capacity {links.capacity}")
    contrib = np.array([fe * delay(p, fe) if fe > 0 else 0.0 for p, fe in zip(links.params, f)])
    return LatencyReport(math.fsum(contrib), contrib)


@dataclass
class OracleResult:
    f: np.ndarray
    z: np.ndarray
    objective: float


def _lattice(n_paths: int, total: int):
    """All nonnegative integer vectors of length n_paths summing to total, in lexicographic order."""
    if n_paths == 1:
        return np.array([[total]])
    if n_paths == 2:
        k = np.arange(total + 1)
        return np.stack([k, total - k], axis=1)
    if n_paths == 3:
        k1, k2 = np.triu_indices(total + 1)
        # k1 <= k2; map to (k1, k2 - k1, total - k2)
        out = np.stack([k1, k2 - k1, total - k2], axis=1)
        return out[np.lexsort(out.T[::-1])]
    raise TooManyPaths(n_paths)


def _objective_tables(paths: PathSet, links: LinkArray, objective, demand: float, N: int) -> np.ndarray:
    grid = demand * np.arange(N + 1) / N
    tables = np.empty((len(links), N + 1))
    for e, p in enumerate(links.params):
        if objective == "social":
            tables[e] = [p.mu_inverse(v) for v in grid]
        else:
            pieces = [adaptive_simpson(lambda s: delay(p, s) + toll(objective, p, s, e), a, b, tol=1e-13)
                      for a, b in zip(grid[:-1], grid[1:])]
            tables[e] = np.concatenate(([0.0], np.cumsum(pieces)))
    return tables


def grid_oracle(paths: PathSet, links: LinkArray, objective="social", demand: float = 1.0,
                resolution: float = 1e-3) -> OracleResult:
    """Brute-force minimizer of the social (``"social"``) or Beckmann (a TollPolicy) objective.

    Evaluates every lattice point z = k/N, N = round(1/resolution), on the
    path simplex. Ties go to the first point in lexicographic order.
    """
    if paths.n_paths > 4:
        raise TooManyPaths(f"grid oracle handles at most 4 paths, got {paths.n_paths}")
    if not resolution > 0:
        raise ValidationError(f"resolution must be positive, got {resolution}")
    _check_capacity(links, demand)
    if objective != "social":
        if not isinstance(objective, TollPolicy):
            raise ValidationError(f"objective must be 'social' or a TollPolicy, got {objective!r}")
        objective.check_size(len(links))
    N = int(round(1.0 / resolution))
    tables = _objective_tables(paths, links, objective, demand, N)
    A = paths.incidence.astype(np.int64)
    rows = np.arange(len(links))[:, None]

    def best_of(K):
        J = A @ K.T  # link flow indices, links x points
        vals = tables[rows, J].sum(axis=0)
        i = int(np.argmin(vals))
        return float(vals[i]), K[i]

    if paths.n_paths <= 3:
        val, k = best_of(_lattice(paths.n_paths, N))
    else:
        from ._kernels import lattice_argmin4

        val, k = lattice_argmin4(np.ascontiguousarray(tables), np.ascontiguousarray(A), N)
    z = k / N
    return OracleResult(demand * (paths.incidence @ z), z, val)
