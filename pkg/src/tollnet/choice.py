"""Path costs, the logit perturbed best response, and node-local routing splits."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import AllPathsBlocked, ValidationError
from .links import SENTINEL, LinkArray, TollPolicy
from .network import PathSet, check_simplex

# flow vector -> point on the path simplex
ResponseMap = Callable[[np.ndarray], np.ndarray]

UNIFORM_SPLIT_THRESHOLD = 1e-15


def path_costs(paths: PathSet, links: LinkArray, policy: TollPolicy, f) -> np.ndarray:
    """Perceived cost A'(T(f) + w(f)); paths through a saturated link get SENTINEL."""
    f = np.asarray(f, dtype=float)
    link_cost = links.delay(f) + policy.values(links, f)
    blocked = link_cost >= SENTINEL
    A = paths.incidence
    costs = A.T @ np.where(blocked, 0.0, link_cost)
    if blocked.any():
        costs[(A[blocked].sum(axis=0) > 0)] = SENTINEL
    return costs


def logit_response(costs, beta: float) -> np.ndarray:
    """z_p proportional to exp(-beta c_p), with max-subtraction.

    Cost gaps beyond ~700/beta underflow to exactly zero probability, and
    SENTINEL costs always map to zero.
    """
    if not (beta > 0 and np.isfinite(beta)):
        raise ValidationError(f"beta must be positive and finite, got {beta}")
    costs = np.asarray(costs, dtype=float)
    open_ = costs < SENTINEL
    if not open_.any():
        raise AllPathsBlocked("every path crosses a saturated link")
    c = np.where(open_, costs, np.inf)
    w = np.exp(-beta * (c - c[open_].min()))
    return w / w.sum()


def logit_map(paths: PathSet, links: LinkArray, policy: TollPolicy, beta: float) -> ResponseMap:
    """The perturbed best response F(f) for the logit perturbation."""
    def response(f: np.ndarray) -> np.ndarray:
        return logit_response(path_costs(paths, links, policy, f), beta)

    return response


class SplitOperator:
    """Precomputed sparse structure for the local decision function G."""

    def __init__(self, paths: PathSet):
        net = paths.network
        tails = [net.tail(e) for e in range(net.n_links)]
        # same_tail[e, j] = 1 iff links e and j leave the same node
        self.same_tail = np.array([[1.0 if tails[j] == tails[e] else 0.0 for j in range(net.n_links)]
                                   for e in range(net.n_links)])
        self.out_degree = self.same_tail.sum(axis=1)
        self.incidence = paths.incidence

    def __call__(self, z: np.ndarray, demand: float = 1.0) -> np.ndarray:
        fz = demand * (self.incidence @ z)
        total = self.same_tail @ fz
        used = total >= UNIFORM_SPLIT_THRESHOLD * demand
        return np.where(used, fz / np.where(used, total, 1.0), 1.0 / self.out_degree)


def local_decision(paths: PathSet, z, demand: float = 1.0) -> np.ndarray:
    """Fraction G_e of traffic at node tail(e) that takes link e."""
    z = check_simplex(z, paths.n_paths)
    return SplitOperator(paths)(z, demand)
