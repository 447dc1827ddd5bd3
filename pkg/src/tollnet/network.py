"""Directed multigraph with a single origin/destination pair, and its o-d paths."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import (
    CapExceeded,
    NoPath,
    NotOnSimplex,
    OriginEqualsDestination,
    SelfLoop,
    UncoveredLink,
    UnknownNode,
    ValidationError,
)

DEFAULT_PATH_CAP = 10_000
SIMPLEX_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """Validated multigraph. Parallel links allowed, self-loops are not.

    ``incidence`` is the node-link matrix B with B[i, e] = +1 at the tail
    of e and -1 at its head.
    """

    nodes: tuple
    links: tuple  # (tail, head) per link index
    origin: Hashable
    destination: Hashable
    link_ids: tuple
    incidence: np.ndarray = field(repr=False)

    @property
    def n_links(self) -> int:
        return len(self.links)

    def node_index(self, node) -> int:
        return self.nodes.index(node)

    def tail(self, e: int):
        return self.links[e][0]

    def head(self, e: int):
        return self.links[e][1]

    def out_links(self, node) -> list[int]:
        return [e for e, (t, _) in enumerate(self.links) if t == node]

    def in_links(self, node) -> list[int]:
        return [e for e, (_, h) in enumerate(self.links) if h == node]


def build_network(
    nodes: Sequence,
    links: Sequence[tuple],
    origin,
    destination,
    link_ids: Sequence[str] | None = None,
) -> Network:
    nodes = tuple(nodes)
    if len(set(nodes)) != len(nodes):
        raise UnknownNode(f"duplicate node identifiers in {nodes!r}")
    known = set(nodes)
    for node in (origin, destination):
        if node not in known:
            raise UnknownNode(f"node {node!r} is not declared")
    if origin == destination:
        raise OriginEqualsDestination(f"origin and destination are both {origin!r}")

    links = tuple((t, h) for t, h in links)
    if link_ids is None:
        link_ids = tuple(f"e{k + 1}" for k in range(len(links)))
    else:
        link_ids = tuple(str(i) for i in link_ids)
        if len(link_ids) != len(links) or len(set(link_ids)) != len(link_ids):
            raise UnknownNode("link ids must be unique and match the number of links")

    B = np.zeros((len(nodes), len(links)), dtype=np.int8)
    for e, (t, h) in enumerate(links):
        for node in (t, h):
            if node not in known:
                raise UnknownNode(f"link {link_ids[e]} references undeclared node {node!r}")
        if t == h:
            raise SelfLoop(f"link {link_ids[e]} is a self-loop at node {t!r}")
        B[nodes.index(t), e] = 1
        B[nodes.index(h), e] = -1

    return Network(nodes, links, origin, destination, link_ids, _frozen(B))


@dataclass(frozen=True, eq=False)
class PathSet:
    """Simple o-d paths (tuples of link indices) and the link-path matrix A."""

    network: Network
    paths: tuple
    incidence: np.ndarray = field(repr=False)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def label(self, p: int) -> str:
        return "-".join(self.network.link_ids[e] for e in self.paths[p])

    @property
    def labels(self) -> list[str]:
        return [self.label(p) for p in range(self.n_paths)]

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no path {label!r}; known paths: {self.labels}") from None


def enumerate_paths(network: Network, max_paths: int = DEFAULT_PATH_CAP) -> PathSet:
    """All simple o-d paths, sorted lexicographically by link-index sequence.

    Cycles in the graph are fine; no node is visited twice within a path.
    Raises :class:`UncoveredLink` if some link is on no o-d path.
    """
    out = {node: [] for node in network.nodes}
    for e, (t, _) in enumerate(network.links):
        out[t].append(e)

    found: list[tuple[int, ...]] = []
    dest = network.destination
    # iterative DFS; stack holds (node, path-so-far, visited nodes)
    stack = [(network.origin, (), frozenset([network.origin]))]
    while stack:
        node, path, seen = stack.pop()
        for e in reversed(out[node]):
            h = network.links[e][1]
            if h in seen:
                continue
            if h == dest:
                found.append(path + (e,))
                if len(found) > max_paths:
                    raise CapExceeded(f"more than {max_paths} o-d paths")
            else:
                stack.append((h, path + (e,), seen | {h}))

    if not found:
        raise NoPath(f"no path from {network.origin!r} to {dest!r}")
    found.sort()

    A = np.zeros((network.n_links, len(found)))
    for p, path in enumerate(found):
        A[list(path), p] = 1.0
    uncovered = np.flatnonzero(A.sum(axis=1) == 0)
    if uncovered.size:
        names = [network.link_ids[e] for e in uncovered]
        raise UncoveredLink(f"links {names} lie on no simple o-d path")
    return PathSet(network, tuple(found), _frozen(A))


def check_simplex(z, n: int | None = None, tol: float = SIMPLEX_TOL) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or (n is not None and z.size != n):
        raise NotOnSimplex(f"expected a vector of length {n}, got shape {z.shape}")
    if not np.all(np.isfinite(z)) or np.any(z < 0) or abs(z.sum() - 1.0) > tol:
        raise NotOnSimplex(f"{z!r} is not a probability vector")
    return z


def path_flows(paths: PathSet, z, demand: float = 1.0) -> np.ndarray:
    """Link flows ``demand * A @ z`` induced by the path preference z."""
    if not demand > 0:
        raise ValidationError(f"demand must be positive, got {demand}")
    z = check_simplex(z, paths.n_paths)
    return demand * (paths.incidence @ z)
