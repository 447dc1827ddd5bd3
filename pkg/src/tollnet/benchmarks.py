"""Small reference networks used by the tests, the CLI and the bundled configs."""

from __future__ import annotations

from dataclasses import dataclass

from .links import LinkArray, LinkParams
from .network import Network, PathSet, build_network, enumerate_paths

# Initial condition of the bundled experiment, keyed by path label.
WHEATSTONE_Z0 = {"e1-e4": 1 / 2, "e1-e3-e5": 1 / 6, "e2-e5": 1 / 3}
WHEATSTONE_X0 = (4.0, 2.0, 3.0, 1.0, 5.0)


@dataclass(frozen=True)
class Benchmark:
    name: str
    network: Network
    paths: PathSet
    links: LinkArray


def _make(name, nodes, links, params, origin="o", destination="d") -> Benchmark:
    net = build_network(nodes, links, origin, destination)
    return Benchmark(name, net, enumerate_paths(net), LinkArray(params))


def wheatstone(capacity: float = 2.0, alpha: float = 1.0) -> Benchmark:
    """o->a, o->b, a->b, a->d, b->d with identical links f = C(1 - exp(-alpha x))."""
    return _make(
        "wheatstone",
        ["o", "a", "b", "d"],
        [("o", "a"), ("o", "b"), ("a", "b"), ("a", "d"), ("b", "d")],
        [LinkParams(capacity, alpha)] * 5,
    )


def two_parallel(capacity: float = 2.0, alpha: float = 1.0) -> Benchmark:
    return _make("two_parallel", ["o", "d"], [("o", "d")] * 2, [LinkParams(capacity, alpha)] * 2)


def three_parallel() -> Benchmark:
    """Three heterogeneous parallel links, so the optimum is not symmetric."""
    params = [LinkParams(2.0, 1.0), LinkParams(3.0, 0.6), LinkParams(2.5, 0.9)]
    return _make("three_parallel", ["o", "d"], [("o", "d")] * 3, params)


def single_path() -> Benchmark:
    return _make("single_path", ["o", "m", "d"], [("o", "m"), ("m", "d")], [LinkParams(2.0, 1.0)] * 2)


def wheatstone_z0(paths: PathSet) -> list[float]:
    return [WHEATSTONE_Z0[label] for label in paths.labels]


def skewed_wheatstone() -> Benchmark:
    """Wheatstone topology with heterogeneous links; the stale fixed toll is strictly suboptimal off-nominal."""
    params = [LinkParams(2.0, 1.0), LinkParams(3.0, 0.6), LinkParams(2.5, 0.9), LinkParams(3.0, 0.5),
              LinkParams(2.0, 1.2)]
    return _make("skewed_wheatstone", ["o", "a", "b", "d"],
                 [("o", "a"), ("o", "b"), ("a", "b"), ("a", "d"), ("b", "d")], params)


def two_stage() -> Benchmark:
    """Two parallel pairs in series, o->m->d: four paths sharing links."""
    params = [LinkParams(2.0, 1.0), LinkParams(2.5, 0.7), LinkParams(3.0, 0.8), LinkParams(2.0, 1.5)]
    return _make("two_stage", ["o", "m", "d"], [("o", "m"), ("o", "m"), ("m", "d"), ("m", "d")], params)
