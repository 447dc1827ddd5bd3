import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tollnet import build_network, enumerate_paths, path_flows, two_parallel, wheatstone
from tollnet.errors import (
    CapExceeded,
    NoPath,
    NotOnSimplex,
    OriginEqualsDestination,
    SelfLoop,
    UncoveredLink,
    UnknownNode,
)

WHEATSTONE_LINKS = [("o", "a"), ("o", "b"), ("a", "b"), ("a", "d"), ("b", "d")]


def simplex_points(n):
    return st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n).filter(lambda v: sum(v) > 1e-3).map(
        lambda v: np.asarray(v) / sum(v))


def test_parallel_links_incidence():
    net = build_network(["o", "d"], [("o", "d"), ("o", "d")], "o", "d")
    assert net.n_links == 2
    np.testing.assert_array_equal(net.incidence, [[1, 1], [-1, -1]])


def test_wheatstone_incidence_columns():
    net = wheatstone().network
    B = net.incidence
    assert B.shape == (4, 5)
    assert np.all((B == 1).sum(axis=0) == 1) and np.all((B == -1).sum(axis=0) == 1)
    assert net.tail(2) == "a" and net.head(2) == "b"
    assert net.out_links("a") == [2, 3]
    assert net.in_links("d") == [3, 4]


def test_incidence_is_read_only():
    net = wheatstone().network
    with pytest.raises(ValueError):
        net.incidence[0, 0] = 5


@pytest.mark.parametrize("nodes, links, o, d, err", [
    (["o", "d"], [("o", "o")], "o", "d", SelfLoop),
    (["o", "d"], [("o", "x")], "o", "d", UnknownNode),
    (["o", "d"], [("o", "d")], "o", "z", UnknownNode),
    (["o", "d"], [("o", "d")], "o", "o", OriginEqualsDestination),
])
def test_build_network_errors(nodes, links, o, d, err):
    with pytest.raises(err):
        build_network(nodes, links, o, d)


def test_two_parallel_paths():
    paths = two_parallel().paths
    assert paths.n_paths == 2
    np.testing.assert_array_equal(paths.incidence, np.eye(2))


def test_wheatstone_paths():
    paths = wheatstone().paths
    # sorted by link-index sequence
    assert paths.paths == ((0, 2, 4), (0, 3), (1, 4))
    assert paths.labels == ["e1-e3-e5", "e1-e4", "e2-e5"]
    assert paths.index_of("e1-e4") == 1
    np.testing.assert_array_equal(paths.incidence, [[1, 1, 0], [0, 0, 1], [1, 0, 0], [0, 1, 0], [1, 0, 1]])


def test_cycle_link_is_uncovered():
    net = build_network(["o", "a", "b", "d"], WHEATSTONE_LINKS + [("d", "o")], "o", "d")
    with pytest.raises(UncoveredLink, match="e6"):
        enumerate_paths(net)


def test_cycles_are_not_traversed_twice():
    # a <-> b both ways: every link still lies on some simple path
    links = [("o", "a"), ("o", "b"), ("a", "b"), ("b", "a"), ("a", "d"), ("b", "d")]
    paths = enumerate_paths(build_network(["o", "a", "b", "d"], links, "o", "d"))
    assert paths.n_paths == 4
    for p in paths.paths:
        visited = ["o"] + [links[e][1] for e in p]
        assert len(visited) == len(set(visited))


def test_no_path():
    net = build_network(["o", "a", "d"], [("o", "a"), ("d", "a")], "o", "d")
    with pytest.raises(NoPath):
        enumerate_paths(net)


def test_path_cap():
    # 3 stages of 3 parallel links: 27 paths
    nodes = ["o", "m1", "m2", "d"]
    links = [(u, v) for u, v in zip(nodes, nodes[1:]) for _ in range(3)]
    net = build_network(nodes, links, "o", "d")
    assert enumerate_paths(net).n_paths == 27
    with pytest.raises(CapExceeded):
        enumerate_paths(net, max_paths=10)


def test_path_flows_examples():
    paths = wheatstone().paths
    z = np.zeros(3)
    z[paths.index_of("e1-e4")] = 1 / 2
    z[paths.index_of("e1-e3-e5")] = 1 / 6
    z[paths.index_of("e2-e5")] = 1 / 3
    np.testing.assert_allclose(path_flows(paths, z), [2 / 3, 1 / 3, 1 / 6, 1 / 2, 1 / 2], atol=1e-15)

    unit = np.eye(3)[paths.index_of("e1-e4")]
    np.testing.assert_array_equal(path_flows(paths, unit), [1, 0, 0, 1, 0])

    np.testing.assert_allclose(path_flows(two_parallel().paths, [0.5, 0.5], demand=2.0), [1.0, 1.0])


@pytest.mark.parametrize("z", [[0.5, 0.6, 0.0], [1.2, -0.2, 0.0], [1.0, 0.0]])
def test_path_flows_rejects_off_simplex(z):
    with pytest.raises(NotOnSimplex):
        path_flows(wheatstone().paths, z)


@settings(max_examples=100, deadline=None)
@given(simplex_points(3))
def test_node_balance_of_path_flows(z):
    net, paths = wheatstone().network, wheatstone().paths
    balance = net.incidence @ path_flows(paths, z)
    expected = np.zeros(4)
    expected[net.node_index("o")], expected[net.node_index("d")] = 1.0, -1.0
    np.testing.assert_allclose(balance, expected, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(5)))
def test_enumeration_independent_of_link_order(perm):
    links = [WHEATSTONE_LINKS[i] for i in perm]
    ids = [f"e{i + 1}" for i in perm]
    paths = enumerate_paths(build_network(["o", "a", "b", "d"], links, "o", "d", link_ids=ids))
    as_ids = {tuple(paths.network.link_ids[e] for e in p) for p in paths.paths}
    assert as_ids == {("e1", "e4"), ("e1", "e3", "e5"), ("e2", "e5")}
    assert list(paths.paths) == sorted(paths.paths)


def test_parallel_links_give_distinct_paths():
    paths = enumerate_paths(build_network(["o", "d"], [("o", "d")] * 4, "o", "d"))
    assert len(set(paths.paths)) == 4
