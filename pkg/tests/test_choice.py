import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tollnet import build_network, enumerate_paths, two_parallel, wheatstone
from tollnet.choice import SplitOperator, local_decision, logit_map, logit_response, path_costs
from tollnet.errors import AllPathsBlocked, NotOnSimplex, ValidationError
from tollnet.links import SENTINEL, LinkArray, LinkParams, TollPolicy

costs_st = st.lists(st.floats(0.0, 50.0), min_size=1, max_size=6).map(np.array)


def by_label(paths, mapping):
    z = np.zeros(paths.n_paths)
    for label, v in mapping.items():
        z[paths.index_of(label)] = v
    return z


def test_path_costs_two_parallel():
    b = two_parallel()
    c = path_costs(b.paths, b.links, TollPolicy.none(), [1.0, 1.0])
    np.testing.assert_allclose(c, [math.log(2), math.log(2)], rtol=1e-15)


def test_path_costs_wheatstone_empty():
    b = wheatstone()
    c = path_costs(b.paths, b.links, TollPolicy.none(), np.zeros(5))
    expected = by_label(b.paths, {"e1-e4": 1.0, "e1-e3-e5": 1.5, "e2-e5": 1.0})
    np.testing.assert_allclose(c, expected, rtol=1e-15)


def test_saturated_link_blocks_its_paths():
    b = wheatstone()
    f = np.array([0.5, 0.5, 0.0, 2.0, 0.5])  # e4 at capacity
    c = path_costs(b.paths, b.links, TollPolicy.none(), f)
    assert c[b.paths.index_of("e1-e4")] == SENTINEL
    assert c[b.paths.index_of("e1-e3-e5")] < SENTINEL
    assert c[b.paths.index_of("e2-e5")] < SENTINEL


def test_path_costs_with_tolls():
    b = two_parallel()
    c = path_costs(b.paths, b.links, TollPolicy.marginal(), [1.0, 0.0])
    np.testing.assert_allclose(c, [math.log(2) + 1 - math.log(2), 0.5], rtol=1e-14)
    c = path_costs(b.paths, b.links, TollPolicy.fixed([0.2, 0.3]), [1.0, 0.0])
    np.testing.assert_allclose(c, [math.log(2) + 0.2, 0.8], rtol=1e-14)


def test_logit_examples():
    np.testing.assert_allclose(logit_response([1.0, 1.0, 1.0], 5.0), [1 / 3] * 3, rtol=1e-15)
    e = math.exp(-1)
    np.testing.assert_allclose(logit_response([1.0, 2.0], 1.0), [1 / (1 + e), e / (1 + e)], rtol=1e-15)
    assert logit_response([1.0, 2.0], 1.0)[0] == pytest.approx(0.731059, abs=1e-6)
    np.testing.assert_array_equal(logit_response([1.0, SENTINEL], 3.0), [1.0, 0.0])


def test_logit_errors():
    with pytest.raises(AllPathsBlocked):
        logit_response([SENTINEL, SENTINEL], 1.0)
    for beta in [0.0, -1.0, math.inf, math.nan]:
        with pytest.raises(ValidationError):
            logit_response([1.0, 2.0], beta)


def test_logit_large_gap_underflows_to_zero():
    z = logit_response([0.0, 800.0], 1.0)
    assert z[1] == 0.0 and z[0] == 1.0


@settings(max_examples=200, deadline=None)
@given(costs_st, st.floats(0.01, 20.0), st.floats(-1e3, 1e3))
def test_logit_shift_invariance(c, beta, shift):
    z = logit_response(c, beta)
    assert abs(z.sum() - 1.0) <= 1e-12 and np.all(z >= 0)
    np.testing.assert_allclose(logit_response(c + shift, beta), z, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(costs_st)
def test_logit_small_beta_is_uniform(c):
    z = logit_response(c, 1e-9)
    assert np.max(np.abs(z - 1.0 / c.size)) <= 1e-6


def test_logit_map_composes():
    b = wheatstone()
    F = logit_map(b.paths, b.links, TollPolicy.marginal(), 2.0)
    f = np.array([0.6, 0.4, 0.2, 0.4, 0.6])
    np.testing.assert_array_equal(F(f), logit_response(path_costs(b.paths, b.links, TollPolicy.marginal(), f), 2.0))


def test_local_decision_wheatstone():
    paths = wheatstone().paths
    z = by_label(paths, {"e1-e4": 1 / 2, "e1-e3-e5": 1 / 6, "e2-e5": 1 / 3})
    np.testing.assert_allclose(local_decision(paths, z), [2 / 3, 1 / 3, 1 / 4, 3 / 4, 1.0], rtol=1e-14)


def test_local_decision_uniform_fallback():
    # node m has three outgoing links and no path flow through it when z puts all mass on the bypass
    net = build_network(["o", "m", "d"], [("o", "d"), ("o", "m"), ("m", "d"), ("m", "d"), ("m", "d")], "o", "d")
    paths = enumerate_paths(net)
    z = np.eye(paths.n_paths)[paths.index_of("e1")]
    G = local_decision(paths, z)
    np.testing.assert_array_equal(G, [1.0, 0.0, 1 / 3, 1 / 3, 1 / 3])


def test_local_decision_single_out_link():
    G = local_decision(wheatstone().paths, [0.2, 0.5, 0.3])
    assert G[4] == 1.0


def test_local_decision_rejects_off_simplex():
    with pytest.raises(NotOnSimplex):
        local_decision(wheatstone().paths, [0.5, 0.5, 0.5])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda v: sum(v) > 1e-3),
       st.floats(0.1, 3.0))
def test_split_sums_to_one_at_every_node(v, demand):
    paths = wheatstone().paths
    net = paths.network
    z = np.asarray(v) / sum(v)
    G = SplitOperator(paths)(z, demand)
    for node in ("o", "a", "b"):
        assert abs(G[net.out_links(node)].sum() - 1.0) <= 1e-15


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3), st.integers(0, 2 ** 32 - 1))
def test_split_is_lipschitz_for_interior_z(v, seed):
    paths = wheatstone().paths
    z = np.asarray(v) / sum(v)
    rng = np.random.default_rng(seed)
    eps = 1e-7
    d = rng.normal(size=3)
    d -= d.mean()
    d *= eps / np.abs(d).sum()
    change = np.abs(local_decision(paths, z + d) - local_decision(paths, z)).max()
    # each node carries at least two paths, so its throughput is >= 2 * 0.05 / 3
    # and |dG| <= 2 |dz|_1 / throughput <= 60 |dz|_1
    assert change <= 60 * eps * (1 + 1e-6)


def test_generic_links_path_costs():
    b = wheatstone()
    links = LinkArray([LinkParams(2.0, 1.0, "rational")] * 5)
    c = path_costs(b.paths, links, TollPolicy.none(), np.zeros(5))
    np.testing.assert_allclose(c, by_label(b.paths, {"e1-e4": 1.0, "e1-e3-e5": 1.5, "e2-e5": 1.0}))
