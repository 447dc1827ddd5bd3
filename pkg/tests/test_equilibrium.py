import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tollnet import (
    build_network,
    enumerate_paths,
    fixed_marginal_tolls,
    grid_oracle,
    perturbed_equilibrium,
    single_path,
    skewed_wheatstone,
    social_optimum,
    three_parallel,
    total_latency,
    two_parallel,
    two_stage,
    wardrop,
    wardrop_gap,
    wheatstone,
)
from tollnet.choice import logit_response, path_costs
from tollnet.equilibrium import beckmann_potential
from tollnet.errors import CapacityExceeded, CapacityTooSmall, TooManyPaths, ValidationError
from tollnet.links import LinkArray, LinkParams, TollPolicy, delay_derivative

BENCHMARKS = [two_parallel, three_parallel, wheatstone, skewed_wheatstone, two_stage]

# Lattice minimizers (link flows) from grid_oracle at resolution 1e-3, frozen.
ORACLE_SOCIAL = {
    "two_parallel": [0.5, 0.5],
    "three_parallel": [0.279, 0.133, 0.588],
    "wheatstone": [0.5, 0.5, 0.0, 0.5, 0.5],
    "skewed_wheatstone": [0.326, 0.674, 0.0, 0.326, 0.674],
    "two_stage": [0.559, 0.441, 0.391, 0.609],
}
ORACLE_UNTOLLED = {
    "two_parallel": [0.5, 0.5],
    "three_parallel": [0.23, 0.0, 0.77],
    "wheatstone": [0.5, 0.5, 0.0, 0.5, 0.5],
    "skewed_wheatstone": [0.137, 0.863, 0.0, 0.137, 0.863],
    "two_stage": [0.681, 0.319, 0.177, 0.823],
}
# Logit equilibrium on the Wheatstone benchmark, beta = 1, marginal tolls:
# scipy SLSQP on the entropy-regularized potential (quad integrals), frozen.
SLSQP_WHEATSTONE_BETA1 = [0.6034848725, 0.3965151275, 0.2069697455, 0.3965151270, 0.6034848730]


def simplex(n):
    return st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n).filter(lambda v: sum(v) > 1e-3).map(
        lambda v: np.asarray(v) / sum(v))


def latency(links, f):
    return total_latency(links, f).total_latency


def test_social_optimum_examples():
    b = two_parallel()
    np.testing.assert_allclose(social_optimum(b.paths, b.links).f, [0.5, 0.5], atol=1e-9)
    s = single_path()
    np.testing.assert_allclose(social_optimum(s.paths, s.links, demand=1.3).f, [1.3, 1.3], atol=1e-15)


@pytest.mark.parametrize("bench", BENCHMARKS)
def test_social_optimum_matches_oracle(bench):
    b = bench()
    res = social_optimum(b.paths, b.links)
    assert res.converged and res.wardrop_gap <= 1e-6
    assert np.abs(res.f - ORACLE_SOCIAL[b.name]).sum() <= 2e-3


@pytest.mark.parametrize("bench", BENCHMARKS)
def test_untolled_wardrop_matches_oracle(bench):
    b = bench()
    res = wardrop(b.paths, b.links, TollPolicy.none())
    assert res.converged and res.wardrop_gap <= 1e-6
    assert np.abs(res.f - ORACLE_UNTOLLED[b.name]).sum() <= 2e-3


@pytest.mark.parametrize("bench", BENCHMARKS)
def test_result_invariants_and_flow_conservation(bench):
    b = bench()
    net = b.network
    for res in (social_optimum(b.paths, b.links, 1.2), wardrop(b.paths, b.links, TollPolicy.marginal(), 1.2)):
        np.testing.assert_allclose(res.f, 1.2 * b.paths.incidence @ res.z, atol=1e-15)
        assert np.all(res.f < b.links.capacity) and res.wardrop_gap >= 0
        rhs = np.zeros(len(net.nodes))
        rhs[net.node_index(net.origin)], rhs[net.node_index(net.destination)] = 1.2, -1.2
        np.testing.assert_allclose(net.incidence @ res.f, rhs, atol=1e-12)


def test_capacity_too_small():
    b = wheatstone(capacity=0.9)
    for solve in (lambda: social_optimum(b.paths, b.links),
                  lambda: wardrop(b.paths, b.links, TollPolicy.none()),
                  lambda: perturbed_equilibrium(b.paths, b.links, TollPolicy.none(), 1.0)):
        with pytest.raises(CapacityTooSmall):
            solve()


def test_wardrop_examples():
    b = two_parallel()
    res = wardrop(b.paths, b.links, TollPolicy.none())
    np.testing.assert_allclose(res.f, [0.5, 0.5], atol=1e-9)
    assert res.wardrop_gap <= 1e-9


@pytest.mark.parametrize("bench", BENCHMARKS)
def test_marginal_tolls_recover_social_optimum(bench):
    b = bench()
    opt = social_optimum(b.paths, b.links)
    eq = wardrop(b.paths, b.links, TollPolicy.marginal())
    assert np.abs(eq.f - opt.f).max() <= 1e-6
    assert latency(b.links, eq.f) == pytest.approx(latency(b.links, opt.f), abs=1e-10)


@pytest.mark.parametrize("bench", BENCHMARKS)
def test_fixed_tolls_at_nominal_demand_recover_optimum(bench):
    b = bench()
    fixed = fixed_marginal_tolls(b.paths, b.links, 1.0)
    eq = wardrop(b.paths, b.links, fixed, 1.0)
    assert np.abs(eq.f - social_optimum(b.paths, b.links).f).max() <= 1e-6


def test_fixed_marginal_tolls_examples():
    b = two_parallel()
    w = fixed_marginal_tolls(b.paths, b.links).constants
    expected = 0.5 * delay_derivative(LinkParams(2.0, 1.0), 0.5)
    # closed form: T'(1/2) = 4 (1/3 + ln(3/4)) for C = 2, alpha = 1
    assert expected == pytest.approx(2 * (1 / 3 + math.log(0.75)), rel=1e-13)
    np.testing.assert_allclose(w, [expected, expected], rtol=1e-8)
    w_wh = fixed_marginal_tolls(wheatstone().paths, wheatstone().links).constants
    assert w_wh[2] == 0.0  # the bridge carries no optimal flow
    assert fixed_marginal_tolls(b.paths, b.links).constants == w


@pytest.mark.parametrize("demand", [0.5, 0.8, 1.2, 1.5])
@pytest.mark.parametrize("bench", BENCHMARKS)
def test_demand_robustness(bench, demand):
    b = bench()
    stale = fixed_marginal_tolls(b.paths, b.links, 1.0)
    l_star = latency(b.links, social_optimum(b.paths, b.links, demand).f)
    assert latency(b.links, wardrop(b.paths, b.links, TollPolicy.marginal(), demand).f) == pytest.approx(l_star, abs=1e-6)
    assert latency(b.links, wardrop(b.paths, b.links, stale, demand).f) >= l_star - 1e-9


def test_stale_tolls_are_suboptimal_off_nominal_on_heterogeneous_bridge():
    b = skewed_wheatstone()
    stale = fixed_marginal_tolls(b.paths, b.links, 1.0)
    excess = [latency(b.links, wardrop(b.paths, b.links, stale, lam).f)
              - latency(b.links, social_optimum(b.paths, b.links, lam).f) for lam in (0.5, 0.8, 1.2, 1.5)]
    assert max(excess) > 1e-4


def test_perturbed_equilibrium_examples():
    b = wheatstone()
    flat = perturbed_equilibrium(b.paths, b.links, TollPolicy.none(), 1e-9)
    np.testing.assert_allclose(flat.z, [1 / 3] * 3, atol=1e-8)
    np.testing.assert_allclose(flat.f, b.paths.incidence @ np.full(3, 1 / 3), atol=1e-8)

    sharp = perturbed_equilibrium(b.paths, b.links, TollPolicy.marginal(), 12.0)
    assert np.abs(sharp.f - social_optimum(b.paths, b.links).f).sum() <= 0.05

    p = two_parallel()
    for beta in (0.1, 1.0, 30.0):
        np.testing.assert_allclose(perturbed_equilibrium(p.paths, p.links, TollPolicy.none(), beta).f, [0.5, 0.5],
                                   atol=1e-12)


def test_perturbed_equilibrium_matches_independent_minimizer():
    b = wheatstone()
    res = perturbed_equilibrium(b.paths, b.links, TollPolicy.marginal(), 1.0)
    np.testing.assert_allclose(res.f, SLSQP_WHEATSTONE_BETA1, atol=1e-8)


@pytest.mark.parametrize("bench", BENCHMARKS)
@pytest.mark.parametrize("beta", [1e-9, 0.5, 1.0, 5.0, 12.0, 40.0, 100.0])
def test_perturbed_solvers_agree(bench, beta):
    b = bench()
    for policy in (TollPolicy.none(), TollPolicy.marginal()):
        res = perturbed_equilibrium(b.paths, b.links, policy, beta)
        d = res.details
        assert d["mirror_descent_converged"]
        if d["fixed_point_converged"]:
            assert d["method_disagreement_l1"] <= 1e-8
        assert "multiplicity_suspected" not in d
        costs = path_costs(b.paths, b.links, policy, res.f)
        np.testing.assert_allclose(logit_response(costs, beta), res.z, atol=1e-11)


@pytest.mark.parametrize("beta", range(1, 13))
def test_both_perturbed_solvers_converge_on_benchmark(beta):
    b = wheatstone()
    for policy in (TollPolicy.marginal(), fixed_marginal_tolls(b.paths, b.links)):
        d = perturbed_equilibrium(b.paths, b.links, policy, float(beta)).details
        assert d["fixed_point_converged"] and d["mirror_descent_converged"]
        assert d["method_disagreement_l1"] <= 1e-8


def test_perturbed_equilibrium_flows_tend_to_optimum_with_beta():
    b = wheatstone()
    opt = social_optimum(b.paths, b.links).f
    d = [np.abs(perturbed_equilibrium(b.paths, b.links, TollPolicy.marginal(), beta).f - opt).sum()
         for beta in range(1, 13)]
    assert all(y <= x for x, y in zip(d, d[1:]))


def test_perturbed_equilibrium_rejects_bad_beta():
    b = wheatstone()
    for beta in (0.0, -1.0, math.inf):
        with pytest.raises(ValidationError):
            perturbed_equilibrium(b.paths, b.links, TollPolicy.none(), beta)


def test_wardrop_gap_examples():
    b = wheatstone()
    z = np.eye(3)[b.paths.index_of("e1-e4")]
    f = b.paths.incidence @ z
    assert wardrop_gap(b.paths, b.links, TollPolicy.none(), f, z) > 0.01
    s = single_path()
    assert wardrop_gap(s.paths, s.links, TollPolicy.none(), [1.0, 1.0], [1.0]) == 0.0


def test_total_latency_examples():
    b = two_parallel()
    assert latency(b.links, [0.0, 0.0]) == 0.0
    rep = total_latency(b.links, [1.0, 1.0])
    assert rep.total_latency == pytest.approx(2 * math.log(2), abs=1e-15)
    assert rep.total_latency == pytest.approx(1.386294, abs=1e-6)
    np.testing.assert_allclose(rep.contributions, [math.log(2)] * 2)
    with pytest.raises(CapacityExceeded):
        total_latency(b.links, [2.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 0.99), min_size=3, max_size=3))
def test_total_latency_is_sum_of_inverses(fracs):
    links = three_parallel().links
    f = np.asarray(fracs) * links.capacity
    rep = total_latency(links, f)
    assert rep.total_latency == pytest.approx(sum(p.mu_inverse(v) for p, v in zip(links.params, f)), abs=1e-10)
    assert np.all(rep.contributions >= 0)
    assert rep.total_latency == math.fsum(rep.contributions)


@settings(max_examples=60, deadline=None)
@given(simplex(3), simplex(3), st.floats(0.01, 0.99))
def test_objectives_are_convex_in_z(z1, z2, t):
    b = wheatstone()
    A = b.paths.incidence

    def social(z):
        return latency(b.links, A @ z)

    def beckmann(z):
        return beckmann_potential(b.links, TollPolicy.none(), A @ z)

    for obj in (social, beckmann):
        assert obj(t * z1 + (1 - t) * z2) <= t * obj(z1) + (1 - t) * obj(z2) + 1e-10


def test_beckmann_potential_with_marginal_tolls_is_total_latency():
    b = wheatstone()
    f = np.array([0.7, 0.3, 0.2, 0.5, 0.5])
    assert beckmann_potential(b.links, TollPolicy.marginal(), f) == pytest.approx(latency(b.links, f), abs=1e-8)


def test_grid_oracle_examples():
    b = two_parallel()
    r = grid_oracle(b.paths, b.links, "social", resolution=1e-3)
    np.testing.assert_allclose(r.f, [0.5, 0.5], atol=1e-3)
    w = wheatstone()
    coarse = grid_oracle(w.paths, w.links, "social", resolution=1e-2)
    fine = grid_oracle(w.paths, w.links, "social", resolution=1e-3)
    assert fine.objective <= coarse.objective
    t3 = three_parallel()
    assert (grid_oracle(t3.paths, t3.links, "social", resolution=1e-3).objective
            <= grid_oracle(t3.paths, t3.links, "social", resolution=1e-2).objective)


def test_grid_oracle_errors():
    net = build_network(["o", "d"], [("o", "d")] * 5, "o", "d")
    paths = enumerate_paths(net)
    links = LinkArray([LinkParams(2.0, 1.0)] * 5)
    with pytest.raises(TooManyPaths):
        grid_oracle(paths, links, "social")
    b = two_parallel()
    with pytest.raises(ValidationError):
        grid_oracle(b.paths, b.links, "social", resolution=0.0)
    with pytest.raises(ValidationError):
        grid_oracle(b.paths, b.links, "latency")


def test_result_serializes_to_json():
    b = wheatstone()
    res = perturbed_equilibrium(b.paths, b.links, TollPolicy.marginal(), 1.0)
    doc = json.loads(json.dumps(res.to_dict(b.paths)))
    assert doc["paths"] == b.paths.labels and doc["links"] == list(b.network.link_ids)
    assert set(doc) >= {"flows", "path_distribution", "objective", "wardrop_gap", "iterations", "converged"}
