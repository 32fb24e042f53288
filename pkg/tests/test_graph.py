import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _dags import conditionally_independent, joint_table, label_triples, random_binary_dag
from amortsmc.distributions import InvalidParameters
from amortsmc.graph import (
    CycleDetected,
    DistributionSpec,
    GraphModel,
    MissingVariable,
    Node,
    UnknownVariable,
    ancestral_sample,
    const,
    d_separated,
    log_joint,
    markov_blanket,
    topological_sort,
    var,
)
from amortsmc.models import PumpConfig, RegressionConfig, build_pump, build_regression

a, b, c = var("a"), var("b"), var("c")


def chain():
    return GraphModel((
        Node(a, "latent", (), const("gaussian", 0.0, 1.0)),
        Node(b, "latent", (a,), DistributionSpec("gaussian", lambda x: (x, 1.0))),
        Node(c, "observed", (b,), DistributionSpec("gaussian", lambda x: (x, 1.0))),
    ))


def collider():
    return GraphModel((
        Node(a, "latent", (), const("bernoulli", 0.5)),
        Node(b, "latent", (), const("bernoulli", 0.5)),
        Node(c, "observed", (a, b), DistributionSpec("bernoulli", lambda x, y: (0.1 + 0.4 * (x + y),))),
    ))


# -- construction and ordering -------------------------------------------------

def test_variable_id_formatting():
    assert str(var("theta", 3)) == "theta[3]"
    assert str(var("alpha")) == "alpha"


def test_chain_order():
    assert topological_sort(chain()) == [a, b, c]


def test_ties_follow_declaration_order():
    m = GraphModel((
        Node(c, "latent", (), const("gaussian", 0.0, 1.0)),
        Node(a, "latent", (), const("gaussian", 0.0, 1.0)),
        Node(b, "latent", (c,), DistributionSpec("gaussian", lambda x: (x, 1.0))),
    ))
    assert topological_sort(m) == [c, a, b]


def test_cycle_detected():
    with pytest.raises(CycleDetected):
        GraphModel((
            Node(a, "latent", (b,), DistributionSpec("gaussian", lambda x: (x, 1.0))),
            Node(b, "latent", (a,), DistributionSpec("gaussian", lambda x: (x, 1.0))),
        ))
    with pytest.raises(CycleDetected):
        topological_sort({a: (c,), b: (a,), c: (b,)})


def test_unknown_parent_rejected():
    with pytest.raises(UnknownVariable):
        GraphModel((Node(a, "latent", (b,), DistributionSpec("gaussian", lambda x: (x, 1.0))),))


def test_regression_weights_precede_data():
    m = build_regression(RegressionConfig(N=4)).model
    order = topological_sort(m)
    pos = {v: i for i, v in enumerate(order)}
    for d in range(3):
        for n in range(1, 5):
            assert pos[var(f"w{d}")] < pos[var("t", n)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_dag_order_respects_every_edge(seed):
    m = random_binary_dag(np.random.default_rng(seed), n=6)
    pos = {v: i for i, v in enumerate(topological_sort(m))}
    for v in m.ids:
        for p in m.parents(v):
            assert pos[p] < pos[v]


# -- Markov blankets -------------------------------------------------------------

def test_isolated_node_blanket_empty():
    m = GraphModel((Node(a, "latent", (), const("gaussian", 0.0, 1.0)),))
    assert markov_blanket(m, a) == set()


def test_regression_blanket_of_w0():
    N = 3
    m = build_regression(RegressionConfig(N=N)).model
    expected = {var("w1"), var("w2")} | {var("t", n) for n in range(1, N + 1)} | {var("z", n) for n in range(1, N + 1)}
    assert markov_blanket(m, var("w0")) == expected


def test_pump_blanket_of_theta():
    m = build_pump(PumpConfig(N=3)).model
    assert markov_blanket(m, var("theta", 2)) == {var("alpha"), var("beta"), var("t", 2), var("y", 2)}


def test_blanket_unknown_variable():
    with pytest.raises(UnknownVariable):
        markov_blanket(chain(), var("nope"))


# -- sampling ---------------------------------------------------------------------

def test_degenerate_bernoulli_sample():
    m = GraphModel((Node(a, "latent", (), const("bernoulli", 1.0)),))
    assert ancestral_sample(m, np.random.default_rng(0))[a] == 1


def test_uniform_sample_mean():
    m = GraphModel((Node(a, "latent", (), const("uniform", -10.0, 10.0)),))
    x = ancestral_sample(m, np.random.default_rng(1), size=100_000)[a]
    assert abs(x.mean()) < 0.1


def test_pump_sample_support():
    m = build_pump(PumpConfig(N=10)).model
    vals = ancestral_sample(m, np.random.default_rng(2), size=10_000)
    for n in range(1, 11):
        assert np.all(vals[var("theta", n)] > 0)
        y = vals[var("y", n)]
        assert np.all(y >= 0) and np.all(y == np.round(y))


def test_sampling_is_seed_deterministic():
    m = build_pump(PumpConfig(N=3)).model
    s1 = ancestral_sample(m, np.random.default_rng(5), size=50)
    s2 = ancestral_sample(m, np.random.default_rng(5), size=50)
    assert all(np.array_equal(s1[v], s2[v]) for v in m.ids)


def test_invalid_parameters_surface():
    m = GraphModel((Node(a, "latent", (), const("gaussian", 0.0, -1.0)),))
    with pytest.raises(InvalidParameters):
        ancestral_sample(m, np.random.default_rng(0))


def test_sampling_matches_joint_table():
    rng = np.random.default_rng(11)
    m = random_binary_dag(rng, n=3, edge_p=0.8)
    table = joint_table(m)
    K = 100_000
    vals = ancestral_sample(m, rng, size=K)
    idx = sum(vals[v].astype(int) * 2 ** (2 - k) for k, v in enumerate(m.ids))
    counts = np.bincount(idx, minlength=8)
    p = table.ravel()
    se = np.sqrt(K * p * (1 - p))
    assert np.all(np.abs(counts - K * p) < 3 * se + 1)


# -- densities --------------------------------------------------------------------

def test_standard_gaussian_log_joint():
    m = GraphModel((Node(a, "latent", (), const("gaussian", 0.0, 1.0)),))
    assert float(log_joint(m, {a: 0.0})) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)


def test_bernoulli_chain_log_joint():
    m = GraphModel((
        Node(a, "latent", (), const("bernoulli", 0.5)),
        Node(b, "latent", (a,), DistributionSpec("bernoulli", lambda x: (x * 0.9 + (1 - x) * 0.1,))),
    ))
    assert float(log_joint(m, {a: 1.0, b: 1.0})) == pytest.approx(np.log(0.45), abs=1e-14)


def test_zero_rate_poisson_is_impossible():
    m = GraphModel((Node(a, "observed", (), const("poisson", 0.0)),))
    assert float(log_joint(m, {a: 1.0})) == -np.inf


def test_partial_assignment_rejected():
    with pytest.raises(MissingVariable):
        log_joint(chain(), {a: 0.0, b: 1.0})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_discrete_joint_sums_to_one(seed):
    m = random_binary_dag(np.random.default_rng(seed), n=5)
    assert joint_table(m).sum() == pytest.approx(1.0, abs=1e-10)


# -- d-separation -------------------------------------------------------------------

def test_chain_blocked_by_middle():
    assert d_separated(chain(), {a}, {c}, {b})
    assert not d_separated(chain(), {a}, {c}, set())


def test_collider_opens_when_conditioned():
    m = collider()
    assert d_separated(m, {a}, {b}, set())
    assert not d_separated(m, {a}, {b}, {c})


def test_d_separation_unknown_variable():
    with pytest.raises(UnknownVariable):
        d_separated(chain(), {a}, {var("ghost")}, set())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_d_separation_sound_against_joint_table(seed):
    m = random_binary_dag(np.random.default_rng(seed), n=5)
    table = joint_table(m)
    ids = m.ids
    for A, B, C in label_triples(5):
        if d_separated(m, [ids[i] for i in A], [ids[i] for i in B], [ids[i] for i in C]):
            assert conditionally_independent(table, A, B, C), (A, B, C)


def test_d_separation_complete_on_generic_parameters():
    # with generic random parameters every d-connected triple shows a measurable dependence
    rng = np.random.default_rng(3)
    m = random_binary_dag(rng, n=4, edge_p=0.6)
    table = joint_table(m)
    ids = m.ids
    for A, B, C in label_triples(4):
        sep = d_separated(m, [ids[i] for i in A], [ids[i] for i in B], [ids[i] for i in C])
        assert sep == conditionally_independent(table, A, B, C, tol=1e-9)
