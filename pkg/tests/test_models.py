import numpy as np
import pytest

from amortsmc.graph import ancestral_sample, log_joint, var
from amortsmc.inference import run_inference
from amortsmc.models import (
    FhmmConfig,
    PumpConfig,
    RegressionConfig,
    brute_force_fhmm,
    build,
    build_fhmm,
    build_pump,
    build_regression,
    fhmm_episode,
    fhmm_x,
    load_pump_fixture,
    read_episode,
    small_oracle_fhmm,
    write_episode,
)
from amortsmc.training import feature_dim

SMALL = dict(hidden=(4,))


# -- regression ------------------------------------------------------------------

def test_regression_single_joint_factor():
    b = build_regression(RegressionConfig(N=7, **SMALL))
    (f,) = b.inverse.factors
    assert f.targets == (var("w2"), var("w1"), var("w0"))
    assert feature_dim(f, "raw") == 14
    assert {c.name for c in f.conditioners} == {"z", "t"}


def test_regression_prior_only_log_joint():
    b = build_regression(RegressionConfig(N=0, **SMALL))
    w = {var(f"w{d}"): 0.0 for d in range(3)}
    expected = sum(-np.log(2 * 10.0 ** (1 - d)) for d in range(3))
    assert log_joint(b.model, w) == pytest.approx(expected, abs=1e-12)


def test_regression_rejects_wrong_length_data():
    with pytest.raises(ValueError, match="N=3"):
        build_regression(RegressionConfig(N=3, **SMALL), data=(np.zeros(4), np.zeros(4)))


def test_regression_default_data_is_seeded():
    a = build_regression(RegressionConfig(N=5, **SMALL)).data
    b = build_regression(RegressionConfig(N=5, **SMALL)).data
    c = build_regression(RegressionConfig(N=5, data_seed=1, **SMALL)).data
    assert a == b and a != c


# -- pump -----------------------------------------------------------------------

def test_pump_share_groups_and_conditioners():
    b = build_pump(PumpConfig(**SMALL))
    shared = [f for f in b.inverse.factors if f.share_group is not None]
    top = [f for f in b.inverse.factors if f.share_group is None]
    assert len(shared) == 10 and len({f.share_group for f in shared}) == 1
    assert len(top) == 1 and set(top[0].targets) == {var("alpha"), var("beta")}
    for f in shared:
        (th,) = f.targets
        assert set(f.conditioners) == {var("t", th.index), var("y", th.index)}


def test_pump_single_unit_still_shares():
    b = build_pump(PumpConfig(N=1, **SMALL), data=(np.array([1.0]), np.array([2.0])))
    assert [f.share_group for f in b.inverse.factors].count("pump") == 1


def test_pump_fixture():
    t, y = load_pump_fixture()
    assert t.shape == y.shape == (10,)
    assert np.all(t > 0) and np.all(y >= 0) and np.all(y == np.round(y))
    b = build_pump(PumpConfig(**SMALL))
    assert b.data[var("y", 1)] == y[0] and b.data[var("t", 10)] == t[9]


def test_pump_ancestral_support():
    b = build_pump(PumpConfig(**SMALL))
    draws = ancestral_sample(b.model, np.random.default_rng(0), size=10_000)
    for n in range(1, 11):
        assert np.all(draws[var("theta", n)] > 0)
        assert np.all(draws[var("y", n)] >= 0)
        assert np.all(draws[var("t", n)] > 0)


# -- factorial HMM ---------------------------------------------------------------

def test_fhmm_inverse_slices():
    b = build_fhmm(FhmmConfig(transition_hidden=(4,), initial_hidden=(4,)))
    factors = b.inverse.factors
    assert len(factors) == 30
    first, later = factors[0], factors[1:]
    assert set(first.targets) == {fhmm_x(i, 1) for i in range(1, 21)}
    assert set(first.conditioners) == {var("y", 1)}
    for f in later:
        t = f.targets[0].index
        assert set(f.targets) == {fhmm_x(i, t) for i in range(1, 21)}
        assert set(f.conditioners) == {fhmm_x(i, t - 1) for i in range(1, 21)} | {var("y", t)}
    assert len({f.share_group for f in later}) == 1 and first.share_group is None


def test_fhmm_means_spread_linearly():
    mu = FhmmConfig().mu
    assert mu[0] == 30 and mu[-1] == 500 and np.allclose(np.diff(mu), 470 / 19)


def test_fhmm_all_off_observation():
    b = build_fhmm(FhmmConfig(D=4, T=1, transition_hidden=(1,), initial_hidden=(1,)))
    node = b.model.node(var("y", 1))
    mean, variance = node.dist.params(0.0 for _ in node.parents)
    assert mean == 0 and np.sqrt(variance) == 10


def test_fhmm_rejects_wrong_length_episode():
    with pytest.raises(ValueError, match="T=5"):
        build_fhmm(FhmmConfig(D=2, T=5, transition_hidden=(1,), initial_hidden=(1,)), ys=np.zeros(4))


def test_episode_file_round_trip(tmp_path):
    cfg = FhmmConfig(D=3, T=6, mus=(10.0, 20.0, 45.5), sigma=2.0)
    _, ys = fhmm_episode(cfg, np.random.default_rng(0))
    write_episode(tmp_path / "ep.txt", cfg, ys)
    text = (tmp_path / "ep.txt").read_text().splitlines()
    assert len(text) == 7
    back, ys2 = read_episode(tmp_path / "ep.txt")
    assert np.array_equal(ys, ys2)
    assert back.mus == cfg.mus and back.sigma == 2.0 and back.D == 3 and back.T == 6


# -- enumeration oracle ------------------------------------------------------------

def test_forward_matches_trajectory_sum():
    cfg = FhmmConfig(D=3, T=5)
    _, ys = fhmm_episode(cfg, np.random.default_rng(4))
    a, b = small_oracle_fhmm(cfg, ys), brute_force_fhmm(cfg, ys)
    assert abs(a.log_evidence - b.log_evidence) < 1e-10
    assert np.allclose(a.smoothing, b.smoothing, atol=1e-10)
    assert np.allclose(a.filtering, b.filtering, atol=1e-10)


def test_symmetric_devices_have_equal_marginals():
    cfg = FhmmConfig(D=3, T=4, mus=(50.0, 50.0, 50.0))
    ex = small_oracle_fhmm(cfg, [0.0, 48.0, 103.0, 51.0])
    assert np.allclose(ex.smoothing, ex.smoothing[:, :1], atol=1e-12)


def test_small_noise_concentrates_on_consistent_states():
    cfg = FhmmConfig(D=3, T=3, mus=(30.0, 100.0, 250.0), sigma=1e-3)
    states = np.array([[1, 0, 0], [1, 1, 0], [0, 1, 1]], dtype=float)
    ys = states @ np.array(cfg.mus)
    ex = small_oracle_fhmm(cfg, ys)
    assert np.allclose(ex.smoothing, states, atol=1e-9)


def test_colliding_sums_leave_posterior_multimodal():
    # 100 + 200 = 300: a reading of 300 is explained by either device set
    cfg = FhmmConfig(D=3, T=1, mus=(100.0, 200.0, 300.0), p_init=0.3)
    ex = small_oracle_fhmm(cfg, [300.0])
    p = ex.smoothing[0]
    assert 0.2 < p[2] < 0.8
    assert np.allclose(p[0], p[1]) and np.isclose(p[0] + p[2], 1.0, atol=1e-6)


# -- registry --------------------------------------------------------------------

@pytest.mark.parametrize("name", ["conjugate-toy", "regression", "pump", "fhmm"])
def test_every_model_builds_with_default_data(name):
    b = build(name)
    assert set(b.observed_values()) == set(b.model.observed)
    assert b.specs and b.train_config.n_epochs > 0


def test_unknown_model():
    with pytest.raises(ValueError, match="unknown model"):
        build("ising")


@pytest.mark.slow
def test_pump_posterior_means_match_prior_reference(pump_bundle, pump_artifact):
    def means_and_se(ps):
        w = ps.normalized_weights
        out = []
        for n in range(1, 11):
            x = ps.values[var("theta", n)]
            m = float(np.sum(w * x))
            out.append((m, np.sqrt(np.sum(w * (x - m) ** 2) / (1.0 / np.sum(w * w)))))
        return np.array(out)

    learned = means_and_se(run_inference(pump_bundle, "learned", 10_000, 0, pump_artifact))
    reference = means_and_se(run_inference(pump_bundle, "prior", 1_000_000, 0))
    joint = np.hypot(learned[:, 1], reference[:, 1])
    assert np.all(np.abs(learned[:, 0] - reference[:, 0]) < 3 * joint)
