import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isqed.active import true_margin
from isqed.attribution import coverage_game, shapley_exact
from isqed.core import EcosystemAudit, FitConfig, ValidationError, rng_for
from isqed.disco import fit_weights, run_disco
from isqed.synth import (
    SaturationSpec, StepResponse, frequency_for, make_divergence_ecosystem, make_linear_ecosystem,
    make_nonidentifiability_pair, make_prune_ecosystem, make_robustness_pair, max_slope,
    population_uniqueness_steps, run_saturation, saturation_point,
)

EXACT = FitConfig(lambda0=0.0)


def test_clone_has_zero_margin_and_zero_pier():
    se = make_linear_ecosystem(4, 4, "clone", 0.0, seed=0, clone_of=1)
    assert true_margin(se.ecosystem) == 0 and se.gamma == 0
    assert np.array_equal(se.w_star, [0, 1, 0])
    _, rpt = run_disco(EcosystemAudit.from_matrix(se.responses, "target", config=EXACT), n_boot=20)
    assert rpt.uniqueness <= 1e-12


@given(d=st.integers(1, 7), n=st.integers(2, 12), seed=st.integers(0, 10_000), gamma=st.floats(0.05, 3))
def test_margin_construction_hits_requested_distance(d, n, seed, gamma):
    se = make_linear_ecosystem(d, n, "margin", 0.0, seed=seed, gamma=gamma, n_samples=2)
    assert true_margin(se.ecosystem) == pytest.approx(gamma, abs=1e-9)
    assert se.gamma == pytest.approx(gamma, abs=1e-9)


def test_margin_half():
    assert true_margin(make_linear_ecosystem(5, 4, "margin", 0, seed=1, gamma=0.5).ecosystem) == pytest.approx(0.5, abs=1e-9)


def test_in_hull_weights_recovered():
    se = make_linear_ecosystem(5, 3, "in_hull", 0.0, seed=2, mix_weights=[0.3, 0.7])
    a = EcosystemAudit.from_matrix(se.responses, "target", config=EXACT)
    assert np.allclose(fit_weights(a).weights.w, [0.3, 0.7], atol=1e-8)
    assert se.population_uniqueness == 0


def test_generator_validation():
    with pytest.raises(ValidationError):
        make_linear_ecosystem(0, 3, "margin")
    with pytest.raises(ValidationError):
        make_linear_ecosystem(3, 1)
    with pytest.raises(ValidationError):
        make_linear_ecosystem(3, 3, "in_hull", mix_weights=[0.5, 0.6])


def test_population_uniqueness_matches_monte_carlo():
    se = make_linear_ecosystem(3, 4, "margin", 0.4, seed=5, gamma=0.7, n_samples=200_000)
    Y = se.responses.values
    mc = np.mean(np.abs(Y[:, 0] - Y[:, 1:] @ se.w_population))
    assert mc == pytest.approx(se.population_uniqueness, rel=0.01)
    # the ridge-penalised weights are optimal for the noisy population
    alt = np.mean(np.abs(Y[:, 0] - Y[:, 1:] @ se.w_star))
    assert mc <= alt + 0.005


def test_generators_are_seed_deterministic():
    a = make_linear_ecosystem(4, 5, "margin", 0.3, seed=9)
    b = make_linear_ecosystem(4, 5, "margin", 0.3, seed=9)
    assert np.array_equal(a.responses.values, b.responses.values)


def test_saturation_drops_from_one_to_two_peers():
    spec = SaturationSpec(d=10, n_peers_grid=(1, 2), seeds=tuple(range(10)))
    (n1, u1), (n2, u2) = run_saturation(spec)
    assert u2 < u1


def test_saturation_in_hull_targets_stay_near_zero():
    spec = SaturationSpec(d=5, n_peers_grid=(2, 4, 8), seeds=(0, 1, 2), target="in_hull", n_fit=200, n_eval=200)
    assert all(u <= 1e-4 for _, u in run_saturation(spec, EXACT))


def test_saturation_curve_roughly_non_increasing():
    spec = SaturationSpec(d=6, n_peers_grid=(1, 2, 4, 8, 16), seeds=tuple(range(8)))
    us = [u for _, u in run_saturation(spec)]
    assert all(b <= a + 0.02 for a, b in zip(us, us[1:]))


def test_saturation_spec_validation():
    with pytest.raises(ValidationError):
        SaturationSpec(n_peers_grid=(2, 2))
    with pytest.raises(ValidationError):
        SaturationSpec(d=0)


def test_nonidentifiability_pair():
    pair, rpt = make_nonidentifiability_pair(0.7, seed=3)
    assert rpt["population_uniqueness"] == [0.0, pytest.approx(0.3, abs=1e-15)]
    assert np.array_equal(pair.logs[0], pair.logs[1])
    assert rpt["logs_identical"] and rpt["log_hashes"][0] == rpt["log_hashes"][1]
    _, near_one = make_nonidentifiability_pair(0.999, seed=3)
    assert near_one["population_uniqueness"][1] == pytest.approx(0.001, abs=1e-12)
    with pytest.raises(ValidationError):
        make_nonidentifiability_pair(1.0, 0)


@given(s0=st.floats(0.01, 0.99), seed=st.integers(0, 1000))
def test_any_log_statistic_is_blind(s0, seed):
    pair, rpt = make_nonidentifiability_pair(s0, seed, n_logs=50)
    assert rpt["log_based_estimate"][0] == rpt["log_based_estimate"][1]
    assert rpt["population_uniqueness"][1] - rpt["population_uniqueness"][0] == pytest.approx(1 - s0, abs=1e-12)


def test_step_uniqueness_projection():
    # target 1 on [0.5, 1]; peers: zero and the constant 1 -> best convex mix is 0.5, E|R| = 0.5
    t = StepResponse((0.0, 0.5), (0.0, 1.0))
    peers = [StepResponse((0.0,), (0.0,)), StepResponse((0.0,), (1.0,))]
    assert population_uniqueness_steps(t, peers) == pytest.approx(0.5)


def test_robustness_pair_at_unit_level():
    pair, a, b = make_robustness_pair(math.pi / 2, K=3, n_eval=20_000, n_boot=20)
    assert a.uniqueness == pytest.approx(1.0, abs=1e-3)
    assert b.uniqueness == pytest.approx(1.0, abs=1e-3)


def test_robustness_lipschitz_constant():
    pair, _, _ = make_robustness_pair(1.0, K=50, n_eval=1000, n_boot=10)
    assert pair.lipschitz_b == pytest.approx(100 * math.pi)
    assert max_slope(pair.target_b) == pytest.approx(100 * math.pi, rel=1e-6)
    assert max_slope(pair.target_a) == 0.0


def test_robustness_dense_grid_and_random_doses():
    pair, a, b = make_robustness_pair(1.0, l_high=300.0, n_eval=10_000, n_boot=20)
    assert pair.K == frequency_for(300.0, 1.0) and pair.lipschitz_b >= 300
    assert abs(a.uniqueness - b.uniqueness) <= 1e-3
    assert max_slope(pair.target_b) >= pair.l_high
    _, a, b = make_robustness_pair(1.0, K=7, n_eval=10_000, doses="random", seed=4, n_boot=20)
    assert abs(a.uniqueness - b.uniqueness) <= 2 / math.sqrt(10_000)


def test_clone_gets_shapley_credit_but_no_uniqueness():
    se = make_linear_ecosystem(4, 3, "clone", 0.0, seed=6, clone_of=0)
    labels = se.responses.values[:, 0]
    phi = shapley_exact(coverage_game(se.responses, labels, 1e-9))
    assert phi[0] > 0
    _, rpt = run_disco(EcosystemAudit.from_matrix(se.responses, "target", config=EXACT), n_boot=20)
    assert rpt.uniqueness <= 1e-8


def test_divergence_and_prune_families():
    R, labels = make_divergence_ecosystem(0, n=500)
    assert np.array_equal(R.values[:, 0], R.values[:, 1])
    flagged = np.array([d for _, d in R.sample.points]) > 0
    assert np.allclose(R.values[flagged, 2], labels[flagged])
    R, L = make_prune_ecosystem(1, clone=True)
    assert R.labels[-1] == "E0_clone" and np.array_equal(R.values[:, 0], R.values[:, -1])
    assert L.shape == R.values.shape


def test_saturation_point_is_seeded():
    spec = SaturationSpec()
    assert saturation_point(spec, 5, 3) == saturation_point(spec, 5, 3)
