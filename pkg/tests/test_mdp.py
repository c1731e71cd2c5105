import csv
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from aoimac.config import ScenarioConfig, SolverConfig
from aoimac.mdp import (
    DeterministicPolicy,
    NomaModel,
    OmaModel,
    constrained_solve,
    evaluate_policy,
    fixed_power_solve,
    lagrangian_reward,
    mixing_coefficient,
    optimize_rho,
    power_curve,
    stationary_distribution,
    value_iteration,
    write_policy_csv,
)
from aoimac.mdp.solve import POLICY_COLUMNS, ChainWarning
from oracles import brute_force_values, dense_stationary, joint_oma_values, source_matrices


# -- reward and mixing arithmetic ------------------------------------------

@pytest.mark.parametrize("delta,p,w,beta,expected", [
    (1, 0.0, 1.0, 7.0, 1.5),
    (4, 2.0, 1.0, 0.25, 5.0),
    (4, 2.0, 2.0, 0.0, 9.0),
])
def test_reward_examples(delta, p, w, beta, expected):
    assert lagrangian_reward(delta, p, beta, w) == pytest.approx(expected)


def test_mixing_examples():
    assert mixing_coefficient(4.0, 2.0, 3.0) == 0.5
    assert mixing_coefficient(4.0, 2.0, 2.0) == 0.0
    assert mixing_coefficient(4.0, 2.0, 4.0) == 1.0
    assert mixing_coefficient(2.0, 2.0, 1.0) == 1.0
    assert mixing_coefficient(4.0, 2.0, 9.0) == 1.0


# -- value iteration --------------------------------------------------------

@pytest.mark.parametrize("beta", [0.0, 0.5, 2.0])
def test_greedy_value_matches_exhaustive_search(tiny_scenario, beta):
    model = OmaModel(tiny_scenario)
    via = value_iteration(model, beta, gamma_v=1e-12)
    for n in range(2):
        best = brute_force_values(model.space, model.actions[n], 1.0, beta, tiny_scenario.discount)
        np.testing.assert_allclose(via.values[n], best, atol=1e-8)


def test_oma_decoupling_matches_joint_solve(tiny_scenario):
    sc = tiny_scenario.replace(weights=(1.0, 2.5))
    model = OmaModel(sc)
    betas = (0.3, 1.1)
    via = value_iteration(model, betas, gamma_v=1e-13)
    joint, _ = joint_oma_values(model.space, model.actions, sc.weights, betas, sc.discount)
    np.testing.assert_allclose(via.total, joint, atol=1e-9)


def test_jacobi_and_policy_iteration_agree(small_oma):
    a = value_iteration(small_oma, 0.7, gamma_v=1e-10, method="jacobi", max_sweeps=100_000)
    b = value_iteration(small_oma, 0.7, gamma_v=1e-10, method="policy")
    assert a.converged and b.converged
    assert b.sweeps < a.sweeps
    np.testing.assert_allclose(a.values, b.values, atol=1e-7)
    np.testing.assert_array_equal(a.policy.actions, b.policy.actions)


def test_sweep_cap_reports_non_convergence(small_oma):
    via = value_iteration(small_oma, 0.5, gamma_v=1e-12, method="jacobi", max_sweeps=3)
    assert not via.converged and via.sweeps == 3 and via.residual > 1e-12


def test_negative_multiplier_rejected(small_oma):
    with pytest.raises(ValueError):
        value_iteration(small_oma, -1.0)


def test_free_power_always_transmits(tiny_scenario):
    via = value_iteration(OmaModel(tiny_scenario), 0.0)
    assert np.all(via.policy.actions == 0)


def test_myopic_limit_is_idle_when_power_costs():
    model = OmaModel(ScenarioConfig(max_rounds=3, delta_max=10, K=4, discount=1e-9))
    via = value_iteration(model, 0.2)
    assert np.all(via.policy.actions == model.scenario.K - 1)


def test_common_scaling_keeps_policy(small_scenario):
    a = value_iteration(OmaModel(small_scenario), 0.4).policy.actions
    scaled = small_scenario.replace(weights=(3.0, 3.0))
    b = value_iteration(OmaModel(scaled), 1.2).policy.actions
    np.testing.assert_array_equal(a, b)


def test_residuals_contract(small_oma):
    lam = small_oma.scenario.discount
    prev = None
    for k in range(200, 206):
        r = value_iteration(small_oma, 0.5, gamma_v=1e-300, method="jacobi", max_sweeps=k).residual
        if prev is not None:
            assert r <= lam * prev * (1 + 1e-9)
        prev = r


def test_noma_relabel_symmetry(small_noma):
    via = value_iteration(small_noma, (0.6, 0.6), gamma_v=1e-10)
    swap = small_noma.swap_states()
    tot = via.total
    np.testing.assert_allclose(tot[swap], tot, atol=1e-8)
    acts = via.policy.action_set
    a = via.policy.actions
    clear = (via.gap > 1e-7) & (via.gap[swap] > 1e-7)
    assert clear.mean() > 0.5
    np.testing.assert_allclose(acts.powers[a[swap]][clear], acts.powers[a][clear][:, ::-1])
    # a strictly preferred order flips with the labels
    both_on = clear & np.all(acts.powers[a] > 0, axis=1)
    assert np.all(acts.order[a[swap]][both_on] != acts.order[a][both_on])


def test_transition_rows_sum_to_one(small_oma, small_noma):
    for a in range(len(small_oma.actions[0])):
        pol = DeterministicPolicy("oma", np.full((2, small_oma.space.size), a), small_oma.actions)
        rows = np.asarray(small_oma.transition_matrix(pol, 0).sum(axis=1)).ravel()
        np.testing.assert_allclose(rows, 1.0, atol=1e-12)
    np.testing.assert_allclose(small_noma.actions.probs.sum(axis=1), 1.0, atol=1e-12)
    rng = np.random.default_rng(0)
    pol = DeterministicPolicy("noma", rng.integers(0, len(small_noma.actions), small_noma.space.size ** 2),
                              small_noma.actions)
    rows = np.asarray(small_noma.transition_matrix(pol).sum(axis=1)).ravel()
    np.testing.assert_allclose(rows, 1.0, atol=1e-12)


# -- stationary evaluation --------------------------------------------------

def test_single_state_chain():
    np.testing.assert_array_equal(stationary_distribution(sp.csr_matrix([[1.0]])), [1.0])


def test_always_succeed_sits_at_fresh_state():
    model = OmaModel(ScenarioConfig(max_rounds=4, delta_max=10, K=4))
    acts = model.power_actions(0, [1.0])
    acts = type(acts)(acts.powers, np.ones(1), acts.thresholds)
    P = sp.csr_matrix(source_matrices(model.space, acts)[0])
    pi = stationary_distribution(P)
    assert pi[model.space.index(1, 1)] == pytest.approx(1.0)


def test_matches_dense_solve(small_oma):
    via = value_iteration(small_oma, 0.8)
    P = small_oma.transition_matrix(via.policy, 0)
    pi = stationary_distribution(P)
    reach = pi > 0
    dense = dense_stationary(P.toarray())
    np.testing.assert_allclose(pi, dense, atol=1e-10)
    assert reach.any()


def test_periodic_chain_uses_cesaro_average():
    P = sp.csr_matrix(np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float))
    with pytest.warns(ChainWarning):
        pi = stationary_distribution(P)
    np.testing.assert_allclose(pi, 1 / 3)


def test_two_closed_classes_weighted_by_absorption():
    P = sp.csr_matrix(np.array([[0.0, 0.25, 0.75], [0, 1, 0], [0, 0, 1]]))
    with pytest.warns(ChainWarning):
        pi = stationary_distribution(P)
    np.testing.assert_allclose(pi, [0, 0.25, 0.75])


def test_aperiodic_chain_is_silent(small_oma):
    via = value_iteration(small_oma, 0.8)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ChainWarning)
        stationary_distribution(small_oma.transition_matrix(via.policy, 0))


def test_metrics_are_linear_in_the_law(small_oma):
    via = value_iteration(small_oma, 0.8)
    m = evaluate_policy(small_oma, via.policy)
    for n in range(2):
        pi = m.dist[n]
        assert m.ages[n] == pytest.approx(pi @ small_oma.space.delta)
        assert m.powers[n] == pytest.approx(pi @ small_oma.actions[n].powers[via.policy.actions[n]])


def test_idle_policy_saturates():
    model = OmaModel(ScenarioConfig(max_rounds=3, delta_max=9, K=4))
    pol = DeterministicPolicy("oma", np.full((2, model.space.size), 3), model.actions)
    # the round keeps cycling at the age cap, so the class is periodic
    with pytest.warns(ChainWarning):
        m = evaluate_policy(model, pol)
    np.testing.assert_allclose(m.ages, 9.0)
    np.testing.assert_allclose(m.powers, 0.0)


# -- constrained solves -----------------------------------------------------

def test_binding_budget_is_met(small_oma):
    sol = constrained_solve(small_oma)
    rep = sol.report
    assert rep.status == ["binding", "binding"]
    np.testing.assert_allclose(rep.powers, rep.constraints, rtol=1e-9)
    for n in range(2):
        assert rep.powers_plus[n] <= rep.constraints[n] < rep.powers_minus[n]
        assert rep.beta_plus[n] - rep.beta_minus[n] <= SolverConfig().gamma_beta
        assert 0 <= rep.xi[n] <= 1
    assert rep.weighted_age == pytest.approx(np.dot(rep.weights, rep.ages), abs=1e-9)


def test_noma_binding_budget_is_met(small_noma):
    rep = constrained_solve(small_noma).report
    for n in range(2):
        if rep.status[n] == "binding":
            assert rep.powers[n] == pytest.approx(rep.constraints[n], rel=1e-2)
        assert rep.powers[n] <= rep.constraints[n] * (1 + 1e-9)


def test_generous_budget_is_slack(small_scenario):
    model = OmaModel(small_scenario.replace(budget=1e6))
    rep = constrained_solve(model).report
    assert rep.status == ["slack", "slack"] and rep.beta_plus == [0.0, 0.0]


def test_optimal_beats_fixed_power(small_oma, small_noma):
    for model in (small_oma, small_noma):
        assert (constrained_solve(model).report.weighted_age
                <= fixed_power_solve(model).report.weighted_age + 1e-9)


def test_fixed_power_spends_the_budget(small_oma):
    rep = fixed_power_solve(small_oma).report
    np.testing.assert_allclose(rep.powers, rep.constraints)


def test_power_curve_nonincreasing(small_oma, small_noma):
    for model in (small_oma, small_noma):
        p = power_curve(model, np.linspace(0, 4.5, 10))
        assert np.all(np.diff(p, axis=0) <= 1e-9)


def test_solve_is_reproducible(small_scenario):
    a = constrained_solve(OmaModel(small_scenario)).report.to_dict()
    b = constrained_solve(OmaModel(small_scenario)).report.to_dict()
    assert a == b


def test_noma_label_swap_keeps_age(small_scenario):
    sc = small_scenario.replace(weights=(1.0, 2.0), alpha=1.5)
    swapped = sc.replace(weights=(2.0, 1.0), budget=sc.budget * 1.5, alpha=1 / 1.5)
    a = constrained_solve(NomaModel(sc)).report
    b = constrained_solve(NomaModel(swapped)).report
    assert a.weighted_age == pytest.approx(b.weighted_age, rel=1e-3)


# at rho = 0.25 the upper bisection bracket is the idle policy, whose chain cycles at the cap
@pytest.mark.filterwarnings("ignore::aoimac.mdp.solve.ChainWarning")
def test_rho_sweep_symmetric(small_scenario):
    rho, rows = optimize_rho(small_scenario, [0.25, 0.5, 0.75])
    assert rows[0][1] == pytest.approx(rows[2][1], rel=1e-6)
    assert rho == 0.5
    with pytest.raises(ValueError):
        optimize_rho(small_scenario, [0.5, 0.6])


def test_policy_csv(tmp_path, small_noma):
    sol = constrained_solve(small_noma)
    path = tmp_path / "p.csv"
    write_policy_csv(path, small_noma, sol.policy.plus)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == POLICY_COLUMNS
    assert len(rows) == 1 + small_noma.space.size ** 2
    K = small_noma.scenario.K
    for r in rows[1:]:
        assert 1 <= int(r[5]) <= K and 1 <= int(r[6]) <= K
        assert r[7] in ("1-2", "2-1")
