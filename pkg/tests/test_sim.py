import csv
import math

import numpy as np
import pytest

from aoimac.channel import FadingModel
from aoimac.config import ScenarioConfig, SimConfig
from aoimac.mdp import (
    DeterministicPolicy,
    NomaModel,
    OmaModel,
    SourceState,
    evaluate_policy,
    next_state,
    value_iteration,
)
from aoimac.sim import SimulationAborted, Uplink, noma_coin, policy_agent, run_sim


@pytest.fixture(scope="module")
def oma_policy(small_oma):
    return value_iteration(small_oma, 0.8).policy


@pytest.fixture(scope="module")
def noma_policy(small_noma):
    return value_iteration(small_noma, (0.8, 0.8)).policy


def test_sure_success_keeps_age_at_one():
    # gains below 5 have probability 1e-9; the action needs only 4
    sc = ScenarioConfig(max_rounds=3, delta_max=10, K=2, weights=(1.0, 2.0),
                        channel=FadingModel.tabulated([(0, 0), (1e-9, 5.0), (1, 6.0)]))
    model = OmaModel(sc)
    acts = [model.power_actions(n, [model.energy[n] / 4.0]) for n in range(2)]
    pol = DeterministicPolicy("oma", np.zeros((2, model.space.size), dtype=np.int64), acts)
    m = run_sim(model, pol, SimConfig(slots=20_000, seed=1))
    np.testing.assert_array_equal(m.mean_age, [1.0, 1.0])
    assert m.weighted_aoi == pytest.approx(1.5 * 3.0)


def test_idle_only_reaches_the_cap(small_oma):
    D = small_oma.scenario.delta_max
    pol = DeterministicPolicy("oma", np.full((2, small_oma.space.size), small_oma.scenario.K - 1),
                              small_oma.actions)
    m = run_sim(small_oma, pol, SimConfig(slots=100_000))
    # ages 1..D-1 once, then D forever
    expected = (D * (D - 1) / 2 + D * (100_000 - D + 1)) / 100_000
    np.testing.assert_allclose(m.mean_age, expected)
    assert np.all(m.attempts == 0) and np.all(m.avg_power == 0)


def test_same_seed_same_metrics(small_noma, noma_policy):
    a = run_sim(small_noma, noma_policy, SimConfig(slots=50_000, seed=4))
    b = run_sim(small_noma, noma_policy, SimConfig(slots=50_000, seed=4))
    c = run_sim(small_noma, noma_policy, SimConfig(slots=50_000, seed=5))
    assert a.to_dict() == b.to_dict()
    np.testing.assert_array_equal(a.visits, b.visits)
    assert a.to_dict() != c.to_dict()


def test_chunking_does_not_change_results(small_oma, oma_policy):
    a = run_sim(small_oma, oma_policy, SimConfig(slots=30_000, seed=2))
    b = run_sim(small_oma, oma_policy, SimConfig(slots=30_000, seed=2, chunk=30_000))
    assert a.to_dict() == b.to_dict()


@pytest.mark.parametrize("which", ["oma", "noma"])
def test_compiled_path_matches_python_agent(which, small_oma, small_noma, oma_policy, noma_policy):
    model, pol = (small_oma, oma_policy) if which == "oma" else (small_noma, noma_policy)
    cfg = SimConfig(slots=5_000, seed=9)
    fast = run_sim(model, pol, cfg)
    slow = run_sim(model, policy_agent(model, pol), cfg)
    assert fast.to_dict() == slow.to_dict()
    np.testing.assert_array_equal(fast.visits, slow.visits)


@pytest.mark.parametrize("which", ["oma", "noma"])
def test_visit_frequencies_match_stationary_law(which, small_oma, small_noma, oma_policy, noma_policy):
    model, pol = (small_oma, oma_policy) if which == "oma" else (small_noma, noma_policy)
    m = run_sim(model, pol, SimConfig(slots=1_000_000, seed=3))
    law = evaluate_policy(model, pol)
    freq = m.visit_frequencies()
    if which == "oma":
        for n in range(2):
            assert np.abs(freq[n] - law.dist[n]).sum() < 0.01
    else:
        # 10^6 slots spread over S^2 joint cells leave ~0.01 of pure sampling
        # noise in the joint L1, so the bound is applied to the per-source marginals
        S = model.space.size
        f, p = freq.reshape(S, S), law.dist[0].reshape(S, S)
        for axis in (0, 1):
            assert np.abs(f.sum(axis) - p.sum(axis)).sum() < 0.01
        longer = run_sim(model, pol, SimConfig(slots=4_000_000, seed=3)).visit_frequencies()
        assert np.abs(longer - law.dist[0]).sum() < 0.01
    np.testing.assert_allclose(m.mean_age, law.ages, rtol=0.02)


def test_oma_success_frequency_per_action(small_oma, rng):
    # one fixed action per run, compared with its analytic success probability
    for a in range(small_oma.scenario.K - 1):
        pol = DeterministicPolicy("oma", np.full((2, small_oma.space.size), a), small_oma.actions)
        m = run_sim(small_oma, pol, SimConfig(slots=200_000, seed=a))
        p = small_oma.actions[0].success[a]
        sigma = np.sqrt(p * (1 - p) / m.attempts)
        assert np.all(np.abs(m.success_rate - p) < 3 * sigma)


def test_noma_success_frequency(small_noma):
    acts = small_noma.actions
    a = int(np.flatnonzero((acts.index[:, 0] == 1) & (acts.index[:, 1] == 2) & (acts.order == 0))[0])
    pol = DeterministicPolicy("noma", np.full(small_noma.space.size ** 2, a), acts)
    m = run_sim(small_noma, pol, SimConfig(slots=200_000, seed=6))
    ss, sf, fs, ff = acts.probs[a]
    expected = np.array([ss + sf, ss + fs])
    sigma = np.sqrt(expected * (1 - expected) / m.attempts)
    assert np.all(np.abs(m.success_rate - expected) < 3 * sigma)


def test_trace_obeys_age_rule(tmp_path, small_noma, noma_policy):
    sc = small_noma.scenario
    m = run_sim(small_noma, noma_policy, SimConfig(slots=3_000, seed=1, trace=True, trace_len=1_000))
    tr = m.trace
    assert len(tr["slot"]) == 1_000 and tr["slot"][0] == 2_000
    for k in range(len(tr["slot"]) - 1):
        for n in range(2):
            s = SourceState(int(tr["m"][k, n]), int(tr["delta"][k, n]))
            nxt = next_state(s, bool(tr["ok"][k, n]), sc.max_rounds, sc.delta_max)
            assert (nxt.m, nxt.delta) == (tr["m"][k + 1, n], tr["delta"][k + 1, n])
    path = tmp_path / "trace.csv"
    m.write_trace(path)
    rows = list(csv.reader(open(path)))
    assert rows[0][-2:] == ["order", "outcome"] and len(rows) == 1_001
    assert set(r[-1] for r in rows[1:]) <= {"SS", "SF", "FS", "FF"}


def test_out_of_range_agent_aborts(small_oma):
    def agent(slot, states):
        return (0, 99) if slot == 7 else (0, 0)

    with pytest.raises(SimulationAborted) as err:
        run_sim(small_oma, agent, SimConfig(slots=100))
    assert err.value.slot == 7


def test_freeze_evaluate_is_pure(small_noma):
    up = Uplink(small_noma)
    states = (SourceState(1, 3), SourceState(2, 4))
    args = ((0.9, 1.3), (3.0, 1.0), 0, states, np.array([0.5, 0.5]))
    assert up.freeze_evaluate(*args) == up.freeze_evaluate(*args)
    ok, rewards = up.freeze_evaluate(*args)
    expected = [(2 if ok[0] else 4) + 0.5 + 1.5, (1 if ok[1] else 5) + 0.5 + 0.5]
    assert rewards == pytest.approx(tuple(expected))


def test_idle_partner_does_not_change_outcome(small_noma):
    up = Uplink(small_noma)
    for g in (0.2, 0.8, 3.0):
        assert up.decode((g, 1.0), (2.0, 0.0), 0)[0] == up.decode((g, 1.0), (2.0, 0.0), 1)[0]


def test_deep_fade_fails_everything(small_noma):
    up = Uplink(small_noma)
    for order in (0, 1):
        assert up.decode((1e-9, 1e-9), (5.0, 5.0), order) == (False, False)


def test_noma_coin_weights_sources(small_scenario):
    model = NomaModel(small_scenario.replace(weights=(1.0, 3.0)))
    assert noma_coin(model, (1.0, 0.0)) == pytest.approx(0.25)


def test_metrics_json_fields(small_oma, oma_policy):
    d = run_sim(small_oma, oma_policy, SimConfig(slots=1_000)).to_dict()
    assert d["weighted_aoi"] == pytest.approx(d["weighted_age"] + 1.0)
    assert all(math.isfinite(x) for x in d["mean_age"])
