import numpy as np
import pytest

from ctjmdp import (
    FiniteMemoryPolicy,
    GeneralPolicy,
    MarkovPolicyGrid,
    PolicyError,
    augment,
    decision_at,
    fallback_action,
    validate_model,
)
from ctjmdp.grid import TimeGrid
from ctjmdp.policies import policy_from_dict, policy_to_dict


def empty_history():
    return (np.array([]), np.array([], dtype=int), 1)


def test_parity_decisions(fig2, fig2_parity):
    z2 = fig2.state_index["2"]
    # no jumps yet: even parity, plays b
    h0 = (np.array([]), np.array([], dtype=int), z2)
    assert decision_at(fig2, fig2_parity, h0, 0.4).weights == {"b": 1.0}
    # one entry into state 2: odd parity, plays c
    h1 = (np.array([0.3, 0.9]), np.array([0, 1], dtype=int), z2)
    assert decision_at(fig2, fig2_parity, h1, 1.0).weights == {"c": 1.0}


def test_markov_decision_deterministic(fig2):
    pol = MarkovPolicyGrid.uniform(fig2)
    h = (np.array([]), np.array([], dtype=int), fig2.state_index["2"])
    a = decision_at(fig2, pol, h, 0.7)
    b = decision_at(fig2, pol, h, 0.7)
    assert a.weights == b.weights


def test_decision_support_enforced(fig2):
    bad = GeneralPolicy(lambda times, states, x0, t: {"c": 1.0})
    h = (np.array([]), np.array([], dtype=int), fig2.state_index["1"])
    with pytest.raises(PolicyError) as e:
        decision_at(fig2, bad, h, 0.5)
    assert e.value.code == "UNSUPPORTED_ACTION"


def test_augment_parity_cycle(fig2, fig2_parity):
    aug, aug_pol, pairs = augment(fig2, fig2_parity)
    assert aug.n_states == 4
    idx = {p: j for j, p in enumerate(pairs)}
    z1, z2 = fig2.state_index["1"], fig2.state_index["2"]
    b, c = fig2.action_index["b"], fig2.action_index["c"]
    # cycle (2,even) -b-> (1,even) -b-> (2,odd) -c-> (1,odd) -b-> (2,even)
    assert aug.rates[idx[(z2, 0)], b, idx[(z1, 0)]] == 2.0
    assert aug.rates[idx[(z1, 0)], b, idx[(z2, 1)]] == 2.0
    assert aug.rates[idx[(z2, 1)], c, idx[(z1, 1)]] == 1.0
    assert aug.rates[idx[(z1, 1)], b, idx[(z2, 0)]] == 2.0


def test_augment_preserves_exit_rates(fig2, fig2_parity):
    aug, _, pairs = augment(fig2, fig2_parity)
    for j, (z, m) in enumerate(pairs):
        for a in fig2.feasible[z]:
            assert aug.exit_rates[j, a] == fig2.exit_rates[z, a]


def test_augment_memory_free_is_isomorphic(fig2):
    dec = np.zeros((1, 2, 1, 2))
    dec[0, 0, 0, 0] = 1.0
    dec[0, 1, 0, 0] = 1.0
    fm = FiniteMemoryPolicy.build(fig2, ["only"], 0,
                                  np.zeros((1, 2, 2), dtype=np.int64),
                                  TimeGrid(1.0, 1), dec)
    aug, aug_pol, pairs = augment(fig2, fm)
    assert aug.n_states == fig2.n_states
    assert np.array_equal(aug.rates, fig2.rates)


def test_augmented_model_revalidates(fig2, fig2_parity):
    aug, _, _ = augment(fig2, fig2_parity)
    again = validate_model(aug.to_dict())
    assert np.array_equal(again.rates, aug.rates)


def test_fallback_action_lowest_index(fig2):
    assert fig2.actions[fallback_action(fig2, fig2.state_index["1"])] == "b"
    assert fig2.actions[fallback_action(fig2, fig2.state_index["2"])] == "b"
    assert fallback_action(fig2, 1) == fallback_action(fig2, 1)


def test_markov_policy_file_round_trip(fig2):
    grid = TimeGrid(0.5, 4)
    table = np.zeros((4, 2, 2))
    table[:, 0, 0] = 1.0
    table[:, 1, 0] = 0.25
    table[:, 1, 1] = 0.75
    pol = MarkovPolicyGrid.build(fig2, grid, table)
    again = policy_from_dict(fig2, policy_to_dict(fig2, pol))
    assert np.array_equal(again.table, pol.table)
    assert again.grid == pol.grid


def test_finite_memory_policy_file_round_trip(fig2, fig2_parity):
    again = policy_from_dict(fig2, policy_to_dict(fig2, fig2_parity))
    assert np.array_equal(again.update, fig2_parity.update)
    assert np.array_equal(again.decision, fig2_parity.decision)
    assert again.memory_states == fig2_parity.memory_states


def test_policy_weights_must_be_feasible(fig2):
    table = np.zeros((1, 2, 2))
    table[0, 0, 1] = 1.0  # action c is infeasible at state "1"
    table[0, 1, 0] = 1.0
    with pytest.raises(PolicyError):
        MarkovPolicyGrid.build(fig2, TimeGrid(1.0, 1), table)


def test_decision_tables_sum_to_one_everywhere(fig2, fig2_parity):
    assert np.allclose(fig2_parity.decision.sum(axis=3), 1.0)
    pol = MarkovPolicyGrid.uniform(fig2, TimeGrid(0.5, 6))
    assert np.allclose(pol.table.sum(axis=2), 1.0)
