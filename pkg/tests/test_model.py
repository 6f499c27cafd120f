import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctjmdp import (
    ModelError,
    PolicyError,
    RelaxedAction,
    extend_with_initial_distribution,
    max_exit_rate,
    mixed_exit_rate,
    mixed_rate,
    validate_model,
)


def raw_fig2():
    return {
        "states": ["1", "2"],
        "actions": ["b", "c"],
        "feasible": {"1": ["b"], "2": ["b", "c"]},
        "rates": [
            {"state": "1", "action": "b", "row": {"1": -2.0, "2": 2.0}},
            {"state": "2", "action": "b", "row": {"2": -2.0, "1": 2.0}},
            {"state": "2", "action": "c", "row": {"2": -1.0, "1": 1.0}},
        ],
        "jump_costs": {"2|1": 1.0},
    }


def test_figure_two_validates(fig2):
    assert fig2.states == ("1", "2")
    assert fig2.exit_rates[fig2.state_index["2"], fig2.action_index["b"]] == 2.0
    assert fig2.exit_rates[fig2.state_index["2"], fig2.action_index["c"]] == 1.0


def test_absorbing_state_is_valid():
    m = validate_model({
        "states": ["x"], "actions": ["a"], "feasible": {"x": ["a"]},
        "rates": [],
    })
    assert m.is_absorbing(0)
    assert max_exit_rate(m, 0) == 0.0


def test_row_sum_violation_rejected():
    raw = raw_fig2()
    raw["rates"][0]["row"] = {"1": -1.5, "2": 2.0}
    with pytest.raises(ModelError) as e:
        validate_model(raw)
    assert e.value.code == "ROW_SUM"


def test_negative_off_diagonal_rejected():
    raw = raw_fig2()
    raw["rates"][0]["row"] = {"1": 2.0, "2": -2.0}
    with pytest.raises(ModelError) as e:
        validate_model(raw)
    assert e.value.code == "NEG_RATE"


def test_empty_feasible_set_rejected():
    raw = raw_fig2()
    raw["feasible"]["1"] = []
    with pytest.raises(ModelError) as e:
        validate_model(raw)
    assert e.value.code == "EMPTY_ACTIONS"


def test_unknown_identifier_rejected():
    raw = raw_fig2()
    raw["rates"][0]["row"]["ghost"] = 1.0
    with pytest.raises(ModelError) as e:
        validate_model(raw)
    assert e.value.code == "UNKNOWN_ID"


def test_row_sum_noise_renormalized():
    raw = raw_fig2()
    raw["rates"][0]["row"] = {"1": -2.0 + 3e-10, "2": 2.0}
    m = validate_model(raw)
    assert m.rates[0, 0].sum() == 0.0


def test_round_trip_through_json(fig2):
    again = validate_model(json.loads(fig2.to_json()))
    assert again.states == fig2.states
    assert np.array_equal(again.rates, fig2.rates)
    assert np.array_equal(again.jump_costs, fig2.jump_costs)


def test_mixed_rate_figure_two(fig2):
    z2, z1 = fig2.state_index["2"], fig2.state_index["1"]
    assert mixed_rate(fig2, z2, RelaxedAction({"b": 1.0}), [z1]) == pytest.approx(2.0)
    assert mixed_rate(fig2, z2, RelaxedAction({"b": 0.5, "c": 0.5}), [z1]) \
        == pytest.approx(1.5)
    # full state space always nets to zero
    assert mixed_rate(fig2, z2, RelaxedAction({"b": 0.3, "c": 0.7}),
                      range(fig2.n_states)) == pytest.approx(0.0, abs=1e-12)


def test_mixed_exit_rate_figure_two(fig2):
    z2 = fig2.state_index["2"]
    assert mixed_exit_rate(fig2, z2, RelaxedAction({"c": 1.0})) == pytest.approx(1.0)
    assert mixed_exit_rate(fig2, z2, RelaxedAction({"b": 0.25, "c": 0.75})) \
        == pytest.approx(1.25)


def test_bad_support_rejected(fig2):
    z1 = fig2.state_index["1"]
    with pytest.raises(PolicyError) as e:
        mixed_rate(fig2, z1, RelaxedAction({"c": 1.0}), [0])
    assert e.value.code == "BAD_SUPPORT"


def test_max_exit_rate(fig2):
    assert max_exit_rate(fig2, fig2.state_index["1"]) == 2.0
    assert max_exit_rate(fig2, fig2.state_index["2"]) == 2.0


@settings(max_examples=50, deadline=None)
@given(lam=st.floats(0.0, 1.0), p1=st.floats(0.0, 1.0), p2=st.floats(0.0, 1.0))
def test_mixed_rate_linear_in_action(lam, p1, p2):
    model = validate_model(raw_fig2())
    z2 = model.state_index["2"]
    a1 = np.array([p1, 1.0 - p1])
    a2 = np.array([p2, 1.0 - p2])
    mix = lam * a1 + (1.0 - lam) * a2
    lhs = mixed_rate(model, z2, mix, [0])
    rhs = lam * mixed_rate(model, z2, a1, [0]) + (1 - lam) * mixed_rate(model, z2, a2, [0])
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert mixed_exit_rate(model, z2, mix) <= max_exit_rate(model, z2) + 1e-12


def test_extension_embeds_original(fig2):
    ext, entry = extend_with_initial_distribution(fig2, [0.5, 0.5])
    e = ext.state_index[entry]
    enter = ext.action_index["__enter__"]
    assert ext.rates[e, enter, ext.state_index["1"]] == 0.5
    assert ext.rates[e, enter, ext.state_index["2"]] == 0.5
    assert ext.rates[e, enter, e] == -1.0
    assert ext.exit_rates[e, enter] == pytest.approx(1.0)
    # original rates embedded bit for bit
    for s in fig2.states:
        for a in fig2.feasible[fig2.state_index[s]]:
            for y in fig2.states:
                assert ext.rates[ext.state_index[s], a, ext.state_index[y]] \
                    == fig2.rates[fig2.state_index[s], a, fig2.state_index[y]]


def test_extension_point_mass(fig2):
    ext, entry = extend_with_initial_distribution(fig2, [1.0, 0.0])
    e = ext.state_index[entry]
    assert ext.rates[e, ext.action_index["__enter__"], 0] == 1.0


def test_extension_rejects_bad_distribution(fig2):
    with pytest.raises(ModelError) as e:
        extend_with_initial_distribution(fig2, [0.5, 0.4])
    assert e.value.code == "BAD_DIST"


def test_relaxed_action_must_normalize():
    with pytest.raises(ModelError):
        RelaxedAction({"b": 0.5, "c": 0.6})
    with pytest.raises(ModelError):
        RelaxedAction({"b": -0.1, "c": 1.1})
