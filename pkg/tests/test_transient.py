import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from iphfit.model import Gsmp, ModelError, ctmc_generator, deterministic, exponential
from iphfit.models import collision_probability, collision_race_dctmc
from iphfit.transient import (PreconditionError, analyze, ctmc_reach, ctmc_reach_bounded, ctmc_transient,
                              dctmc_reach_bounded_delta, dctmc_reach_subordinated, dctmc_transient_delta,
                              default_delta, embedded_chain, ticks_for)


def two_state(lam):
    return Gsmp(("a", "b"), (exponential("x", lam),), {"a": {"x"}, "b": set()}, {("a", "x"): {"b": 1.0}},
                {"a": 1.0})


def birth_death(n=5):
    states = tuple(f"s{i}" for i in range(n))
    events, active, succ = [], {}, {}
    for i in range(n):
        acts = set()
        if i < n - 1:
            events.append(exponential(f"up{i}", 1.0 + i))
            acts.add(f"up{i}")
            succ[(states[i], f"up{i}")] = {states[i + 1]: 1.0}
        if i > 0:
            events.append(exponential(f"down{i}", 0.5 * i))
            acts.add(f"down{i}")
            succ[(states[i], f"down{i}")] = {states[i - 1]: 1.0}
        active[states[i]] = acts
    return Gsmp(states, tuple(events), active, succ, {"s0": 1.0})


def det_race(lam=0.3, delay=2.0):
    # exponential x races deterministic d
    return Gsmp(("s", "x_won", "d_won"), (exponential("x", lam), deterministic("d", delay)),
                {"s": {"x", "d"}, "x_won": set(), "d_won": set()},
                {("s", "x"): {"x_won": 1.0}, ("s", "d"): {"d_won": 1.0}}, {"s": 1.0})


def test_half_life():
    lam = 1.7
    v = ctmc_transient(two_state(lam), None, math.log(2) / lam)
    assert v[1] == pytest.approx(0.5, abs=1e-12)


def test_time_zero_returns_alpha():
    m = birth_death()
    np.testing.assert_array_equal(ctmc_transient(m, None, 0.0), [1, 0, 0, 0, 0])
    np.testing.assert_array_equal(dctmc_transient_delta(det_race(), None, 0.0, 0.5), [1, 0, 0])


def test_against_expm():
    m = birth_death()
    Q = ctmc_generator(m).toarray()
    for t in (0.1, 1.0, 7.5):
        ref = np.array([1.0, 0, 0, 0, 0]) @ expm(Q * t)
        np.testing.assert_allclose(ctmc_transient(m, None, t), ref, atol=1e-11)


def test_stiff_chain_mass():
    m = two_state(5000.0)
    v = ctmc_transient(m, None, 3.0, 1e-10)
    assert 1 - 1e-10 <= v.sum() <= 1 + 1e-12


def test_all_absorbing_returns_alpha():
    m = Gsmp(("a",), (), {"a": set()}, {}, {"a": 1.0})
    np.testing.assert_array_equal(ctmc_transient(m, None, 5.0), [1.0])


def test_tolerance_range():
    with pytest.raises(ValueError):
        ctmc_transient(two_state(1.0), None, 1.0, eps=0.1)


def test_ctmc_refuses_deterministic_events():
    with pytest.raises(PreconditionError):
        ctmc_transient(det_race(), None, 1.0)


def test_single_deterministic_event_moves_at_delay():
    m = Gsmp(("a", "b"), (deterministic("d", 10.0),), {"a": {"d"}, "b": set()}, {("a", "d"): {"b": 1.0}},
             {"a": 1.0})
    np.testing.assert_allclose(dctmc_transient_delta(m, None, 9.0, 1.0), [1, 0])
    np.testing.assert_allclose(dctmc_transient_delta(m, None, 10.0, 1.0), [0, 1])


def test_delta_race_closed_form():
    lam, T = 0.3, 2.0
    v = dctmc_transient_delta(det_race(lam, T), None, 3.0, 0.5)
    assert v[1] == pytest.approx(1 - math.exp(-lam * T), abs=1e-9)
    assert v[2] == pytest.approx(math.exp(-lam * T), abs=1e-9)


def test_non_multiple_time_warns(caplog):
    with caplog.at_level(logging.WARNING):
        dctmc_transient_delta(det_race(), None, 1.3, 0.5)
    assert "not a multiple" in caplog.text


def test_default_delta_gcd():
    m = Gsmp(("a",), (deterministic("p", 4.1), deterministic("q", 1.2)), {"a": set()}, {}, {"a": 1.0})
    assert default_delta(m) == pytest.approx(0.1)
    assert ticks_for(4.1, 0.1) == 41
    assert ticks_for(0.05, 0.1) == 1


def test_default_delta_needs_short_decimals():
    m = Gsmp(("a",), (deterministic("p", math.pi),), {"a": set()}, {}, {"a": 1.0})
    with pytest.raises(PreconditionError):
        default_delta(m)


def test_subordinated_race_closed_form():
    lam, T = 0.3, 2.0
    assert dctmc_reach_subordinated(det_race(lam, T), ["x_won"]) == pytest.approx(1 - math.exp(-lam * T), abs=1e-10)


def test_subordinated_on_ctmc_equals_linear_system():
    m = birth_death()
    # upward drift: eventually reaching s4 is certain
    assert ctmc_reach(m, ["s4"]) == pytest.approx(1.0, abs=1e-10)
    race = Gsmp(("s", "a", "b"), (exponential("x", 1.0), exponential("y", 3.0)),
                {"s": {"x", "y"}, "a": set(), "b": set()}, {("s", "x"): {"a": 1.0}, ("s", "y"): {"b": 1.0}},
                {"s": 1.0})
    assert dctmc_reach_subordinated(race, ["a"]) == pytest.approx(0.25, abs=1e-12)


def test_embedded_kernel_rows_sum_to_one():
    ch = embedded_chain(collision_race_dctmc(), ["collision"])
    np.testing.assert_allclose(ch.row_sums(), 1.0, atol=1e-10)


def test_subordinated_refuses_two_deterministic_events():
    m = Gsmp(("s", "a", "b"), (deterministic("p", 1.0), deterministic("q", 2.0)),
             {"s": {"p", "q"}, "a": set(), "b": set()}, {("s", "p"): {"a": 1.0}, ("s", "q"): {"b": 1.0}},
             {"s": 1.0})
    with pytest.raises(PreconditionError, match="delta"):
        dctmc_reach_subordinated(m, ["a"])


@pytest.mark.parametrize("params", [{}, {"shift_b": 4.5}, {"shift_b": 4.1, "rate_b": 1.0}, {"tx": 0.3}])
def test_collision_race_matches_closed_form(params):
    assert dctmc_reach_subordinated(collision_race_dctmc(**params), ["collision"]) == \
        pytest.approx(collision_probability(**params), abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 10.0))
def test_subordinated_time_unit_invariance(c):
    base = collision_race_dctmc()
    scaled = collision_race_dctmc(shift_a=4.1 * c, shift_b=5.51 * c, rate_a=1.0 / c, rate_b=2.0 / c, tx=1.2 * c)
    assert dctmc_reach_subordinated(scaled, ["collision"]) == \
        pytest.approx(dctmc_reach_subordinated(base, ["collision"]), abs=1e-9)


def test_delta_approaches_subordinated():
    m = det_race(0.7, 1.3)
    exact = dctmc_reach_subordinated(m, ["x_won"])
    bounded = dctmc_reach_bounded_delta(m, ["x_won"], 2.0, 0.1)
    assert bounded == pytest.approx(exact, abs=1e-9)


def test_analyze_dispatch_and_preconditions():
    m = det_race()
    assert analyze(m, {"kind": "reach", "goal": ["x_won"]}).engine == "subordinated"
    assert analyze(two_state(1.0), {"kind": "transient", "t": 1.0, "states": ["b"]}).engine == "uniformization"
    with pytest.raises(PreconditionError, match="use delta"):
        analyze(m, {"kind": "reach", "goal": ["x_won"], "t": 1.0}, engine="subordinated")
    with pytest.raises(PreconditionError):
        analyze(m, {"kind": "transient", "t": 1.0, "states": ["s"]}, engine="uniformization")


def test_bounded_ctmc_reach():
    assert ctmc_reach_bounded(two_state(2.0), ["b"], 0.5) == pytest.approx(1 - math.exp(-1.0), abs=1e-12)


def test_unknown_goal():
    with pytest.raises(ModelError):
        ctmc_reach_bounded(two_state(2.0), ["zz"], 0.5)


def test_delta_halving_differences_shrink():
    from iphfit.approx import EventPlan, approximate_model
    from iphfit.models import ack_density, alternating_bit

    m = approximate_model(alternating_bit(ack_density()), {"ack": EventPlan("shift", "erlang", 3)})
    done = [s for s in m.states if m.annotations[s]["base"] == "done"]
    vals = [dctmc_reach_bounded_delta(m, done, 12.0, d) for d in (0.1, 0.05, 0.025, 0.0125)]
    diffs = [abs(b - a) for a, b in zip(vals, vals[1:])]
    assert diffs[0] > diffs[1] > diffs[2]
