import numpy as np
import pytest

from iphfit.approx import ApproxError, EventPlan, approximate_model, build_component, constant_event_rewrite
from iphfit.dist import Exponential, Shifted, Uniform, empirical_from_samples
from iphfit.model import CTMC, DCTMC, Gsmp, classify, exponential, general, validate
from iphfit.models import alternating_bit
from iphfit.transient import ctmc_reach


def race(density):
    return Gsmp(("s", "won", "lost"), (general("g", density), exponential("x", 1.0)),
                {"s": {"g", "x"}, "won": set(), "lost": set()},
                {("s", "g"): {"won": 1.0}, ("s", "x"): {"lost": 1.0}}, {"s": 1.0})


def test_exponential_component_gives_exact_race():
    m = race(Exponential(2.0))
    out = approximate_model(m, {"g": EventPlan("plain", "erlang", 1)})
    assert classify(out) == CTMC
    won = [s for s in out.states if out.annotations[s]["base"] == "won"]
    assert ctmc_reach(out, won) == pytest.approx(2.0 / 3.0, abs=1e-9)


def test_shift_component_gives_dctmc():
    m = race(Shifted(Exponential(1.0), 0.5))
    out = approximate_model(m, {"g": EventPlan("shift", "erlang", 2)})
    assert classify(out) == DCTMC
    assert validate(out) == []
    assert out.annotations["_meta"]["components"]["g"]["err"] < 1e-3


def test_product_of_alternating_bit_with_two_phase_components():
    ack = empirical_from_samples(np.random.default_rng(0).gamma(4, 0.05, 3000) + 4.06, 40)
    m = alternating_bit(ack)
    plan = {"ack": EventPlan("plain", "erlang", 2), "timeout": EventPlan("plain", "erlang", 2)}
    out = approximate_model(m, plan)
    assert classify(out) == CTMC
    bases = {out.annotations[s]["base"] for s in out.states}
    assert bases == set(m.states)
    assert out.annotations["_meta"]["components"]["timeout"]["err"] == 2.0


def test_plan_must_cover_general_events():
    with pytest.raises(ApproxError, match="not covered"):
        approximate_model(race(Uniform(0, 1)), {})
    with pytest.raises(ApproxError, match="unknown event"):
        approximate_model(race(Uniform(0, 1)), {"g": EventPlan(), "zz": EventPlan()})
    with pytest.raises(ApproxError, match="exponential"):
        approximate_model(race(Uniform(0, 1)), {"g": EventPlan(), "x": EventPlan()})


def test_state_cap():
    with pytest.raises(ApproxError, match="state cap"):
        approximate_model(race(Uniform(0, 1)), {"g": EventPlan("plain", "erlang", 6)}, cap=3)


def test_unpruned_product_is_larger():
    m = race(Uniform(0, 1))
    plan = {"g": EventPlan("slice(2)", "erlang", 4)}
    a = approximate_model(m, plan)
    b = approximate_model(m, plan, prune=False)
    assert len(b.states) >= len(a.states)


def test_constant_rewrite():
    m = race(empirical_from_samples([3.0] * 10))
    out = constant_event_rewrite(m)
    assert out.event_map["g"].is_deterministic
    assert out.event_map["g"].delay == pytest.approx(3.0)


def test_deterministic_component_matches_mean():
    from iphfit.model import deterministic

    comp = build_component(deterministic("t", 10.0), EventPlan("plain", "erlang", 4))
    assert comp.chain.ph.mean == pytest.approx(10.0)
