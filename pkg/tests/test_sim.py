import math
from fractions import Fraction

import numpy as np
import pytest

from iphfit.approx import Component, EventPlan, approximate_model
from iphfit.dist import Uniform, empirical_from_samples
from iphfit.iph import iph_slice
from iphfit.model import Gsmp, deterministic, exponential, general
from iphfit.models import alternating_bit, collision_gsmp, collision_probability
from iphfit.phfit import ErlangFitter
from iphfit.sim import (RunConfig, ScriptedDraws, absorption_times, ks_distance, simulate, trace)


def two_state(lam):
    return Gsmp(("a", "b"), (exponential("x", lam),), {"a": {"x"}, "b": set()}, {("a", "x"): {"b": 1.0}},
                {"a": 1.0})


def test_half_life_estimate():
    lam = 2.0
    est = simulate(two_state(lam), RunConfig(100_000, "reach", horizon=math.log(2) / lam, goal=("b",), seed=1))
    assert est.within(0.5)
    assert est.se == pytest.approx(math.sqrt(0.25 / 100_000), rel=0.01)


def test_transient_estimate():
    est = simulate(two_state(1.0), RunConfig(50_000, "transient", horizon=1.0, states=("a",), seed=2))
    assert est.within(math.exp(-1.0))


def test_determinism_and_job_independence():
    m = collision_gsmp()
    cfg = RunConfig(120_000, "reach", goal=("collision",), seed=5)
    a = simulate(m, cfg)
    b = simulate(m, cfg, jobs=2)
    assert a.value == b.value and a.hits == b.hits


def test_collision_estimate():
    est = simulate(collision_gsmp(), RunConfig(200_000, "reach", goal=("collision",), seed=3))
    assert est.within(collision_probability())


def test_tie_order_breaks_exact_ties():
    evs = (deterministic("p", 1.0), deterministic("q", 1.0))
    m = Gsmp(("s", "P", "Q"), evs, {"s": {"p", "q"}, "P": set(), "Q": set()},
             {("s", "p"): {"P": 1.0}, ("s", "q"): {"Q": 1.0}}, {"s": 1.0}, ("q", "p"))
    est = simulate(m, RunConfig(100, "reach", goal=("Q",)))
    assert est.value == 1.0


def test_worked_trace():
    ack = empirical_from_samples(np.random.default_rng(0).gamma(4, 0.05, 1000) + 4.06, 20)
    m = alternating_bit(ack)
    draws = ScriptedDraws({"ack": [12.6], "err": [7.2], "send": [0.8]})
    steps = trace(m, draws, state="sent", remain={"timeout": 10}, max_steps=3, exact=True)
    assert [s.event for s in steps] == ["err", "timeout", "send"]
    assert steps[0].target == "lost" and steps[0].time == Fraction("7.2")
    assert steps[0].remain == {"timeout": Fraction("2.8")}
    assert steps[1].target == "init" and steps[1].time == 10
    assert steps[2].time == Fraction("10.8") and steps[2].remain["timeout"] == 10


def test_trace_discards_inactive_clocks():
    m = alternating_bit(Uniform(4.0, 5.0))
    steps = trace(m, ScriptedDraws({"err": [1.0]}), state="sent", remain={"timeout": 10, "ack": 4.5}, max_steps=1)
    assert set(steps[0].remain) == {"timeout"}


def test_slice_chain_histogram_ks():
    res = iph_slice(ErlangFitter(), 30, 3, Uniform(0, 2))
    times = absorption_times(_chain_gsmp(res.chain), 20_000, seed=4, goal=("0",))
    d = ks_distance(times, lambda x: np.clip(x / 2.0, 0, 1))
    # KS distance is at most half the L1 density distance, plus sampling noise
    assert d <= res.err / 2 + 1.63 / math.sqrt(len(times))


def _chain_gsmp(chain):
    # the chain as a product with a one-event model
    g = Gsmp(("s", "0"), (general("e", Uniform(0, 2)),), {"s": {"e"}, "0": set()}, {("s", "e"): {"0": 1.0}},
             {"s": 1.0})
    return approximate_model(g, {"e": EventPlan()}, components={"e": Component(chain, 0.0, {})})


def test_absorption_histogram_rows():
    est = simulate(two_state(1.0), RunConfig(10_000, "absorption", bins=(0.0, 1.0, 2.0, 50.0), seed=0))
    rows = list(est.histogram_rows())
    assert len(rows) == 3
    assert sum(r[2] for r in rows) == est.hits
    assert rows[0][2] / 10_000 == pytest.approx(1 - math.exp(-1), abs=0.02)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(0)
    with pytest.raises(ValueError):
        RunConfig(10, "transient", states=("a",))
