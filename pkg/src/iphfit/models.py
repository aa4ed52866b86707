"""Example models: the alternating bit protocol and the shared-channel collision model."""

from __future__ import annotations

import math

import numpy as np

from .dist import Density, Empirical, Exponential, Shifted, empirical_from_samples
from .model import Gsmp, deterministic, exponential, general

# synthetic stand-in for the ping response times: min 4.06, mean 4.19, sd 0.314
ACK_MIN = 4.06
ACK_MEAN = 4.19
ACK_SD = 0.314


def ack_samples(rng: np.random.Generator, size: int = 10_000) -> np.ndarray:
    """Shifted lognormal response times matching the reported mean and spread."""
    m = ACK_MEAN - ACK_MIN
    s2 = math.log1p((ACK_SD / m) ** 2)
    mu = math.log(m) - s2 / 2
    return ACK_MIN + rng.lognormal(mu, math.sqrt(s2), size)


def ack_density(seed: int = 0, size: int = 10_000, bins="auto") -> Empirical:
    return empirical_from_samples(ack_samples(np.random.default_rng(seed), size), bins)


def alternating_bit(ack: Density, messages: int = 1, timeout: float = 10.0, send_rate: float = 2.0,
                    err_rate: float = 0.01) -> Gsmp:
    """GSMP of the alternating bit protocol sending ``messages`` messages.

    With one message the states are ``init``, ``sent``, ``lost`` and
    ``done``; otherwise the first three carry the message index.
    """
    if messages < 1:
        raise ValueError("need at least one message")

    def nm(base, i):
        return base if messages == 1 else f"{base}{i}"

    states, active, succ = [], {}, {}
    for i in range(messages):
        ini, sent, lost = nm("init", i), nm("sent", i), nm("lost", i)
        nxt = "done" if i == messages - 1 else nm("init", i + 1)
        states += [ini, sent, lost]
        active[ini] = {"send"}
        active[sent] = {"ack", "err", "timeout"}
        active[lost] = {"timeout"}
        succ[(ini, "send")] = {sent: 1.0}
        succ[(sent, "ack")] = {nxt: 1.0}
        succ[(sent, "err")] = {lost: 1.0}
        succ[(sent, "timeout")] = {ini: 1.0}
        succ[(lost, "timeout")] = {ini: 1.0}
    states.append("done")
    active["done"] = set()
    events = (exponential("send", send_rate), general("ack", ack), exponential("err", err_rate),
              deterministic("timeout", timeout))
    return Gsmp(tuple(states), events, active, succ, {nm("init", 0): 1.0})


# -- collision ----------------------------------------------------------------

COLLISION_DEFAULTS = dict(shift_a=4.1, shift_b=5.51, rate_a=1.0, rate_b=2.0, tx=1.2)


def collision_gsmp(shift_a=4.1, shift_b=5.51, rate_a=1.0, rate_b=2.0, tx=1.2) -> Gsmp:
    """Two stations start transmitting at shifted-exponential times; each
    transmission occupies the channel for ``tx``. Reaching ``collision``
    means one station started while the other was transmitting."""
    start_a = general("start_a", Shifted(Exponential(rate_a), shift_a))
    start_b = general("start_b", Shifted(Exponential(rate_b), shift_b))
    states = ("wait", "a_tx", "b_tx", "a_done", "b_done", "ok", "collision")
    active = {"wait": {"start_a", "start_b"}, "a_tx": {"start_b", "tx"}, "b_tx": {"start_a", "tx"},
              "a_done": {"start_b"}, "b_done": {"start_a"}, "ok": set(), "collision": set()}
    succ = {("wait", "start_a"): {"a_tx": 1.0}, ("wait", "start_b"): {"b_tx": 1.0},
            ("a_tx", "start_b"): {"collision": 1.0}, ("a_tx", "tx"): {"a_done": 1.0},
            ("b_tx", "start_a"): {"collision": 1.0}, ("b_tx", "tx"): {"b_done": 1.0},
            ("a_done", "start_b"): {"ok": 1.0}, ("b_done", "start_a"): {"ok": 1.0}}
    return Gsmp(states, (start_a, start_b, deterministic("tx", tx)), active, succ, {"wait": 1.0})


def collision_race_dctmc(shift_a=4.1, shift_b=5.51, rate_a=1.0, rate_b=2.0, tx=1.2) -> Gsmp:
    """d-CTMC with one deterministic event per state and the same collision
    probability as :func:`collision_gsmp`.

    A collision happens iff ``E_a - E_b`` lies in ``(g - tx, g + tx)`` with
    ``g = shift_b - shift_a`` and ``E_a, E_b`` the exponential parts. Both
    exponentials race from a common origin; by memorylessness the winner's
    lead over the loser is a fresh exponential, timed against deterministic
    windows.
    """
    g = shift_b - shift_a
    lo, hi = g - tx, g + tx
    states = ["race", "ok", "collision"]
    active = {"race": {"xa", "xb"}, "ok": set(), "collision": set()}
    succ = {}
    events = [exponential("xa", rate_a), exponential("xb", rate_b)]

    def branch(tag, ev, a, b):
        # entry state of "collision iff the fresh lead of ev lies in (a, b)"
        if b <= 0:
            return "ok"
        first, window = f"{tag}_first", f"{tag}_window"
        states.append(window)
        events.append(deterministic(f"{tag}_len", b - a))
        active[window] = {ev, f"{tag}_len"}
        succ[(window, ev)] = {"collision": 1.0}
        succ[(window, f"{tag}_len")] = {"ok": 1.0}
        if a <= 0:
            return window
        states.append(first)
        events.append(deterministic(f"{tag}_lo", a))
        active[first] = {ev, f"{tag}_lo"}
        succ[(first, ev)] = {"ok": 1.0}
        succ[(first, f"{tag}_lo")] = {window: 1.0}
        return first

    # b's part fires first: a's lead ~ exp(rate_a) must fall in (lo, hi)
    succ[("race", "xb")] = {branch("b", "xa", max(lo, 0.0), max(hi, 0.0)): 1.0}
    # a's part fires first: b's lead ~ exp(rate_b) must fall in (-hi, -lo)
    succ[("race", "xa")] = {branch("a", "xb", max(-hi, 0.0), max(-lo, 0.0)): 1.0}
    return Gsmp(tuple(states), tuple(events), active, succ, {"race": 1.0})


def collision_probability(shift_a=4.1, shift_b=5.51, rate_a=1.0, rate_b=2.0, tx=1.2) -> float:
    """Closed form of the collision probability for shifted-exponential starts."""
    g = shift_b - shift_a
    lo, hi = g - tx, g + tx
    pa = rate_a / (rate_a + rate_b)  # a's exponential part fires first
    pb = 1.0 - pa
    # b first: a's lead ~ exp(rate_a) must fall in (lo, hi) intersected with (0, inf)
    p_b = math.exp(-rate_a * max(lo, 0.0)) - math.exp(-rate_a * max(hi, 0.0))
    # a first: b's lead ~ exp(rate_b) must fall in (-hi, -lo) intersected with (0, inf)
    p_a = math.exp(-rate_b * max(-hi, 0.0)) - math.exp(-rate_b * max(-lo, 0.0))
    return pb * p_b + pa * p_a
