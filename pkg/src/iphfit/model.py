"""GSMP, CTMC and d-CTMC data model.

A :class:`Gsmp` is the general container. :class:`PhChain` and
:class:`DctmcChain` are the compact phase representations produced by the
fitters and by the interval phase-type constructions; both convert to a
:class:`Gsmp` for simulation and product construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import unif
from .dist import Density

EXPONENTIAL = "exponential"
DETERMINISTIC = "deterministic"
GENERAL = "general"

CTMC = "CTMC"
DCTMC = "d-CTMC"
GENERAL_GSMP = "general-GSMP"

NORM_TOL = 1e-12


class ModelError(ValueError):
    """Structural problem with a model."""


class TopologyError(ModelError):
    """A d-CTMC chain whose deterministic events do not form a time grid."""


@dataclass(frozen=True)
class Event:
    name: str
    kind: str
    rate: float | None = None
    delay: float | None = None
    density: Density | None = None

    @property
    def is_exponential(self):
        return self.kind == EXPONENTIAL

    @property
    def is_deterministic(self):
        return self.kind == DETERMINISTIC


def exponential(name: str, rate: float) -> Event:
    return Event(name, EXPONENTIAL, rate=float(rate))


def deterministic(name: str, delay: float) -> Event:
    return Event(name, DETERMINISTIC, delay=float(delay))


def general(name: str, density: Density) -> Event:
    return Event(name, GENERAL, density=density)


@dataclass(frozen=True)
class Gsmp:
    """Generalized semi-Markov process.

    ``events`` are listed in tie order unless ``tie_order`` is given
    explicitly. ``succ[(s, e)]`` maps successor states to probabilities and
    must be present exactly for the events active in ``s``.
    """

    states: tuple
    events: tuple
    active: Mapping[str, frozenset]
    succ: Mapping[tuple, Mapping[str, float]]
    init: Mapping[str, float]
    tie_order: tuple | None = None
    annotations: Mapping[str, dict] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "active", {s: frozenset(v) for s, v in self.active.items()})
        if self.tie_order is None:
            object.__setattr__(self, "tie_order", tuple(e.name for e in self.events))
        else:
            object.__setattr__(self, "tie_order", tuple(self.tie_order))

    @property
    def event_map(self) -> dict[str, Event]:
        return {e.name: e for e in self.events}

    def active_in(self, s) -> frozenset:
        return self.active.get(s, frozenset())

    def tie_rank(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.tie_order)}

    def deterministic_events(self):
        return [e for e in self.events if e.is_deterministic]


def validate(m: Gsmp) -> list[str]:
    """List of structural violations; empty means the model is valid."""
    problems = []
    states = set(m.states)
    if len(states) != len(m.states):
        problems.append("duplicate state names")
    names = [e.name for e in m.events]
    if len(set(names)) != len(names):
        problems.append("duplicate event names")
    emap = m.event_map
    for e in m.events:
        if e.kind == EXPONENTIAL:
            if e.rate is None or not e.rate > 0 or not math.isfinite(e.rate):
                problems.append(f"nonpositive rate: event {e.name}")
        elif e.kind == DETERMINISTIC:
            if e.delay is None or not e.delay > 0 or not math.isfinite(e.delay):
                problems.append(f"nonpositive delay: event {e.name}")
        elif e.kind == GENERAL:
            if e.density is None:
                problems.append(f"missing density: event {e.name}")
        else:
            problems.append(f"unknown event kind {e.kind!r}: event {e.name}")
    for s, evs in m.active.items():
        if s not in states:
            problems.append(f"activation for unknown state {s}")
        for e in evs:
            if e not in emap:
                problems.append(f"unknown event {e} active in {s}")
            elif (s, e) not in m.succ:
                problems.append(f"missing successor for ({s}, {e})")
    for (s, e), dist in m.succ.items():
        if e not in m.active_in(s):
            problems.append(f"orphan successor entry ({s}, {e}): event not active")
        problems += _check_distribution(dist, states, f"successor of ({s}, {e})")
    problems += _check_distribution(m.init, states, "initial distribution")
    order = list(m.tie_order)
    if len(set(order)) != len(order):
        problems.append("tie order repeats an event")
    missing = set(names) - set(order)
    if missing:
        problems.append(f"missing tie order element(s): {sorted(missing)}")
    unknown = set(order) - set(names)
    if unknown:
        problems.append(f"tie order names unknown event(s): {sorted(unknown)}")
    return problems


def _check_distribution(dist, states, what):
    out = []
    for s, p in dist.items():
        if s not in states:
            out.append(f"{what} references unknown state {s}")
        if p < 0:
            out.append(f"{what} has negative probability")
    total = sum(dist.values())
    if abs(total - 1.0) > NORM_TOL:
        out.append(f"unnormalized {what}: sums to {total}")
    return out


def check(m: Gsmp) -> Gsmp:
    problems = validate(m)
    if problems:
        raise ModelError("; ".join(problems))
    return m


def classify(m: Gsmp) -> str:
    kinds = {e.kind for e in m.events}
    if kinds <= {EXPONENTIAL}:
        return CTMC
    if kinds <= {EXPONENTIAL, DETERMINISTIC}:
        return DCTMC
    return GENERAL_GSMP


def ctmc_generator(m: Gsmp, include_deterministic: bool = False):
    """Sparse generator over ``m.states`` built from the exponential events.

    Deterministic and general events are ignored; the caller decides whether
    that is meaningful.
    """
    import scipy.sparse as sp

    idx = {s: i for i, s in enumerate(m.states)}
    emap = m.event_map
    rows, cols, vals = [], [], []
    for s in m.states:
        i = idx[s]
        for e in m.active_in(s):
            ev = emap[e]
            if not ev.is_exponential:
                continue
            for t, p in m.succ[(s, e)].items():
                j = idx[t]
                if j == i or p == 0:
                    continue
                rows += [i, i]
                cols += [j, i]
                vals += [ev.rate * p, -ev.rate * p]
    n = len(m.states)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


# -- phase chains -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhChain:
    """Phase-type chain over phases ``0..n`` with 0 absorbing.

    ``rates[i]`` is the exponential exit rate of phase ``i``; ``succ[i]`` the
    jump distribution over ``0..n`` when it fires. ``init`` is the initial
    distribution over ``0..n`` and carries no mass on phase 0.
    ``closed_form`` optionally holds an equivalent analytic density used as a
    fast path for evaluation; it never changes results beyond round-off.
    """

    rates: np.ndarray
    succ: np.ndarray
    init: np.ndarray
    closed_form: Density | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        succ = np.asarray(self.succ, dtype=float)
        init = np.asarray(self.init, dtype=float)
        n1 = len(rates)
        if succ.shape != (n1, n1) or init.shape != (n1,):
            raise ModelError("rates, succ and init dimensions disagree")
        for arr in (rates, succ, init):
            arr.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "succ", succ)
        object.__setattr__(self, "init", init)

    @property
    def n(self) -> int:
        return len(self.rates) - 1

    def problems(self, extra_edges=()) -> list[str]:
        out = []
        if self.rates[0] != 0 or np.any(self.succ[0] != 0):
            out.append("phase 0 must be absorbing")
        if np.any(self.rates < 0):
            out.append("negative rate")
        if self.init[0] != 0:
            out.append("initial mass on absorbing phase 0")
        if abs(self.init.sum() - 1) > 1e-9 or np.any(self.init < 0):
            out.append("unnormalized initial distribution")
        for i in range(1, self.n + 1):
            if self.rates[i] > 0 and abs(self.succ[i].sum() - 1) > 1e-9:
                out.append(f"unnormalized successor of phase {i}")
            if self.succ[i, i] != 0:
                out.append(f"self loop on phase {i}")
        # absorption reachable from every initially occupied phase
        adj = {i: set(np.flatnonzero(self.succ[i] > 0)) if self.rates[i] > 0 else set()
               for i in range(self.n + 1)}
        for a, b in extra_edges:
            adj[a].add(b)
        can_reach = {0}
        changed = True
        while changed:
            changed = False
            for i, nxt in adj.items():
                if i not in can_reach and nxt & can_reach:
                    can_reach.add(i)
                    changed = True
        for i in np.flatnonzero(self.init > 0):
            if int(i) not in can_reach:
                out.append(f"phase 0 unreachable from initial phase {i}")
        return out

    def subgenerator(self) -> np.ndarray:
        """Transient block ``T`` over phases 1..n."""
        n = self.n
        T = self.rates[1:, None] * self.succ[1:, 1:]
        T = T - np.diag(self.rates[1:])
        return T

    def exit_rates(self) -> np.ndarray:
        return self.rates[1:] * self.succ[1:, 0]

    @property
    def mean(self) -> float:
        T = self.subgenerator()
        return float(self.init[1:] @ np.linalg.solve(-T, np.ones(self.n)))

    def pdf(self, t):
        if self.closed_form is not None:
            return self.closed_form.pdf(t)
        return reach_time_density(self, t)

    def sf(self, t):
        if self.closed_form is not None:
            return self.closed_form.sf(t)
        return _segment_eval(self.init[1:], self.subgenerator(), np.ones(self.n), t)

    def cdf(self, t):
        return 1.0 - self.sf(t) if np.ndim(t) == 0 else 1.0 - np.asarray(self.sf(t))

    def breakpoints(self):
        return [0.0]

    def to_gsmp(self, prefix: str = "") -> Gsmp:
        states = tuple(f"{prefix}{i}" for i in range(self.n + 1))
        events, active, succ = [], {states[0]: frozenset()}, {}
        for i in range(1, self.n + 1):
            acts = set()
            if self.rates[i] > 0:
                name = f"{prefix}exit{i}"
                events.append(exponential(name, self.rates[i]))
                acts.add(name)
                succ[(states[i], name)] = {states[j]: float(p) for j, p in enumerate(self.succ[i]) if p > 0}
            active[states[i]] = frozenset(acts)
        init = {states[j]: float(p) for j, p in enumerate(self.init) if p > 0}
        return Gsmp(states, tuple(events), active, succ, init)


def erlang_chain(phases: int, rate: float, start: int | None = None) -> PhChain:
    """Series chain with a common rate; phase ``k`` means ``k`` stages left.

    The chain starts in phase ``start`` (default: all ``phases`` stages).
    """
    from .dist import Erlang

    n = phases
    start = n if start is None else start
    if not 1 <= start <= n:
        raise ModelError(f"start phase {start} outside 1..{n}")
    rates = np.zeros(n + 1)
    rates[1:] = rate
    succ = np.zeros((n + 1, n + 1))
    for i in range(1, n + 1):
        succ[i, i - 1] = 1.0
    init = np.zeros(n + 1)
    init[start] = 1.0
    return PhChain(rates, succ, init, closed_form=Erlang(start, rate))


def hyper_erlang_chain(branches, total_phases: int | None = None) -> PhChain:
    """Parallel Erlang branches ``(weight, phases, rate)`` sharing phase 0.

    When ``total_phases`` exceeds the phases used, the spare phases are added
    as unreachable idle phases so the chain keeps the requested size.
    """
    from .dist import HyperErlang

    used = sum(k for _, k, _ in branches)
    n = used if total_phases is None else total_phases
    if n < used:
        raise ModelError(f"branches use {used} phases, more than {n}")
    rates = np.zeros(n + 1)
    succ = np.zeros((n + 1, n + 1))
    init = np.zeros(n + 1)
    pos = 1
    for w, k, r in branches:
        # phases pos..pos+k-1, entry at pos, last one exits to 0
        for j in range(k):
            p = pos + j
            rates[p] = r
            succ[p, p + 1 if j < k - 1 else 0] = 1.0
        init[pos] += w
        pos += k
    for p in range(pos, n + 1):
        # idle phase: immediately absorbing if ever entered
        rates[p] = 1.0
        succ[p, 0] = 1.0
    init /= init.sum()
    kept = tuple(b for b in branches if b[0] > 0)
    return PhChain(rates, succ, init, closed_form=HyperErlang(kept))


def _segment_eval(v, T, vec, t, eps=1e-13):
    """``v exp(T t) vec`` for scalar or array ``t`` via uniformisation."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros(t_arr.shape)
    pos = t_arr >= 0
    if not np.any(pos) or len(v) == 0:
        return float(out[0]) if np.ndim(t) == 0 else out
    lam = float(np.max(-np.diag(T))) if len(T) else 0.0
    if lam == 0:
        out[pos] = float(np.dot(v, vec))
    else:
        P = np.eye(len(T)) + T / lam
        K = unif.terms_needed(lam * float(t_arr[pos].max()), eps)
        coeffs = unif.series(v, P, vec, K)
        out[pos] = unif.poisson_mix(coeffs, lam * t_arr[pos])
    return float(out[0]) if np.ndim(t) == 0 else out


def reach_time_density(c: PhChain, t):
    """Density of the absorption time of ``c`` at ``t`` (uniformisation)."""
    return _segment_eval(c.init[1:], c.subgenerator(), c.exit_rates(), t)


@dataclass(frozen=True)
class DetEvent:
    """Deterministic event of a d-CTMC chain, jumping to ``target`` from any active phase."""

    name: str
    delay: float
    active: frozenset
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "active", frozenset(int(i) for i in self.active))
        t = np.asarray(self.target, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "target", t)


@dataclass(frozen=True)
class Segment:
    start: float
    length: float  # math.inf for the last segment
    mass: float
    entry: np.ndarray  # normalised distribution over 0..n
    phases: tuple
    event: str | None


@dataclass(frozen=True, eq=False)
class DctmcChain:
    """Phase chain extended with deterministic events.

    ``segment_forms`` optionally gives, per segment, an analytic density equal
    to the absorption density of the phases entered at the segment start; it
    is a fast path only.
    """

    ph: PhChain
    det_events: tuple = ()
    segment_forms: tuple | None = None

    @property
    def n(self) -> int:
        return self.ph.n

    def problems(self) -> list[str]:
        extra = []
        owner: dict[int, str] = {}
        out = []
        for d in self.det_events:
            if not d.delay > 0:
                out.append(f"nonpositive delay: {d.name}")
            if len(d.target) != self.n + 1 or abs(d.target.sum() - 1) > 1e-9:
                out.append(f"bad target distribution for {d.name}")
            for i in d.active:
                if i in owner:
                    out.append(f"phase {i} activates both {owner[i]} and {d.name}")
                owner[i] = d.name
                extra += [(i, int(j)) for j in np.flatnonzero(d.target > 0)]
        return self.ph.problems(extra_edges=extra) + out

    def segments(self, max_segments: int = 10_000) -> list[Segment]:
        """Decompose into the deterministic time grid.

        Raises :class:`TopologyError` unless every segment's reachable phases
        all activate the same deterministic event (or none, for the last).
        """
        ph = self.ph
        out = []
        v = ph.init.copy()
        start, mass = 0.0, 1.0
        by_phase = {i: d for d in self.det_events for i in d.active}
        T_full = ph.subgenerator()
        for _ in range(max_segments):
            reach = _closure(ph, set(int(i) for i in np.flatnonzero(v > 0)))
            evs = {by_phase[i].name for i in reach if i in by_phase}
            if not evs:
                out.append(Segment(start, math.inf, mass, v, tuple(sorted(reach)), None))
                return out
            if len(evs) > 1:
                raise TopologyError(f"unsupported topology: events {sorted(evs)} share a segment")
            d = by_phase[next(i for i in reach if i in by_phase)]
            if not reach <= d.active:
                raise TopologyError(f"unsupported topology: {d.name} not active in all of {sorted(reach)}")
            if d.target[0] > 0:
                raise TopologyError(f"unsupported topology: {d.name} jumps into the absorbing phase")
            out.append(Segment(start, d.delay, mass, v, tuple(sorted(reach)), d.name))
            left = unif.evolve(v[1:], T_full, d.delay, eps=1e-14)
            surv = float(np.clip(left.sum(), 0.0, 1.0))
            mass *= surv
            start += d.delay
            v = d.target.copy()
            if mass <= 0:
                out.append(Segment(start, math.inf, 0.0, v, (), None))
                return out
        raise TopologyError("unsupported topology: deterministic events cycle without end")

    def _eval(self, t, which):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros(t_arr.shape)
        segs = self._segs
        T = self.ph.subgenerator()
        vec = self.ph.exit_rates() if which == "pdf" else np.ones(self.n)
        if which == "sf":
            out[t_arr < 0] = 1.0
        for k, seg in enumerate(segs):
            sel = (t_arr >= seg.start) & (t_arr < seg.start + seg.length)
            if not np.any(sel) or seg.mass == 0:
                continue
            tau = t_arr[sel] - seg.start
            form = self.segment_forms[k] if self.segment_forms else None
            if form is not None:
                vals = form.pdf(tau) if which == "pdf" else form.sf(tau)
            else:
                vals = _segment_eval(seg.entry[1:], T, vec, tau)
            out[sel] = seg.mass * np.asarray(vals)
        return float(out[0]) if np.ndim(t) == 0 else out

    @property
    def _segs(self):
        cached = self.__dict__.get("_seg_cache")
        if cached is None:
            cached = self.segments()
            object.__setattr__(self, "_seg_cache", cached)
        return cached

    def pdf(self, t):
        return self._eval(t, "pdf")

    def sf(self, t):
        return self._eval(t, "sf")

    def cdf(self, t):
        s = self.sf(t)
        return 1.0 - s if np.ndim(t) == 0 else 1.0 - np.asarray(s)

    def breakpoints(self):
        return [s.start for s in self._segs]

    def boundaries(self) -> list[float]:
        return [s.start for s in self._segs[1:]]

    def to_gsmp(self, prefix: str = "") -> Gsmp:
        base = self.ph.to_gsmp(prefix)
        states = base.states
        events = list(base.events)
        active = {s: set(a) for s, a in base.active.items()}
        succ = dict(base.succ)
        for d in self.det_events:
            name = f"{prefix}{d.name}"
            events.append(deterministic(name, d.delay))
            tgt = {states[j]: float(p) for j, p in enumerate(d.target) if p > 0}
            for i in d.active:
                active[states[i]].add(name)
                succ[(states[i], name)] = tgt
        return Gsmp(states, tuple(events), active, succ, base.init)


def _closure(ph: PhChain, start: set) -> set:
    seen = set(i for i in start if i != 0)
    stack = list(seen)
    while stack:
        i = stack.pop()
        if ph.rates[i] <= 0:
            continue
        for j in np.flatnonzero(ph.succ[i] > 0):
            j = int(j)
            if j != 0 and j not in seen:
                seen.add(j)
                stack.append(j)
    return seen


def dctmc_reach_time_density(d: DctmcChain, t):
    """Absorption-time density of a segment-structured d-CTMC chain."""
    return d._eval(t, "pdf")


def dctmc_from_ph(ph: PhChain) -> DctmcChain:
    return DctmcChain(ph, (), (ph.closed_form,) if ph.closed_form is not None else None)
