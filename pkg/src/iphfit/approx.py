"""Whole-model approximation of a GSMP by a CTMC or d-CTMC.

Each general (or explicitly planned deterministic) event is replaced by a
phase component. Product states pair a base state with the phase of every
approximated event active there. Component deterministic events carry a
generation bit so that re-initialising a component always restarts its
deterministic clocks, even when the new state would otherwise retain them.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dist import Empirical
from .iph import EXPONENTIAL_MODE, parse_method, run_method
from .model import (DctmcChain, Event, Gsmp, ModelError, check, classify, deterministic,
                    dctmc_from_ph, erlang_chain, exponential)
from .phfit import get_fitter

log = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 1_000_000
ATOM_TOL = 1e-6
METHODS = ("plain", "shift", "slice", "shift+slice", "constant")


class ApproxError(ModelError):
    pass


@dataclass(frozen=True)
class EventPlan:
    """How to replace one event. ``method`` is plain, shift, slice(p),
    shift+slice(p) or constant (keep as deterministic if constant)."""

    method: str = "plain"
    fitter: str = "hyper-erlang"
    n: int = 2
    mode: str = EXPONENTIAL_MODE
    options: dict = field(default_factory=dict)

    @property
    def kind(self):
        return "constant" if self.method == "constant" else parse_method(self.method)[0]

    @property
    def p(self):
        return None if self.method == "constant" else parse_method(self.method)[1]


@dataclass
class Component:
    chain: DctmcChain
    err: float
    report: dict


def _check_plan(m: Gsmp, plan):
    emap = m.event_map
    unknown = set(plan) - set(emap)
    if unknown:
        raise ApproxError(f"plan mismatch: unknown event(s) {sorted(unknown)}")
    missing = [e.name for e in m.events if e.kind == "general" and e.name not in plan]
    if missing:
        raise ApproxError(f"plan mismatch: general event(s) {missing} not covered")
    for name, ep in plan.items():
        if ep.kind not in METHODS:
            raise ApproxError(f"unknown method {ep.method!r} for {name}")
        if emap[name].is_exponential:
            raise ApproxError(f"plan mismatch: {name} is exponential and needs no approximation")


def build_component(ev: Event, ep: EventPlan) -> Component:
    """Phase component replacing ``ev`` according to ``ep``."""
    if ev.is_deterministic:
        if ep.kind != "plain":
            raise ApproxError(f"deterministic event {ev.name} only supports the plain method")
        # the Erlang chain matching the mean with least variance
        ch = dctmc_from_ph(erlang_chain(ep.n, ep.n / ev.delay))
        # a point mass against any density is at distance 2
        return Component(ch, 2.0, {"event": ev.name, "method": "plain", "phases": ep.n, "err": 2.0,
                                   "note": "deterministic delay replaced by a mean-matching Erlang"})
    fit = get_fitter(ep.fitter, **ep.options)
    res = run_method(fit, ep.kind, ep.n, ep.p, ev.density, ep.mode)
    rep = res.report()
    rep["event"] = ev.name
    return Component(res.chain, res.err, rep)


def constant_event_rewrite(m: Gsmp, atom_tol: float = ATOM_TOL) -> Gsmp:
    """Turn general events with (numerically) constant delay into deterministic ones."""
    events = []
    changed = False
    for e in m.events:
        if e.kind == "general":
            lo, hi = e.density.support
            degenerate = isinstance(e.density, Empirical) and e.density.is_degenerate
            if degenerate or hi - lo <= atom_tol:
                events.append(deterministic(e.name, 0.5 * (lo + hi)))
                changed = True
                continue
        events.append(e)
    if not changed:
        return m
    return Gsmp(m.states, tuple(events), m.active, m.succ, m.init, m.tie_order, m.annotations)


# -- product ------------------------------------------------------------------


class _Comp:
    """Index tables for one component inside the product."""

    def __init__(self, name, chain: DctmcChain):
        ph = chain.ph
        self.name = name
        self.chain = chain
        self.rates = ph.rates
        self.succ = ph.succ
        self.init = {int(i): float(p) for i, p in enumerate(ph.init) if p > 0}
        self.dets = {d.name: d for d in chain.det_events}
        self.dets_at = {i: [d.name for d in chain.det_events if i in d.active] for i in range(ph.n + 1)}
        self.uses_gen = bool(chain.det_events)

    def exit_event(self, i):
        return f"{self.name}:{i}"

    def det_event(self, d, gen):
        return f"{self.name}:{d}" + (f"@{gen}" if self.uses_gen else "")


def _state_name(s, coords):
    if not coords:
        return str(s)
    inner = ",".join(f"{e}={ph}" + ("'" if gen else "") for e, (ph, gen) in coords)
    return f"{s}[{inner}]"


def approximate_model(m: Gsmp, plan, components=None, cap: int = DEFAULT_STATE_CAP,
                      prune: bool = True) -> Gsmp:
    """Product of ``m`` with a phase component per planned event.

    ``plan`` maps event names to :class:`EventPlan`; ``components`` may
    supply ready-made :class:`Component` objects (or chains) instead of
    fitting. The result carries ``annotations["_meta"]`` with the component
    reports and ``annotations[state]`` with base state and phase coordinates.
    """
    check(m)
    plan = dict(plan or {})
    components = dict(components or {})
    for name, c in list(components.items()):
        if isinstance(c, DctmcChain):
            components[name] = Component(c, float("nan"), {"event": name})
        plan.setdefault(name, EventPlan())
    _check_plan(m, plan)
    emap = m.event_map
    if not plan:
        return m
    comps = {}
    meta = {}
    for name in m.tie_order:
        if name not in plan:
            continue
        comp = components.get(name) or build_component(emap[name], plan[name])
        problems = comp.chain.problems()
        if problems:
            raise ApproxError(f"component for {name} invalid: {'; '.join(problems)}")
        comps[name] = _Comp(name, comp.chain)
        meta[name] = comp.report | {"err": comp.err}
    order = [e for e in m.tie_order if e in comps]

    events: dict[str, Event] = {}
    for e in m.events:
        if e.name not in comps:
            events[e.name] = e
    for name in order:
        c = comps[name]
        for i in range(1, len(c.rates)):
            if c.rates[i] > 0:
                events[c.exit_event(i)] = exponential(c.exit_event(i), c.rates[i])
        for d in c.dets.values():
            for gen in ((0, 1) if c.uses_gen else (0,)):
                nm = c.det_event(d.name, gen)
                events[nm] = deterministic(nm, d.delay)

    def inits(s2, coords_prev: dict, reinit: str | None):
        """Distributions over coordinates for base state ``s2``."""
        out = [({}, 1.0)]
        for name in order:
            if name not in m.active_in(s2):
                continue
            c = comps[name]
            if name in coords_prev and name != reinit:
                out = [({**cd, name: coords_prev[name]}, p) for cd, p in out]
                continue
            gen = 0
            if name in coords_prev:
                gen = 1 - coords_prev[name][1]
            out = [({**cd, name: (i, gen)}, p * q) for cd, p in out for i, q in c.init.items()]
        return out

    index: dict = {}
    states: list = []
    annotations: dict = {}
    active: dict = {}
    succ: dict = {}
    queue: deque = deque()

    def key(s, coords: dict):
        k = (s, tuple((e, coords[e]) for e in order if e in coords))
        if k not in index:
            if len(states) >= cap:
                est = len(m.states) * int(np.prod([2 * len(c.rates) for c in comps.values()]))
                raise ApproxError(f"product exceeds state cap {cap} (estimated up to {est} states)")
            nm = _state_name(s, k[1])
            index[k] = nm
            states.append(nm)
            annotations[nm] = {"base": s, "phases": {e: ph for e, (ph, _) in k[1]}}
            queue.append(k)
        return index[k]

    def add(dist, s2, coords_prev, reinit, p):
        for cd, q in inits(s2, coords_prev, reinit):
            nm = key(s2, cd)
            dist[nm] = dist.get(nm, 0.0) + p * q

    init: dict = {}
    for s, p in m.init.items():
        add(init, s, {}, None, p)
    if not prune:
        _seed_all(m, comps, order, key)

    while queue:
        s, items = queue.popleft()
        coords = dict(items)
        here = index[(s, items)]
        acts = set()
        for e in m.active_in(s):
            if e in comps:
                continue
            dist: dict = {}
            for s2, p in m.succ[(s, e)].items():
                if p > 0:
                    add(dist, s2, coords, None, p)
            acts.add(e)
            succ[(here, e)] = dist
        for name, (ph, gen) in items:
            c = comps[name]
            moves = []
            if c.rates[ph] > 0:
                moves.append((c.exit_event(ph), c.succ[ph]))
            for d in c.dets_at[ph]:
                moves.append((c.det_event(d, gen), c.dets[d].target))
            for ev_name, row in moves:
                dist = {}
                for j, q in enumerate(row):
                    if q <= 0:
                        continue
                    if j == 0:
                        # the approximated event occurs in the base model
                        for s2, p in m.succ[(s, name)].items():
                            if p > 0:
                                add(dist, s2, coords, name, q * p)
                    else:
                        nm = key(s, {**coords, name: (j, gen)})
                        dist[nm] = dist.get(nm, 0.0) + q
                acts.add(ev_name)
                succ[(here, ev_name)] = dist
        active[here] = frozenset(acts)

    used = set().union(*active.values()) if active else set()
    ev_list = [events[e] for e in events if e in used]
    tie = [e for e in m.tie_order if e in used] + [e for e in events if e in used and e not in m.tie_order]
    annotations["_meta"] = {"components": meta, "base_states": len(m.states)}
    out = Gsmp(tuple(states), tuple(ev_list), active, succ, init, tuple(tie), annotations)
    check(out)
    ties = _concurrent_deterministic(out)
    if ties:
        # exact ties among these are resolved by the tie order
        annotations["_meta"]["concurrent_deterministic"] = ties
    log.info("product has %d states, class %s", len(states), classify(out))
    return out


def _seed_all(m, comps, order, key):
    """Enumerate every coordinate combination (the unpruned product)."""
    import itertools

    for s in m.states:
        names = [e for e in order if e in m.active_in(s)]
        ranges = []
        for e in names:
            c = comps[e]
            gens = (0, 1) if c.uses_gen else (0,)
            ranges.append([(i, g) for i in range(1, len(c.rates)) for g in gens])
        for combo in itertools.product(*ranges):
            key(s, dict(zip(names, combo)))


def _concurrent_deterministic(m: Gsmp) -> list:
    """Pairs of deterministic events active in a common state."""
    emap = m.event_map
    out = set()
    for s in m.states:
        dets = sorted(e for e in m.active_in(s) if emap[e].is_deterministic)
        for a in range(len(dets)):
            for b in range(a + 1, len(dets)):
                out.add((dets[a], dets[b]))
    return sorted(out)
