"""Monte Carlo simulation of GSMP run semantics.

In every state the event with the least remaining time occurs, exact ties
going to the earliest event in the tie order. Events no longer active are
discarded; newly active events, and the occurred event if it stays active,
get fresh samples; all other clocks keep running.

:func:`simulate` advances whole batches of runs in lockstep with numpy.
:func:`trace` runs a single path in plain Python, optionally from scripted
draws and with exact rational arithmetic, and records every transition.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import Gsmp, ModelError, check

log = logging.getLogger(__name__)

TRANSIENT = "transient"
REACH = "reach"
ABSORPTION = "absorption"
BATCH = 50_000


@dataclass(frozen=True)
class RunConfig:
    """``query`` is transient (needs ``horizon`` and ``states``), reach
    (needs ``goal``, optional ``horizon``) or absorption (histogram of the
    time to reach a state without events, or ``goal`` if given, over ``bins``)."""

    runs: int
    query: str = REACH
    horizon: float | None = None
    states: tuple = ()
    goal: tuple = ()
    bins: tuple = ()
    seed: int = 0
    max_steps: int = 100_000

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.query == TRANSIENT and (self.horizon is None or not self.states):
            raise ValueError("transient queries need a horizon and a state set")
        if self.query == REACH and not self.goal:
            raise ValueError("reach queries need a goal set")
        if self.query == ABSORPTION and len(self.bins) < 2:
            raise ValueError("absorption histograms need at least two bin edges")
        if self.query not in (TRANSIENT, REACH, ABSORPTION):
            raise ValueError(f"unknown query {self.query!r}")


@dataclass
class Estimate:
    value: float
    se: float
    runs: int
    hits: int
    truncated: int = 0
    histogram: np.ndarray | None = None
    edges: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def within(self, x: float, k: float = 3.0, slack: float = 0.0) -> bool:
        return abs(self.value - x) <= k * self.se + slack

    def histogram_rows(self):
        """(lo, hi, count, density) rows."""
        n = self.runs
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.histogram):
            yield float(lo), float(hi), int(c), float(c / n / (hi - lo))


class _Compiled:
    """Array tables of a model for the batch simulator."""

    def __init__(self, m: Gsmp):
        check(m)
        rank = m.tie_rank()
        self.model = m
        self.states = list(m.states)
        self.sidx = {s: i for i, s in enumerate(self.states)}
        self.events = sorted(m.events, key=lambda e: rank[e.name])
        self.eidx = {e.name: j for j, e in enumerate(self.events)}
        ns, ne = len(self.states), len(self.events)
        self.active = np.zeros((ns, ne), dtype=bool)
        for s, evs in m.active.items():
            for e in evs:
                self.active[self.sidx[s], self.eidx[e]] = True
        self.absorbing = ~self.active.any(axis=1)
        pairs = sorted(m.succ)
        self.pair = np.full((ns, ne), -1, dtype=int)
        kmax = max((len(m.succ[p]) for p in pairs), default=1)
        self.targets = np.zeros((max(len(pairs), 1), kmax), dtype=int)
        self.cdf = np.ones((max(len(pairs), 1), kmax))
        for k, (s, e) in enumerate(pairs):
            self.pair[self.sidx[s], self.eidx[e]] = k
            items = [(self.sidx[t], p) for t, p in m.succ[(s, e)].items() if p > 0]
            tg = [t for t, _ in items]
            c = np.cumsum([float(p) for _, p in items])
            c /= c[-1]
            self.targets[k, :len(tg)] = tg
            self.targets[k, len(tg):] = tg[-1]
            self.cdf[k, :len(c)] = c
        self.init_states = np.array([self.sidx[s] for s in m.init])
        self.init_cdf = np.cumsum([float(m.init[s]) for s in m.init])
        self.init_cdf /= self.init_cdf[-1]

    def draw(self, j, rng, k):
        e = self.events[j]
        if e.is_exponential:
            return rng.exponential(1.0 / e.rate, k)
        if e.is_deterministic:
            return np.full(k, e.delay)
        return np.asarray(e.density.sample(rng, k), dtype=float).reshape(k)


def _run_batch(comp: _Compiled, cfg: RunConfig, size: int, seed_seq) -> dict:
    rng = np.random.default_rng(seed_seq)
    ne = len(comp.events)
    u = rng.random(size)
    state = comp.init_states[np.searchsorted(comp.init_cdf, u, side="right").clip(0, len(comp.init_cdf) - 1)]
    clock = np.zeros(size)
    remain = np.full((size, ne), np.inf)
    act = comp.active[state]
    for j in range(ne):
        sel = np.flatnonzero(act[:, j])
        if len(sel):
            remain[sel, j] = comp.draw(j, rng, len(sel))
    ids = np.arange(size)
    goal = np.zeros(len(comp.states), dtype=bool)
    for s in cfg.goal:
        goal[comp.sidx[s]] = True
    hit_states = np.zeros(len(comp.states), dtype=bool)
    for s in cfg.states:
        hit_states[comp.sidx[s]] = True
    success = np.zeros(size, dtype=bool)
    times = np.full(size, np.nan)
    truncated = 0
    horizon = cfg.horizon
    for _ in range(cfg.max_steps):
        if len(ids) == 0:
            break
        # runs that are finished at the current instant
        if cfg.query == REACH:
            done = goal[state]
            success[ids[done]] = True
            done |= comp.absorbing[state]
        elif cfg.query == ABSORPTION:
            done = goal[state] if cfg.goal else comp.absorbing[state]
            times[ids[done]] = clock[done]
            done = done | comp.absorbing[state]
        else:
            done = comp.absorbing[state]
            success[ids[done]] = hit_states[state[done]]
        j = np.argmin(remain, axis=1)
        dt = remain[np.arange(len(ids)), j]
        if horizon is not None:
            late = ~done & (clock + dt > horizon)
            if cfg.query == TRANSIENT:
                success[ids[late]] = hit_states[state[late]]
            done |= late
        keep = ~done
        if not keep.all():
            ids, state, clock, remain, j, dt = ids[keep], state[keep], clock[keep], remain[keep], j[keep], dt[keep]
            if len(ids) == 0:
                break
        n = len(ids)
        clock = clock + dt
        remain -= dt[:, None]
        pair = comp.pair[state, j]
        u = rng.random(n)
        k = (u[:, None] >= comp.cdf[pair]).sum(axis=1).clip(0, comp.cdf.shape[1] - 1)
        new = comp.targets[pair, k]
        old_act = comp.active[state]
        new_act = comp.active[new]
        fired = np.zeros_like(old_act)
        fired[np.arange(n), j] = True
        fresh = new_act & (~old_act | fired)
        remain[~new_act] = np.inf
        for col in np.flatnonzero(fresh.any(axis=0)):
            sel = np.flatnonzero(fresh[:, col])
            remain[sel, col] = comp.draw(col, rng, len(sel))
        state = new
    else:
        truncated = len(ids)
    return {"success": success, "times": times, "truncated": truncated}


def _batch_job(args):
    m, cfg, size, seq = args
    return _run_batch(_Compiled(m), cfg, size, seq)


def simulate(m: Gsmp, cfg: RunConfig, jobs: int = 1, batch: int = BATCH) -> Estimate:
    """Estimate a probability (or an absorption-time histogram) with its standard error.

    Runs are split into fixed batches with seeds spawned from ``cfg.seed``,
    so the result does not depend on ``jobs``.
    """
    sizes = [batch] * (cfg.runs // batch) + ([cfg.runs % batch] if cfg.runs % batch else [])
    seqs = np.random.SeedSequence(cfg.seed).spawn(len(sizes))
    if jobs > 1 and len(sizes) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_batch_job, [(m, cfg, n, s) for n, s in zip(sizes, seqs)]))
    else:
        comp = _Compiled(m)
        parts = [_run_batch(comp, cfg, n, s) for n, s in zip(sizes, seqs)]
    success = np.concatenate([p["success"] for p in parts])
    truncated = sum(p["truncated"] for p in parts)
    if truncated:
        log.warning("%d runs hit the step cap and count as failures", truncated)
    n = cfg.runs
    if cfg.query == ABSORPTION:
        times = np.concatenate([p["times"] for p in parts])
        edges = np.asarray(cfg.bins, dtype=float)
        counts, _ = np.histogram(times[~np.isnan(times)], bins=edges)
        inside = int(counts.sum())
        p = inside / n
        return Estimate(p, math.sqrt(p * (1 - p) / n), n, inside, truncated, counts, edges,
                        {"mean_time": float(np.nanmean(times)) if inside else math.nan})
    hits = int(success.sum())
    p = hits / n
    return Estimate(p, math.sqrt(p * (1 - p) / n), n, hits, truncated)


def absorption_times(m: Gsmp, runs: int, seed: int = 0, goal=(), max_steps: int = 100_000) -> np.ndarray:
    """Raw absorption times (NaN where a run never got there)."""
    cfg = RunConfig(runs, ABSORPTION, goal=tuple(goal), bins=(0.0, 1.0), seed=seed, max_steps=max_steps)
    sizes = [BATCH] * (runs // BATCH) + ([runs % BATCH] if runs % BATCH else [])
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    comp = _Compiled(m)
    return np.concatenate([_run_batch(comp, cfg, n, s)["times"] for n, s in zip(sizes, seqs)])


# -- single traces ------------------------------------------------------------


class ScriptedDraws:
    """Replayable draws: per-event queues consumed first, then ``rng``."""

    def __init__(self, script: dict | None = None, rng: np.random.Generator | None = None):
        self.queues = {k: list(v) for k, v in (script or {}).items()}
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def draw(self, event):
        q = self.queues.get(event.name)
        if q:
            return q.pop(0)
        if event.is_exponential:
            return float(self.rng.exponential(1.0 / event.rate))
        if event.is_deterministic:
            return event.delay
        return float(event.density.sample(self.rng))


@dataclass
class TraceStep:
    time: object
    event: str
    source: str
    target: str
    remain: dict

    def line(self):
        return f"{float(self.time):.6g},{self.event},{self.source},{self.target}"


def trace(m: Gsmp, draws: ScriptedDraws | None = None, state=None, remain: dict | None = None,
          max_steps: int = 1000, horizon=None, exact: bool = False, check_clocks: bool = True) -> list[TraceStep]:
    """Simulate one run and return its transitions.

    ``state`` and ``remain`` set the starting point (missing clocks are
    drawn). With ``exact`` all times are :class:`~fractions.Fraction`, so
    scripted decimal draws are replayed without rounding.
    """
    check(m)
    draws = draws or ScriptedDraws()
    emap = m.event_map
    rank = m.tie_rank()
    rng = draws.rng
    conv = (lambda x: Fraction(str(x)) if not isinstance(x, Fraction) else x) if exact else float

    if state is None:
        states = list(m.init)
        state = states[int(np.searchsorted(np.cumsum([m.init[s] for s in states]), rng.random(), side="right"))]
    clocks = {}
    for e in sorted(m.active_in(state), key=rank.get):
        if remain and e in remain:
            clocks[e] = conv(remain[e])
        else:
            clocks[e] = conv(draws.draw(emap[e]))
    now = conv(0)
    out = []
    for _ in range(max_steps):
        if not clocks:
            break
        e = min(clocks, key=lambda k: (clocks[k], rank[k]))
        dt = clocks[e]
        if horizon is not None and now + dt > horizon:
            break
        now = now + dt
        before = dict(clocks)
        dist = m.succ[(state, e)]
        targets = [t for t, p in dist.items() if p > 0]
        if len(targets) == 1:
            nxt = targets[0]
        else:
            cum = np.cumsum([dist[t] for t in targets])
            nxt = targets[min(int(np.searchsorted(cum / cum[-1], rng.random(), side="right")), len(targets) - 1)]
        new_active = m.active_in(nxt)
        clocks = {k: v - dt for k, v in clocks.items() if k in new_active and k != e}
        if check_clocks:
            for k, v in clocks.items():
                assert v == before[k] - dt, "clock bookkeeping violated"
        for k in sorted(new_active, key=rank.get):
            if k not in clocks:
                clocks[k] = conv(draws.draw(emap[k]))
        out.append(TraceStep(now, e, state, nxt, dict(clocks)))
        state = nxt
    return out


def ks_distance(samples, cdf) -> float:
    """Kolmogorov-Smirnov distance between a sample and a cdf callable."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ModelError("no samples")
    F = np.asarray(cdf(x), dtype=float)
    hi = np.arange(1, n + 1) / n - F
    lo = F - np.arange(0, n) / n
    return float(max(hi.max(), lo.max()))
