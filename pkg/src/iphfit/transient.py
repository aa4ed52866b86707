"""Numerical analysis engines for CTMC and d-CTMC models.

* :func:`ctmc_transient` evolves a CTMC by uniformisation.
* :func:`dctmc_transient_delta` emulates every deterministic event by a
  global tick of length ``delta``; a deterministic event fires on the
  ``floor(delay / delta)``-th tick after its initialisation.
* :func:`dctmc_reach_subordinated` computes unbounded reachability on the
  embedded chain of regeneration configurations, with each deterministic
  window resolved by a transient analysis of the subordinated CTMC.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg as spla

from . import unif
from .model import CTMC, DCTMC, Gsmp, ModelError, classify, ctmc_generator

log = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 1_000_000
TICK_SLACK = 1e-9
DIRECT_LIMIT = 2000


class PreconditionError(ModelError):
    """The chosen engine does not apply to this model or query."""


class ConvergenceError(ArithmeticError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual


@dataclass
class AnalysisResult:
    value: float | np.ndarray
    engine: str
    error_bound: float | None = None
    seconds: float = 0.0
    info: dict = field(default_factory=dict)

    def to_dict(self):
        v = self.value
        return {"value": v.tolist() if isinstance(v, np.ndarray) else v, "engine": self.engine,
                "error_bound": self.error_bound, "seconds": self.seconds, "info": self.info}


# -- helpers ------------------------------------------------------------------


def initial_vector(m: Gsmp, alpha=None) -> np.ndarray:
    """``alpha`` as a vector over ``m.states`` (defaults to ``m.init``)."""
    if alpha is None:
        alpha = m.init
    if isinstance(alpha, dict):
        idx = {s: i for i, s in enumerate(m.states)}
        v = np.zeros(len(m.states))
        for s, p in alpha.items():
            if s not in idx:
                raise ModelError(f"initial distribution references unknown state {s}")
            v[idx[s]] += p
        return v
    v = np.asarray(alpha, dtype=float)
    if v.shape != (len(m.states),):
        raise ModelError("initial vector has the wrong length")
    return v


def with_absorbing(m: Gsmp, states) -> Gsmp:
    """Copy of ``m`` in which ``states`` have no active events."""
    states = set(states)
    unknown = states - set(m.states)
    if unknown:
        raise ModelError(f"unknown goal state(s) {sorted(unknown)}")
    active = {s: (frozenset() if s in states else a) for s, a in m.active.items()}
    succ = {k: v for k, v in m.succ.items() if k[0] not in states}
    return Gsmp(m.states, m.events, active, succ, m.init, m.tie_order, m.annotations)


def mass_in(m: Gsmp, dist: np.ndarray, states) -> float:
    idx = {s: i for i, s in enumerate(m.states)}
    return float(sum(dist[idx[s]] for s in set(states)))


def _check_eps(eps):
    if not 0 < eps <= 1e-3:
        raise ValueError(f"tolerance must lie in (0, 1e-3], got {eps}")


# -- CTMC ---------------------------------------------------------------------


def ctmc_transient(m, alpha, t: float, eps: float = 1e-12) -> np.ndarray:
    """Transient distribution at time ``t``.

    ``m`` is a CTMC :class:`Gsmp` or a generator matrix; ``alpha`` a vector
    (or, for a model, a state-to-probability mapping). The result has mass
    in ``[1 - eps, 1]``.
    """
    _check_eps(eps)
    if t < 0:
        raise ValueError("time must be nonnegative")
    if isinstance(m, Gsmp):
        if classify(m) != CTMC:
            raise PreconditionError(f"ctmc_transient needs a CTMC, got {classify(m)}")
        Q = ctmc_generator(m)
        v = initial_vector(m, alpha)
    else:
        Q = m
        v = np.asarray(alpha, dtype=float)
    out = unif.evolve(v, Q, t, eps)
    return _clamp(out)


def _clamp(v):
    low = v.min() if len(v) else 0.0
    if low < -1e-12:
        log.warning("transient vector had entries down to %.3g; clamped to zero", low)
    return np.maximum(v, 0.0)


def ctmc_reach_bounded(m: Gsmp, goal, t: float, alpha=None, eps: float = 1e-12) -> float:
    """P(reach ``goal`` within ``t``) for a CTMC."""
    mm = with_absorbing(m, goal)
    return mass_in(mm, ctmc_transient(mm, initial_vector(m, alpha), t, eps), goal)


def ctmc_reach(m: Gsmp, goal, alpha=None, tol: float = 1e-10) -> float:
    """Unbounded reachability of ``goal`` in a CTMC (linear system)."""
    if classify(m) != CTMC:
        raise PreconditionError(f"ctmc_reach needs a CTMC, got {classify(m)}")
    return dctmc_reach_subordinated(m, goal, alpha, tol)


# -- delta discretisation -----------------------------------------------------


def default_delta(m: Gsmp) -> float:
    """Greatest common divisor of the deterministic delays.

    Only decimals with at most six fractional digits qualify; otherwise the
    caller has to pick the step.
    """
    fracs = []
    for e in m.deterministic_events():
        f = Fraction(repr(e.delay)) if "e" not in repr(e.delay) else Fraction(e.delay)
        if f.denominator > 10**6 or 10**6 % f.denominator:
            raise PreconditionError(f"delay {e.delay} of {e.name} is not a short decimal; give delta explicitly")
        fracs.append(f)
    if not fracs:
        raise PreconditionError("model has no deterministic events; delta is undefined")
    num = reduce(math.gcd, (f.numerator * (10**6 // f.denominator) for f in fracs))
    return num / 10**6


def ticks_for(delay: float, delta: float) -> int:
    return max(1, int(math.floor(delay / delta + TICK_SLACK)))


@dataclass
class ExpandedChain:
    """(state, tick counters) chain used by the delta engine."""

    states: list
    Q: sp.csr_matrix
    tick: sp.csr_matrix
    base_index: np.ndarray


def expand_for_delta(m: Gsmp, delta: float, alpha=None, cap: int = DEFAULT_STATE_CAP) -> tuple[ExpandedChain, np.ndarray]:
    emap = m.event_map
    rank = m.tie_rank()
    det = {e.name: ticks_for(e.delay, delta) for e in m.deterministic_events()}
    sidx = {s: i for i, s in enumerate(m.states)}
    dets_of = {s: tuple(sorted((e for e in m.active_in(s) if e in det), key=rank.get)) for s in m.states}
    exps_of = {s: [e for e in m.active_in(s) if emap[e].is_exponential] for s in m.states}
    bound = sum(math.prod(det[d] + 1 for d in dets_of[s]) for s in m.states)

    index: dict = {}
    order: list = []
    queue: deque = deque()

    def key(s, counters):
        x = (s, tuple(counters.get(d, 0) for d in dets_of[s]))
        if x not in index:
            if len(order) >= cap:
                raise PreconditionError(f"expanded state space exceeds cap {cap} (estimate up to {bound})")
            index[x] = len(order)
            order.append(x)
            queue.append(x)
        return index[x]

    def carried(s, counters, s2, fired=None):
        out = {}
        for d in dets_of[s2]:
            if d != fired and d in counters and d in m.active_in(s):
                out[d] = counters[d]
            else:
                out[d] = 0
        return out

    def resolve(s, counters, prob, acc, depth=0):
        due = [d for d in dets_of[s] if counters[d] >= det[d]]
        if not due:
            j = key(s, counters)
            acc[j] = acc.get(j, 0.0) + prob
            return
        if depth > 10_000:
            raise PreconditionError("deterministic events fire in a zero-time cycle")
        d = due[0]
        for s2, p in m.succ[(s, d)].items():
            if p > 0:
                resolve(s2, carried(s, counters, s2, fired=d), prob * p, acc, depth + 1)

    v0 = initial_vector(m, alpha)
    start = {}
    for s, p in zip(m.states, v0):
        if p > 0:
            j = key(s, {d: 0 for d in dets_of[s]})
            start[j] = start.get(j, 0.0) + p
    q_rows, q_cols, q_vals = [], [], []
    t_rows, t_cols, t_vals = [], [], []
    while queue:
        s, cvec = queue.popleft()
        i = index[(s, cvec)]
        counters = dict(zip(dets_of[s], cvec))
        for e in exps_of[s]:
            rate = emap[e].rate
            for s2, p in m.succ[(s, e)].items():
                if p <= 0:
                    continue
                j = key(s2, carried(s, counters, s2))
                if j != i:
                    q_rows += [i, i]
                    q_cols += [j, i]
                    q_vals += [rate * p, -rate * p]
        acc: dict = {}
        resolve(s, {d: c + 1 for d, c in counters.items()}, 1.0, acc)
        for j, p in acc.items():
            t_rows.append(i)
            t_cols.append(j)
            t_vals.append(p)
    n = len(order)
    Q = sp.csr_matrix((q_vals, (q_rows, q_cols)), shape=(n, n))
    tick = sp.csr_matrix((t_vals, (t_rows, t_cols)), shape=(n, n))
    v = np.zeros(n)
    for j, p in start.items():
        v[j] = p
    base = np.array([sidx[s] for s, _ in order], dtype=int)
    return ExpandedChain(order, Q, tick, base), v


def dctmc_transient_delta(m: Gsmp, alpha, t: float, delta: float | None = None, eps: float = 1e-10,
                          cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """Transient distribution over ``m.states`` at time ``t`` by delta discretisation."""
    _check_eps(eps)
    if classify(m) not in (CTMC, DCTMC):
        raise PreconditionError("delta discretisation needs a CTMC or d-CTMC")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if not m.deterministic_events():
        return ctmc_transient(m, alpha, t, eps)
    delta = default_delta(m) if delta is None else float(delta)
    if not delta > 0:
        raise ValueError("delta must be positive")
    windows = int(math.floor(t / delta + 1e-12))
    if abs(windows * delta - t) > 1e-12 * max(1.0, t):
        log.warning("time %g is not a multiple of delta %g; using %g", t, delta, windows * delta)
    chain, v = expand_for_delta(m, delta, alpha, cap)
    Q, tick = chain.Q, chain.tick
    lam = unif.uniformisation_rate(Q.diagonal())
    tick_t = tick.T.tocsr()
    if lam > 0:
        P_t = (sp.identity(Q.shape[0], format="csr") + Q / lam).T.tocsr()
        left, w = unif.poisson_window(lam * delta, eps / max(windows, 1))
    for _ in range(windows):
        if lam > 0:
            cur = v
            for _ in range(left):
                cur = P_t @ cur
            acc = w[0] * cur
            for wk in w[1:]:
                cur = P_t @ cur
                acc += wk * cur
            v = acc
        v = tick_t @ v
    out = np.bincount(chain.base_index, weights=v, minlength=len(m.states))
    return _clamp(out)


def dctmc_reach_bounded_delta(m: Gsmp, goal, t: float, delta: float | None = None, alpha=None,
                              eps: float = 1e-10) -> float:
    mm = with_absorbing(m, goal)
    return mass_in(mm, dctmc_transient_delta(mm, initial_vector(m, alpha), t, delta, eps), goal)


# -- subordinated chains ------------------------------------------------------


GOAL = ("goal",)
DEAD = ("dead",)


@dataclass
class EmbeddedChain:
    """Regeneration configurations ``(state,)`` or ``(state, det_event)``."""

    configurations: list
    kernel: sp.csr_matrix
    goal: int
    absorbing: np.ndarray

    def row_sums(self):
        return np.asarray(self.kernel.sum(axis=1)).ravel()


def _det_active(m: Gsmp, s, det_names):
    ds = [e for e in m.active_in(s) if e in det_names]
    if len(ds) > 1:
        raise PreconditionError(
            f"state {s} activates deterministic events {sorted(ds)}; use delta discretisation")
    return ds[0] if ds else None


def embedded_chain(m: Gsmp, goal, starts=None, window_eps: float = 1e-13) -> EmbeddedChain:
    """Build the embedded chain over configurations reachable from ``starts``
    (default: the support of the initial distribution)."""
    if classify(m) not in (CTMC, DCTMC):
        raise PreconditionError("subordinated chains need a CTMC or d-CTMC")
    goal = set(goal)
    emap = m.event_map
    det_names = {e.name for e in m.deterministic_events()}
    for s in m.states:
        _det_active(m, s, det_names)
    sidx = {s: i for i, s in enumerate(m.states)}
    Q = ctmc_generator(m)

    configs = [GOAL, DEAD]
    index = {GOAL: 0, DEAD: 1}
    queue: deque = deque()

    def conf(s):
        if s in goal:
            return 0
        d = _det_active(m, s, det_names)
        c = (s,) if d is None else (s, d)
        if c not in index:
            index[c] = len(configs)
            configs.append(c)
            queue.append(c)
        return index[c]

    rows, cols, vals = [0, 1], [0, 1], [1.0, 1.0]

    def emit(i, dist):
        for j, p in dist.items():
            if p > 0:
                rows.append(i)
                cols.append(j)
                vals.append(p)

    subgen_cache = {}
    for s in (m.init if starts is None else starts):
        conf(s)
    while queue:
        c = queue.popleft()
        i = index[c]
        s = c[0]
        dist: dict = {}
        if len(c) == 1:
            exps = [e for e in m.active_in(s) if emap[e].is_exponential]
            total = sum(emap[e].rate for e in exps)
            if total == 0:
                dist[1] = 1.0
            for e in exps:
                w = emap[e].rate / total
                for s2, p in m.succ[(s, e)].items():
                    j = conf(s2)
                    dist[j] = dist.get(j, 0.0) + w * p
        else:
            d = c[1]
            if d not in subgen_cache:
                inside = np.array([(d in m.active_in(x)) and x not in goal for x in m.states])
                # states outside the window are frozen
                Qd = (sp.diags(inside.astype(float)) @ Q).tocsr()
                subgen_cache[d] = (Qd, inside)
            Qd, inside = subgen_cache[d]
            v0 = np.zeros(len(m.states))
            v0[sidx[s]] = 1.0
            v = np.maximum(unif.evolve(v0, Qd, emap[d].delay, window_eps), 0.0)
            v /= v.sum()
            for k in np.flatnonzero(v > 0):
                x = m.states[k]
                if inside[k]:
                    for s2, p in m.succ[(x, d)].items():
                        j = conf(s2)
                        dist[j] = dist.get(j, 0.0) + v[k] * p
                else:
                    j = conf(x)
                    dist[j] = dist.get(j, 0.0) + v[k]
        emit(i, dist)
    n = len(configs)
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    absorbing = np.zeros(n, dtype=bool)
    absorbing[:2] = True
    return EmbeddedChain(configs, K, 0, absorbing)


def _solve_reach(chain: EmbeddedChain, tol: float, max_iter: int = 100_000) -> np.ndarray:
    K = chain.kernel
    n = K.shape[0]
    # configurations that can reach the goal at all
    can = np.zeros(n, dtype=bool)
    can[chain.goal] = True
    KT = K.T.tocsr()
    frontier = [chain.goal]
    while frontier:
        nxt = []
        for j in frontier:
            for i in KT.indices[KT.indptr[j]:KT.indptr[j + 1]]:
                if not can[i]:
                    can[i] = True
                    nxt.append(i)
        frontier = nxt
    x = np.zeros(n)
    x[chain.goal] = 1.0
    U = np.flatnonzero(can & ~chain.absorbing)
    if len(U) == 0:
        return x
    A = sp.identity(len(U), format="csc") - K[U][:, U].tocsc()
    b = np.asarray(K[U][:, [chain.goal]].todense()).ravel()
    if len(U) <= DIRECT_LIMIT:
        xu = spla.spsolve(A, b)
    else:
        xu, _ = spla.gmres(A, b, rtol=1e-13, atol=0.0, maxiter=1000)
        # damped refinement until the residual meets the tolerance
        for _ in range(max_iter):
            r = b - A @ xu
            if np.max(np.abs(r)) <= tol:
                break
            xu = xu + 0.9 * r
        else:
            raise ConvergenceError("embedded chain solve hit its iteration cap", float(np.max(np.abs(r))))
    res = float(np.max(np.abs(b - A @ xu)))
    if res > tol:
        raise ConvergenceError("embedded chain solve did not reach the tolerance", res)
    x[U] = np.clip(xu, 0.0, 1.0)
    return x


def dctmc_reach_subordinated(m: Gsmp, goal, alpha=None, tol: float = 1e-10) -> float:
    """Unbounded P(eventually reach ``goal``) via subordinated Markov chains."""
    goal = set(goal)
    v0 = initial_vector(m, alpha)
    chain = embedded_chain(m, goal, [s for s, p in zip(m.states, v0) if p > 0])
    x = _solve_reach(chain, tol)
    index = {c: i for i, c in enumerate(chain.configurations)}
    det_names = {e.name for e in m.deterministic_events()}
    total = 0.0
    for s, p in zip(m.states, v0):
        if p <= 0:
            continue
        if s in goal:
            total += p
            continue
        d = _det_active(m, s, det_names)
        total += p * x[index[(s,) if d is None else (s, d)]]
    return float(total)


# -- dispatcher ---------------------------------------------------------------


def analyze(m: Gsmp, query: dict, engine: str = "auto", delta: float | None = None,
            eps: float = 1e-10, tol: float = 1e-10) -> AnalysisResult:
    """Run a query ``{"kind": "transient", "t": ..., "states": [...]}`` or
    ``{"kind": "reach", "goal": [...], "t": optional}`` with an engine."""
    start = time.perf_counter()
    kind = query["kind"]
    cls = classify(m)
    info = {"model_class": cls}
    if engine == "auto":
        if kind == "reach" and query.get("t") is None:
            engine = "subordinated"
        else:
            engine = "uniformization" if cls == CTMC else "delta"
    bound = None
    if kind == "transient":
        t = float(query["t"])
        if engine == "uniformization":
            dist = ctmc_transient(m, None, t, eps)
            bound = eps
        elif engine == "delta":
            dist = dctmc_transient_delta(m, None, t, delta, eps)
            info["delta"] = delta if delta is not None else default_delta(m)
        else:
            raise PreconditionError(f"engine {engine} cannot answer transient queries; use delta")
        value = mass_in(m, dist, query["states"]) if query.get("states") else dist
    elif kind == "reach":
        goal = query["goal"]
        t = query.get("t")
        if t is None:
            if engine not in ("subordinated", "uniformization"):
                raise PreconditionError(f"engine {engine} cannot answer unbounded reachability; use subordinated")
            value = dctmc_reach_subordinated(m, goal, None, tol)
            engine = "subordinated" if cls == DCTMC else "linear-system"
            bound = tol
        elif engine == "uniformization":
            value = ctmc_reach_bounded(m, goal, float(t), None, eps)
            bound = eps
        elif engine == "delta":
            d = delta if delta is not None else default_delta(m)
            value = dctmc_reach_bounded_delta(m, goal, float(t), d, None, eps)
            info["delta"] = d
        else:
            raise PreconditionError(
                f"engine {engine} refuses time-bounded queries; use delta or uniformization")
    else:
        raise ValueError(f"unknown query kind {kind!r}")
    return AnalysisResult(value, engine, bound, time.perf_counter() - start, info)
