"""Continuous phase-type fitters and the absolute density difference metric."""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .dist import Density, Empirical, Erlang, HyperErlang
from .model import PhChain, erlang_chain, hyper_erlang_chain
from .quad import QuadratureError, adaptive_simpson

log = logging.getLogger(__name__)

TAIL_MASS = 1e-7
QUAD_TOL = 1e-9
GOLDEN = (math.sqrt(5) - 1) / 2


class FitError(ValueError):
    pass


# -- (Err) --------------------------------------------------------------------


def _tail_point(sf, start, tail):
    x = max(start, 1e-12)
    for _ in range(200):
        if sf(x) < tail:
            return x
        x *= 2.0
    raise QuadratureError("could not locate a tail point", float(sf(x)))


def err_metric(f: Density, approx, support_hint=None, breakpoints=(), tol=QUAD_TOL) -> float:
    """Absolute density difference between ``f`` and ``approx`` on [0, inf).

    ``approx`` is a callable density or an object with ``pdf`` (and
    optionally ``sf`` and ``breakpoints``). The horizon is chosen so the
    neglected tail mass of both densities is below ``TAIL_MASS`` in total.
    """
    g_pdf = approx.pdf if hasattr(approx, "pdf") else approx
    g_sf = getattr(approx, "sf", None)
    pts = {0.0, *f.breakpoints(), *breakpoints}
    if hasattr(approx, "breakpoints"):
        pts.update(approx.breakpoints())
    if support_hint is not None:
        pts.update(x for x in support_hint if math.isfinite(x))
    lo, hi = f.support
    scale = max(f.mean, 1e-12)
    if math.isfinite(hi):
        T = hi
    else:
        T = _tail_point(f.sf, max(lo, scale), TAIL_MASS / 2)
    if g_sf is not None:
        T = max(T, _tail_point(g_sf, scale, TAIL_MASS / 2))
    points = sorted(p for p in pts if 0.0 <= p < T) + [T]

    def integrand(x):
        return np.abs(np.asarray(f.pdf(x)) - np.asarray(g_pdf(x)))

    total = adaptive_simpson(integrand, points, tol=tol).value
    if g_sf is None:
        # unknown tail: extend until the approximation's mass is accounted for
        mass = adaptive_simpson(lambda x: np.asarray(g_pdf(x)), points, tol=tol).value
        end = T
        while 1.0 - mass > TAIL_MASS and end < 1e6 * scale:
            nxt = 2.0 * end
            total += adaptive_simpson(integrand, [end, nxt], tol=tol).value
            mass += adaptive_simpson(lambda x: np.asarray(g_pdf(x)), [end, nxt], tol=tol).value
            end = nxt
    return float(min(max(total, 0.0), 2.0))


# -- Erlang -------------------------------------------------------------------


def _unit(f: Density) -> tuple[Density, float]:
    mean = f.mean
    if not math.isfinite(mean) or mean <= 0:
        raise FitError("moment unavailable: target mean is not finite and positive")
    return f.scaled(1.0 / mean), mean


def golden_min(func, lo, hi, max_evals=200, xtol=1e-10):
    """Golden-section minimisation on [lo, hi]; returns (x, fx, evals)."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = func(c), func(d)
    evals = 2
    best = (c, fc) if fc <= fd else (d, fd)
    while evals < max_evals and b - a > xtol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = func(c)
            x, fx = c, fc
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = func(d)
            x, fx = d, fd
        evals += 1
        if fx < best[1]:
            best = (x, fx)
    return best[0], best[1], evals


def _erlang_shape_fit(g: Density, m: int, max_evals: int):
    """Best rate for an m-phase Erlang against unit-mean ``g``: (rate, err, evals)."""
    init_rate = float(m)
    init_err = err_metric(g, Erlang(m, init_rate))
    x, fx, evals = golden_min(lambda lr: err_metric(g, Erlang(m, math.exp(lr))),
                              math.log(0.1 * m), math.log(10.0 * m), max_evals=max_evals)
    if fx <= init_err:
        return math.exp(x), fx, evals + 1
    return init_rate, init_err, evals + 1


def _integer_argmin(func, lo, hi):
    """Minimise an (assumed unimodal) function on integers lo..hi; memoised."""
    memo = {}

    def F(k):
        if k not in memo:
            memo[k] = func(k)
        return memo[k]

    a, b = lo, hi
    while b - a > 4:
        c = a + (b - a) // 3
        d = b - (b - a) // 3
        if F(c)[1] <= F(d)[1]:
            b = d
        else:
            a = c
    for k in range(a, b + 1):
        F(k)
    F(hi)
    best = min(memo, key=lambda k: (memo[k][1], -k))
    return best, memo[best], memo


def fit_erlang(n: int, f: Density, max_evals: int = 200) -> PhChain:
    """Common-rate series chain of ``n`` phases minimising (Err) against ``f``.

    The rate starts at ``n / mean(f)`` and is refined by golden-section search
    on log-rate. The search also considers entering the series at a later
    phase (an Erlang of fewer stages), so more phases never fit worse.
    """
    if n < 1:
        raise FitError(f"need at least one phase, got {n}")
    start = time.perf_counter()
    g, mean = _unit(f)
    if n <= 8:
        memo = {m: _erlang_shape_fit(g, m, max_evals) for m in range(1, n + 1)}
        m = min(memo, key=lambda k: (memo[k][1], -k))
    else:
        m, _, memo = _integer_argmin(lambda k: _erlang_shape_fit(g, k, max_evals), 1, n)
    rate_unit, err, _ = memo[m]
    chain = erlang_chain(n, rate_unit / mean, start=m)
    chain.meta.update(fitter="erlang", n=n, err=err, stages=m,
                      seconds=time.perf_counter() - start, converged=True)
    return chain


# -- hyper-Erlang EM ------------------------------------------------------------


def partitions(n: int, parts: int):
    """Nonincreasing partitions of ``n`` into exactly ``parts`` positive parts."""
    def rec(remaining, k, cap):
        if k == 1:
            if 1 <= remaining <= cap:
                yield (remaining,)
            return
        for first in range(min(cap, remaining - k + 1), 0, -1):
            for rest in rec(remaining - first, k - 1, first):
                yield (first,) + rest
    yield from rec(n, parts, n)


def candidate_structures(n: int, branches: int | None, max_branches: int, cap: int):
    counts = [branches] if branches is not None else range(1, min(n, max_branches) + 1)
    cands = [p for k in counts for p in partitions(n, k)]
    cands.sort(key=lambda p: (max(p) - min(p), len(p)))
    return cands[:cap]


def _compress(x, bins=4000):
    """Weighted representation of a large sample: per-bin means and counts."""
    x = np.asarray(x, dtype=float)
    if len(x) <= bins:
        vals, counts = np.unique(x, return_counts=True)
        return vals, counts.astype(float)
    edges = np.linspace(x.min(), x.max(), bins + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(float)
    sums = np.bincount(idx, weights=x, minlength=bins)
    keep = counts > 0
    return sums[keep] / counts[keep], counts[keep]


def em_hyper_erlang(x, c, shape, iters=300, tol=1e-9, init=None, flip=False):
    """EM for a hyper-Erlang with fixed branch phase counts on weighted data.

    Without ``init`` the branch means start at sample quantiles, larger
    branches to the right (to the left with ``flip``).
    Returns (weights, rates, loglik).
    """
    shape = np.asarray(shape, dtype=float)
    m = len(shape)
    x = np.maximum(x, 1e-300)
    lx = np.log(x)
    W = c.sum()
    if init is None:
        order = np.argsort(x)
        cum = np.cumsum(c[order]) / W
        qs = [x[order][min(np.searchsorted(cum, (j + 0.5) / m), len(x) - 1)] for j in range(m)]
        rank = np.argsort(np.argsort(-shape if flip else shape, kind="stable"), kind="stable")
        means = np.sort(qs)[rank]
        rates = shape / np.maximum(means, 1e-12)
        w = np.full(m, 1.0 / m)
    else:
        w, rates = (np.array(a, dtype=float) for a in init)
    lgk = special.gammaln(shape)
    prev = -np.inf
    ll = -np.inf
    for _ in range(iters):
        logp = (np.log(np.maximum(w, 1e-300)) + shape * np.log(rates) - lgk)[None, :] \
            + (shape - 1)[None, :] * lx[:, None] - rates[None, :] * x[:, None]
        mx = logp.max(axis=1, keepdims=True)
        p = np.exp(logp - mx)
        s = p.sum(axis=1, keepdims=True)
        ll = float(np.dot(c, (mx + np.log(s)).ravel()))
        resp = p / s * c[:, None]
        nk = resp.sum(axis=0)
        w = nk / W
        xs = resp.T @ x
        rates = np.where(nk > 0, shape * nk / np.maximum(xs, 1e-300), rates)
        if abs(ll - prev) <= tol * abs(ll):
            break
        prev = ll
    return w, rates, ll


@dataclass
class HyperErlangFitter:
    """Hyper-Erlang fitter: EM per branch structure, selection by (Err)."""

    branches: int | None = None
    max_branches: int = 4
    samples: int = 100_000
    max_candidates: int = 200
    refine: int = 8
    polish: int = 2
    seed: int = 0
    time_budget: float | None = None
    name: str = field(default="hyper-erlang", init=False)

    def __call__(self, n: int, f: Density) -> PhChain:
        return fit_hyper_erlang(n, f, branches=self.branches, max_branches=self.max_branches,
                                samples=self.samples, max_candidates=self.max_candidates,
                                refine=self.refine, polish=self.polish, seed=self.seed,
                                time_budget=self.time_budget)


@dataclass
class ErlangFitter:
    name: str = field(default="erlang", init=False)

    def __call__(self, n: int, f: Density) -> PhChain:
        return fit_erlang(n, f)


def get_fitter(name: str, **kw):
    if name == "erlang":
        return ErlangFitter()
    if name == "hyper-erlang":
        return HyperErlangFitter(**kw)
    raise FitError(f"unknown fitter {name!r}")


def polish_hyper_erlang(g: Density, branches, max_evals: int = 3000):
    """Nelder-Mead on (Err) over log-weights and log-rates; returns (err, branches)."""
    shape = [b[1] for b in branches]
    m = len(shape)
    x0 = np.concatenate([np.log([b[0] for b in branches]), np.log([b[2] for b in branches])])

    def build(z):
        w = np.exp(z[:m] - z[:m].max())
        w /= w.sum()
        return tuple((float(wi), k, float(ri)) for wi, k, ri in zip(w, shape, np.exp(z[m:])))

    res = optimize.minimize(lambda z: err_metric(g, HyperErlang(build(z))), x0, method="Nelder-Mead",
                            options={"maxfev": max_evals, "xatol": 1e-7, "fatol": 1e-10})
    br = build(res.x)
    return err_metric(g, HyperErlang(br)), br


def fit_hyper_erlang(n: int, f: Density, branches: int | None = None, max_branches: int = 4,
                     samples: int = 100_000, max_candidates: int = 200, refine: int = 8,
                     polish: int = 2, seed: int = 0, time_budget: float | None = None) -> PhChain:
    """Hyper-Erlang phase-type fit with ``n`` phases in total.

    Branch structures (partitions of ``n``) are enumerated, balanced ones
    first. Each structure gets a short EM run on samples of ``f`` (the raw
    samples for ingested data); the ``refine`` best by likelihood are run to
    convergence; the ``polish`` best of those by (Err) are then refined by
    Nelder-Mead on (Err) directly over log-weights and log-rates. The
    candidate with least (Err) wins; the Erlang fit of ``n`` phases is always
    among the candidates.
    """
    if branches is not None and not 1 <= branches <= n:
        raise FitError(f"need n >= branches >= 1, got n={n}, branches={branches}")
    start = time.perf_counter()
    g, mean = _unit(f)
    if isinstance(f, Empirical) and f.samples is not None:
        data = np.asarray(f.samples) / mean
    else:
        data = np.atleast_1d(g.sample(np.random.default_rng(seed), samples))
    x, c = _compress(data)
    structures = candidate_structures(n, branches, max_branches, max_candidates)
    out_of_time = False
    scored = []
    for shape in structures:
        if time_budget is not None and time.perf_counter() - start > time_budget:
            out_of_time = True
            break
        best = em_hyper_erlang(x, c, shape, iters=40)
        if len(set(shape)) > 1:
            other = em_hyper_erlang(x, c, shape, iters=40, flip=True)
            best = max(best, other, key=lambda t: t[2])
        w, r, ll = best
        scored.append((ll, shape, w, r))
    scored.sort(key=lambda t: -t[0])
    refined = []
    for ll, shape, w, r in scored[:max(1, refine)]:
        if out_of_time and refined:
            break
        w, r, ll = em_hyper_erlang(x, c, shape, iters=2000, init=(w, r))
        br = tuple((float(wi), int(k), float(ri)) for wi, k, ri in zip(w, shape, r) if wi > 1e-12)
        tot = sum(b[0] for b in br)
        br = tuple((wi / tot, k, ri) for wi, k, ri in br)
        refined.append((err_metric(g, HyperErlang(br)), br))
        if time_budget is not None and time.perf_counter() - start > time_budget:
            out_of_time = True
    refined.sort(key=lambda t: t[0])
    candidates = list(refined[:1])
    for err, br in refined[:polish]:
        if out_of_time:
            break
        candidates.append(polish_hyper_erlang(g, br))
        if time_budget is not None and time.perf_counter() - start > time_budget:
            out_of_time = True
    if branches in (None, 1):
        ech = fit_erlang(n, g)
        stages = ech.meta["stages"]
        candidates.append((ech.meta["err"], ((1.0, stages, float(ech.closed_form.rate)),)))
    err, br = min(candidates, key=lambda t: t[0])
    br = tuple((w, k, r / mean) for w, k, r in br)
    chain = hyper_erlang_chain(br, total_phases=n)
    chain.meta.update(fitter="hyper-erlang", n=n, err=err, structure=[b[1] for b in br],
                      seconds=time.perf_counter() - start, converged=not out_of_time)
    if out_of_time:
        chain.meta["warning"] = "time budget exhausted; best-so-far returned"
        log.warning("hyper-erlang fit with %d phases hit its time budget", n)
    return chain
