"""Interval phase-type constructions.

``iph_shift`` postpones a fitted chain by a deterministic delay covering the
zero-density prefix; ``iph_slice`` cuts a bounded support into slices, each
with its own chain fitted to the conditional density of the remaining delay,
chained by deterministic events. Both accept any fitter ``fit(n, density) ->
PhChain``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dist import Density, Empirical
from .model import DctmcChain, DetEvent, PhChain
from .phfit import FitError, _erlang_shape_fit, _unit, err_metric

EXPONENTIAL_MODE = "exponential"
EQUIDISTANT_MODE = "equidistant"
CUSTOM_MODE = "custom"


class IphError(ValueError):
    """Precondition of an interval phase-type construction violated."""


@dataclass(frozen=True)
class SlicePlan:
    upper: float
    boundaries: tuple  # t_0 = 0 < t_1 < ... < t_p = upper
    mode: str

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        if len(b) < 3:
            raise IphError("a slice plan needs at least two slices")
        if b[0] != 0.0 or b[-1] != self.upper:
            raise IphError("boundaries must start at 0 and end at the upper bound")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise IphError("slice boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def p(self) -> int:
        return len(self.boundaries) - 1

    @property
    def lengths(self) -> list[float]:
        b = self.boundaries
        return [b[i + 1] - b[i] for i in range(self.p)]

    @classmethod
    def exponential(cls, upper: float, p: int) -> "SlicePlan":
        """Slices halving in length, the last two equal: t_i = (1 - 2^-i) u."""
        if p < 2:
            raise IphError(f"need p > 1 slices, got {p}")
        inner = [(1.0 - 2.0 ** (-i)) * upper for i in range(1, p)]
        return cls(upper, (0.0, *inner, upper), EXPONENTIAL_MODE)

    @classmethod
    def equidistant(cls, upper: float, p: int) -> "SlicePlan":
        if p < 2:
            raise IphError(f"need p > 1 slices, got {p}")
        return cls(upper, tuple(upper * i / p for i in range(p + 1)), EQUIDISTANT_MODE)

    @classmethod
    def custom(cls, upper: float, inner) -> "SlicePlan":
        return cls(upper, (0.0, *sorted(inner), upper), CUSTOM_MODE)


@dataclass
class IphResult:
    chain: DctmcChain
    err: float
    phases_used: int
    method: str
    plan: SlicePlan | None = None
    shift: float | None = None
    seconds: float = 0.0
    components: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def report(self) -> dict:
        out = {
            "method": self.method,
            "phases": self.phases_used,
            "err": self.err,
            "seconds": round(self.seconds, 6),
            "shift": self.shift,
            "boundaries": list(self.plan.boundaries) if self.plan else None,
            "components": [c.meta for c in self.components],
            "notes": list(self.notes),
        }
        return out


class _Zero:
    """Absorption density of a phase that only waits for a deterministic event."""

    def pdf(self, t):
        return 0.0 if np.ndim(t) == 0 else np.zeros(np.shape(t))

    def sf(self, t):
        return 1.0 if np.ndim(t) == 0 else np.ones(np.shape(t))


def _as_dctmc(ph: PhChain) -> DctmcChain:
    return DctmcChain(ph, (), (ph.closed_form,))


def prepend_delay(chain: DctmcChain, delay: float, name: str = "d") -> DctmcChain:
    """Add a fresh start phase that waits ``delay`` and then enters ``chain``.

    The new phase gets index ``n + 1`` so phase 0 stays absorbing.
    """
    ph = chain.ph
    n = ph.n
    rates = np.zeros(n + 2)
    rates[: n + 1] = ph.rates
    succ = np.zeros((n + 2, n + 2))
    succ[: n + 1, : n + 1] = ph.succ
    init = np.zeros(n + 2)
    init[n + 1] = 1.0
    target = np.zeros(n + 2)
    target[: n + 1] = ph.init
    dets = [DetEvent(e.name, e.delay, e.active, np.append(e.target, 0.0)) for e in chain.det_events]
    if any(e.name == name for e in dets):
        raise IphError(f"deterministic event name {name!r} already used")
    dets.insert(0, DetEvent(name, delay, {n + 1}, target))
    forms = None
    if chain.segment_forms is not None:
        forms = (_Zero(), *chain.segment_forms)
    return DctmcChain(PhChain(rates, succ, init), tuple(dets), forms)


def iph_shift(fit, n: int, f: Density) -> IphResult:
    """Deterministic delay over the zero prefix, then a chain of ``n - 1`` phases."""
    start = time.perf_counter()
    low = f.support[0]
    if n < 2:
        raise IphError("IPH-shift needs >= 2 phases")
    if not low > 0:
        raise IphError("no zero-prefix; use plain FIT or iph_slice")
    comp = fit(n - 1, f.residual(low))
    chain = prepend_delay(_as_dctmc(comp), low)
    err = err_metric(f, chain)
    return IphResult(chain, err, chain.n, "shift", shift=low,
                     seconds=time.perf_counter() - start, components=[comp])


def _check_divisible(n, p, offset=0):
    if p < 2:
        raise IphError(f"need p > 1 slices, got {p}")
    k = n - offset
    if k % p:
        lower = (k // p) * p + offset
        upper = lower + p
        options = f"{lower}/{upper}" if lower - offset > 0 else f"{upper}"
        raise IphError(f"n not divisible by p; nearest valid {options}")


def _plan_for(upper, p, mode, boundaries):
    if mode == EXPONENTIAL_MODE:
        return SlicePlan.exponential(upper, p)
    if mode == EQUIDISTANT_MODE:
        return SlicePlan.equidistant(upper, p)
    if mode == CUSTOM_MODE:
        if boundaries is None or len(boundaries) != p - 1:
            raise IphError(f"custom mode needs {p - 1} inner boundaries")
        return SlicePlan.custom(upper, boundaries)
    raise IphError(f"unknown slicing mode {mode!r}")


def slice_chain(fit, n: int, p: int, f: Density, mode: str = EXPONENTIAL_MODE, boundaries=None):
    """Build the sliced chain; returns (chain, plan, components)."""
    upper = f.support[1]
    if not math.isfinite(upper):
        raise IphError("unbounded support; use plain FIT or iph_shift")
    _check_divisible(n, p)
    plan = _plan_for(upper, p, mode, boundaries)
    k = n // p
    comps = []
    for i in range(p):
        target = f if i == 0 else f.residual(plan.boundaries[i])
        comps.append(fit(k, target))
    rates = np.zeros(n + 1)
    succ = np.zeros((n + 1, n + 1))
    init = np.zeros(n + 1)
    offset = [1 + i * k for i in range(p)]

    def place(vec, i):
        """Map a component's distribution over 0..k into the global phases."""
        out = np.zeros(n + 1)
        out[0] = vec[0]
        out[offset[i]:offset[i] + k] = vec[1:]
        return out

    for i, c in enumerate(comps):
        o = offset[i]
        rates[o:o + k] = c.rates[1:]
        for j in range(1, k + 1):
            succ[o + j - 1] = place(c.succ[j], i)
    init[:] = place(comps[0].init, 0)
    dets = []
    for i in range(1, p):
        active = set(range(offset[i - 1], offset[i - 1] + k))
        dets.append(DetEvent(f"d{i}", plan.lengths[i - 1], active, place(comps[i].init, i)))
    forms = tuple(c.closed_form for c in comps)
    if any(fm is None for fm in forms):
        forms = None
    return DctmcChain(PhChain(rates, succ, init), tuple(dets), forms), plan, comps


SLICE_NOTE = ("slice components are fitted to the full conditional density, "
              "so each fitter also spends effort beyond its own slice")


def iph_slice(fit, n: int, p: int, f: Density, mode: str = EXPONENTIAL_MODE,
              boundaries=None) -> IphResult:
    start = time.perf_counter()
    chain, plan, comps = slice_chain(fit, n, p, f, mode, boundaries)
    err = err_metric(f, chain)
    return IphResult(chain, err, chain.n, f"slice({p})", plan=plan,
                     seconds=time.perf_counter() - start, components=comps, notes=[SLICE_NOTE])


def iph_shift_slice(fit, n: int, p: int, f: Density, mode: str = EXPONENTIAL_MODE,
                    boundaries=None) -> IphResult:
    start = time.perf_counter()
    low, upper = f.support
    if not low > 0:
        raise IphError("no zero-prefix; use plain FIT or iph_slice")
    if not math.isfinite(upper):
        raise IphError("unbounded support; use plain FIT or iph_shift")
    if n < 2:
        raise IphError("IPH-shift needs >= 2 phases")
    _check_divisible(n, p, offset=1)
    inner, plan, comps = slice_chain(fit, n - 1, p, f.residual(low), mode, boundaries)
    chain = prepend_delay(inner, low, name="d0")
    err = err_metric(f, chain)
    return IphResult(chain, err, chain.n, f"shift+slice({p})", plan=plan, shift=low,
                     seconds=time.perf_counter() - start, components=comps, notes=[SLICE_NOTE])


def plain_fit(fit, n: int, f: Density) -> IphResult:
    start = time.perf_counter()
    comp = fit(n, f)
    chain = _as_dctmc(comp)
    err = err_metric(f, chain)
    return IphResult(chain, err, n, "plain", seconds=time.perf_counter() - start, components=[comp])


# -- experiments -------------------------------------------------------------


@dataclass
class SweepRow:
    method: str
    n: int
    p: int | None
    err: float
    seconds: float
    flag: str = ""

    def as_csv(self) -> list:
        err = "" if math.isnan(self.err) else f"{self.err:.10g}"
        return [self.method, self.n, "" if self.p is None else self.p, err, f"{self.seconds:.4f}", self.flag]


SWEEP_COLUMNS = ["method", "n", "p", "err", "seconds", "flag"]


def parse_method(spec: str):
    """``plain``, ``shift``, ``slice(p)`` or ``shift+slice(p)`` -> (kind, p)."""
    spec = spec.strip()
    if spec in ("plain", "shift"):
        return spec, None
    for kind in ("shift+slice", "slice"):
        if spec.startswith(kind + "(") and spec.endswith(")"):
            return kind, int(spec[len(kind) + 1:-1])
    raise IphError(f"unknown method {spec!r}")


def run_method(fit, kind: str, n: int, p: int | None, f: Density, mode=EXPONENTIAL_MODE) -> IphResult:
    if kind == "plain":
        return plain_fit(fit, n, f)
    if kind == "shift":
        return iph_shift(fit, n, f)
    if kind == "slice":
        return iph_slice(fit, n, p, f, mode)
    if kind == "shift+slice":
        return iph_shift_slice(fit, n, p, f, mode)
    raise IphError(f"unknown method {kind!r}")


def _sweep_cell(args):
    fit, f, kind, n, p, label = args
    start = time.perf_counter()
    try:
        res = run_method(fit, kind, n, p, f)
        return SweepRow(label, n, p, res.err, time.perf_counter() - start)
    except (IphError, FitError, ArithmeticError, ValueError) as exc:
        return SweepRow(label, n, p, math.nan, time.perf_counter() - start, flag=str(exc))


def sweep_error_vs_phases(fit, f: Density, ns, methods, jobs: int = 1) -> list[SweepRow]:
    """Err for every (method, n) cell; failing cells are flagged, not raised.

    ``methods`` holds strings such as ``"plain"`` or ``"slice(4)"``. The
    ``n`` of a row is the total phase count over all slices.
    """
    if not ns:
        raise ValueError("ns must be nonempty")
    cells = []
    for spec in methods:
        kind, p = parse_method(spec)
        for n in ns:
            cells.append((fit, f, kind, int(n), p, spec))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_cell, cells))
    return [_sweep_cell(c) for c in cells]


@dataclass
class ShiftLawRow:
    shift: float
    closed_form_k: float
    closed_form_phases: int
    measured_phases: int | None
    measured_err: float | None
    flag: str = ""


def closed_form_phases(shift: float, target_variance: float) -> float:
    """Erlang stages needed so the variance error ``s^2 / k`` meets the target."""
    return shift * shift / target_variance


def min_erlang_phases(f: Density, threshold: float, cap: int = 4096, max_evals: int = 200):
    """Smallest Erlang stage count whose best-rate (Err) is at most ``threshold``.

    Doubling then bisection; returns ``(k, err)`` or ``(None, best_err)``.
    """
    g, _ = _unit(f)
    memo = {}

    def err(k):
        if k not in memo:
            memo[k] = _erlang_shape_fit(g, k, max_evals)[1]
        return memo[k]

    hi = 1
    while err(hi) > threshold:
        if hi >= cap:
            return None, err(hi)
        hi = min(2 * hi, cap)
    lo = hi // 2
    if lo < 1 or err(lo) <= threshold:
        return hi if lo < 1 else lo, err(hi if lo < 1 else lo)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if err(mid) <= threshold:
            hi = mid
        else:
            lo = mid
    return hi, err(hi)


def shift_law_experiment(shifts, target_variance: float, base: Density | None = None,
                         err_threshold: float | None = None, cap: int = 4096) -> list[ShiftLawRow]:
    """Phases needed versus shift.

    The closed-form column is ``s^2 / target_variance``. When ``base`` is
    given, the measured column is the least Erlang stage count reaching
    ``err_threshold`` on ``base`` translated so its support starts at ``s``.
    """
    shifts = [float(s) for s in shifts]
    if any(s <= 0 for s in shifts) or shifts != sorted(shifts):
        raise ValueError("shifts must be positive and ascending")
    rows = []
    for s in shifts:
        k = closed_form_phases(s, target_variance)
        row = ShiftLawRow(s, k, max(1, math.ceil(k - 1e-12)), None, None)
        if base is not None:
            dens = _translate_to(base, s)
            kk, e = min_erlang_phases(dens, err_threshold, cap)
            row.measured_phases, row.measured_err = kk, e
            if kk is None:
                row.flag = f"threshold {err_threshold} not reached within {cap} phases"
        rows.append(row)
    return rows


def _translate_to(base: Density, s: float) -> Density:
    """``base`` moved so its support starts exactly at ``s``."""
    from .dist import Shifted

    low = base.support[0]
    if isinstance(base, Empirical):
        trimmed = base.residual(low) if low > 0 else base
        return trimmed.shifted_by(s)
    return Shifted(base.residual(low) if low > 0 else base, s)
