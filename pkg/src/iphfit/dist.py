"""One-dimensional densities on [0, inf).

Every density kind is an immutable value object that can evaluate its pdf and
cdf (vectorised over numpy arrays), report its support, draw samples from a
caller-owned ``numpy.random.Generator``, and form the conditional density of
the remaining delay after some time has elapsed without occurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import special, stats

SUPPORT_MASS_THRESHOLD = 1e-9
MIN_BINS, MAX_BINS = 10, 1000


class ConditioningError(ValueError):
    """Raised when conditioning on an event of probability zero."""


def _out(values, x):
    """Return a python float for scalar input, the array otherwise."""
    if np.ndim(x) == 0:
        return float(values)
    return values


class Density:
    """Base class for all density kinds."""

    kind: str = ""

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return _out(self._pdf(x), x)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return _out(np.clip(self._cdf(x), 0.0, 1.0), x)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        return _out(np.clip(self._sf(x), 0.0, 1.0), x)

    def _sf(self, x):
        return 1.0 - self._cdf(x)

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def breakpoints(self) -> list[float]:
        """Points where the density may be discontinuous or kinked."""
        return [self.support[0]]

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def residual(self, elapsed: float) -> "Density":
        raise NotImplementedError

    def scaled(self, c: float) -> "Density":
        """Density of ``c * X``."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check_conditioning(self, elapsed: float) -> None:
        if elapsed < 0:
            raise ValueError(f"elapsed time must be nonnegative, got {elapsed}")
        if elapsed >= self.support[1] or self.sf(elapsed) <= 0.0:
            raise ConditioningError(
                f"conditioning on zero-probability event (elapsed={elapsed}, "
                f"support_high={self.support[1]})"
            )


@dataclass(frozen=True)
class Exponential(Density):
    rate: float
    kind = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def _pdf(self, x):
        return np.where(x >= 0, self.rate * np.exp(-self.rate * np.maximum(x, 0)), 0.0)

    def _cdf(self, x):
        return np.where(x > 0, -np.expm1(-self.rate * np.maximum(x, 0)), 0.0)

    def _sf(self, x):
        return np.where(x > 0, np.exp(-self.rate * np.maximum(x, 0)), 1.0)

    @property
    def mean(self):
        return 1.0 / self.rate

    @property
    def support(self):
        return (0.0, math.inf)

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def ppf(self, q):
        return -np.log1p(-np.asarray(q)) / self.rate

    def residual(self, elapsed):
        self._check_conditioning(elapsed)
        return self

    def scaled(self, c):
        return Exponential(self.rate / c)

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}


def _erlang_pdf(x, k, r):
    # log-space evaluation; much cheaper than scipy.stats in tight loops
    xp = np.maximum(x, 0.0)
    logp = k * math.log(r) + special.xlogy(k - 1, xp) - r * xp - special.gammaln(k)
    return np.where(x >= 0, np.exp(logp), 0.0)


def _erlang_cdf(x, k, r):
    return special.gammainc(k, r * np.maximum(x, 0.0))


def _erlang_sf(x, k, r):
    return special.gammaincc(k, r * np.maximum(x, 0.0))


@dataclass(frozen=True)
class Erlang(Density):
    phases: int
    rate: float
    kind = "erlang"

    def __post_init__(self):
        if int(self.phases) != self.phases or self.phases < 1:
            raise ValueError(f"phases must be a positive integer, got {self.phases}")
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def _pdf(self, x):
        return _erlang_pdf(x, self.phases, self.rate)

    def _cdf(self, x):
        return _erlang_cdf(x, self.phases, self.rate)

    def _sf(self, x):
        return _erlang_sf(x, self.phases, self.rate)

    @property
    def mean(self):
        return self.phases / self.rate

    @property
    def support(self):
        return (0.0, math.inf)

    def sample(self, rng, size=None):
        return rng.gamma(self.phases, 1.0 / self.rate, size)

    def ppf(self, q):
        return stats.gamma.ppf(q, self.phases, scale=1.0 / self.rate)

    def residual(self, elapsed):
        self._check_conditioning(elapsed)
        if elapsed == 0:
            return self
        return HyperErlang(((1.0, self.phases, self.rate),)).residual(elapsed)

    def scaled(self, c):
        return Erlang(self.phases, self.rate / c)

    def to_dict(self):
        return {"kind": self.kind, "phases": self.phases, "rate": self.rate}


@dataclass(frozen=True)
class Uniform(Density):
    a: float
    b: float
    kind = "uniform"

    def __post_init__(self):
        if not 0 <= self.a < self.b:
            raise ValueError(f"need 0 <= a < b, got a={self.a}, b={self.b}")

    def _pdf(self, x):
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def _cdf(self, x):
        return np.clip((x - self.a) / (self.b - self.a), 0.0, 1.0)

    @property
    def mean(self):
        return 0.5 * (self.a + self.b)

    @property
    def support(self):
        return (float(self.a), float(self.b))

    def breakpoints(self):
        return [self.a, self.b]

    def sample(self, rng, size=None):
        return rng.uniform(self.a, self.b, size)

    def ppf(self, q):
        return self.a + np.asarray(q) * (self.b - self.a)

    def residual(self, elapsed):
        self._check_conditioning(elapsed)
        if elapsed == 0:
            return self
        return Uniform(max(self.a - elapsed, 0.0), self.b - elapsed)

    def scaled(self, c):
        return Uniform(self.a * c, self.b * c)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Shifted(Density):
    base: Density
    shift: float
    kind = "shifted"

    def __post_init__(self):
        if self.shift < 0:
            raise ValueError(f"shift must be nonnegative, got {self.shift}")

    def _pdf(self, x):
        return self.base._pdf(x - self.shift)

    def _cdf(self, x):
        return self.base._cdf(x - self.shift)

    def _sf(self, x):
        return self.base._sf(x - self.shift)

    @property
    def mean(self):
        return self.base.mean + self.shift

    @property
    def support(self):
        lo, hi = self.base.support
        return (lo + self.shift, hi + self.shift)

    def breakpoints(self):
        return [p + self.shift for p in self.base.breakpoints()]

    def sample(self, rng, size=None):
        return self.base.sample(rng, size) + self.shift

    def residual(self, elapsed):
        self._check_conditioning(elapsed)
        if elapsed == 0:
            return self
        if elapsed < self.shift:
            return Shifted(self.base, self.shift - elapsed)
        return self.base.residual(elapsed - self.shift)

    def scaled(self, c):
        return Shifted(self.base.scaled(c), self.shift * c)

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(), "shift": self.shift}


@dataclass(frozen=True)
class HyperErlang(Density):
    """Mixture of Erlang densities; ``branches`` holds ``(weight, phases, rate)``."""

    branches: tuple
    kind = "hyper-erlang"

    def __post_init__(self):
        br = tuple((float(w), int(k), float(r)) for w, k, r in self.branches)
        if not br:
            raise ValueError("hyper-erlang needs at least one branch")
        if any(w < 0 or k < 1 or r <= 0 for w, k, r in br):
            raise ValueError(f"invalid hyper-erlang branches {br}")
        total = sum(w for w, _, _ in br)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"branch weights sum to {total}, expected 1")
        object.__setattr__(self, "branches", br)

    def _pdf(self, x):
        out = np.zeros_like(x, dtype=float)
        for w, k, r in self.branches:
            if w > 0:
                out = out + w * _erlang_pdf(x, k, r)
        return out

    def _cdf(self, x):
        return sum(w * _erlang_cdf(x, k, r) for w, k, r in self.branches)

    def _sf(self, x):
        return sum(w * _erlang_sf(x, k, r) for w, k, r in self.branches)

    @property
    def mean(self):
        return sum(w * k / r for w, k, r in self.branches)

    @property
    def support(self):
        return (0.0, math.inf)

    def sample(self, rng, size=None):
        w = np.array([b[0] for b in self.branches])
        n = 1 if size is None else size
        idx = rng.choice(len(w), size=n, p=w / w.sum())
        ks = np.array([b[1] for b in self.branches])[idx]
        rs = np.array([b[2] for b in self.branches])[idx]
        out = rng.gamma(ks, 1.0 / rs)
        return float(out[0]) if size is None else out

    def residual(self, elapsed):
        self._check_conditioning(elapsed)
        if elapsed == 0:
            return self
        # A branch with k phases and rate r, not yet absorbed at t, has j
        # phases left with probability proportional to Poisson(k - j; r t).
        merged: dict[tuple[int, float], float] = {}
        for w, k, r in self.branches:
            if w == 0:
                continue
            j = np.arange(1, k + 1)
            logp = (k - j) * math.log(r * elapsed) - r * elapsed - special.gammaln(k - j + 1)
            logw = math.log(w) + logp
            for jj, lw in zip(j, logw):
                merged[(int(jj), r)] = merged.get((int(jj), r), 0.0) + math.exp(lw)
        total = sum(merged.values())
        if total <= 0:
            raise ConditioningError(f"conditioning on zero-probability event (elapsed={elapsed})")
        branches = tuple((v / total, k, r) for (k, r), v in sorted(merged.items()) if v > 0)
        return HyperErlang(_renormalise(branches))

    def scaled(self, c):
        return HyperErlang(tuple((w, k, r / c) for w, k, r in self.branches))

    def to_dict(self):
        return {"kind": self.kind, "branches": [list(b) for b in self.branches]}


def _renormalise(branches):
    total = sum(b[0] for b in branches)
    return tuple((w / total, k, r) for w, k, r in branches)


@dataclass(frozen=True)
class Truncated(Density):
    """``base`` conditioned on being at most ``upper``."""

    base: Density
    upper: float
    kind = "truncated"

    def __post_init__(self):
        if not self.upper > self.base.support[0] or self.base.cdf(self.upper) <= 0:
            raise ValueError(f"truncation at {self.upper} leaves no mass")

    @cached_property
    def _norm(self):
        return float(self.base.cdf(self.upper))

    def _pdf(self, x):
        return np.where(x <= self.upper, self.base._pdf(x) / self._norm, 0.0)

    def _cdf(self, x):
        return np.minimum(self.base._cdf(np.minimum(x, self.upper)) / self._norm, 1.0)

    @cached_property
    def mean(self):
        from scipy import integrate

        lo = self.base.support[0]
        val, _ = integrate.quad(lambda t: self.sf(t), lo, self.upper, limit=200)
        return lo + val

    @property
    def support(self):
        lo, hi = self.base.support
        return (lo, min(hi, self.upper))

    def breakpoints(self):
        return [p for p in self.base.breakpoints() if p < self.upper] + [self.upper]

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        out = np.empty(n)
        filled = 0
        while filled < n:
            draw = np.atleast_1d(self.base.sample(rng, max(16, int(1.2 * (n - filled) / self._norm))))
            draw = draw[draw <= self.upper][: n - filled]
            out[filled:filled + len(draw)] = draw
            filled += len(draw)
        return float(out[0]) if size is None else out

    def residual(self, elapsed):
        self._check_conditioning(elapsed)
        if elapsed == 0:
            return self
        return Truncated(self.base.residual(elapsed), self.upper - elapsed)

    def scaled(self, c):
        return Truncated(self.base.scaled(c), self.upper * c)

    def to_dict(self):
        return {"kind": self.kind, "base": self.base.to_dict(), "upper": self.upper}


@dataclass(frozen=True)
class Empirical(Density):
    """Histogram density, piecewise constant on ``edges``."""

    edges: tuple
    masses: tuple
    samples: tuple | None = field(default=None, compare=False, repr=False)
    kind = "empirical"

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if edges.ndim != 1 or len(edges) != len(masses) + 1 or len(masses) == 0:
            raise ValueError("need len(edges) == len(masses) + 1 >= 2")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if edges[0] < 0:
            raise ValueError("bin edges must be nonnegative")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-9:
            raise ValueError(f"bin masses must be nonnegative and sum to 1 (sum={masses.sum()})")
        object.__setattr__(self, "edges", tuple(edges.tolist()))
        object.__setattr__(self, "masses", tuple((masses / masses.sum()).tolist()))

    @cached_property
    def _e(self):
        return np.array(self.edges)

    @cached_property
    def _m(self):
        return np.array(self.masses)

    @cached_property
    def _cum(self):
        return np.concatenate([[0.0], np.cumsum(self._m)])

    def _pdf(self, x):
        e, m = self._e, self._m
        heights = np.concatenate([[0.0], m / np.diff(e), [0.0]])
        # left-closed bins; the last edge belongs to the last bin
        idx = np.searchsorted(e, x, side="right")
        idx = np.where(x == e[-1], len(m), idx)
        return heights[idx]

    def _cdf(self, x):
        return np.interp(x, self._e, self._cum)

    @property
    def mean(self):
        mids = 0.5 * (self._e[1:] + self._e[:-1])
        return float(np.dot(mids, self._m))

    @property
    def support(self):
        m = self._m
        nz = np.flatnonzero(m > SUPPORT_MASS_THRESHOLD)
        return (float(self._e[nz[0]]), float(self._e[nz[-1] + 1]))

    def breakpoints(self):
        return list(self.edges)

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        idx = rng.choice(len(self._m), size=n, p=self._m)
        out = rng.uniform(self._e[idx], self._e[idx + 1])
        return float(out[0]) if size is None else out

    def ppf(self, q):
        return np.interp(q, self._cum, self._e)

    def residual(self, elapsed):
        self._check_conditioning(elapsed)
        if elapsed == 0:
            return self
        e, m = self._e, self._m
        if elapsed <= e[0]:
            return Empirical(tuple(e - elapsed), tuple(m))
        i = int(np.searchsorted(e, elapsed, side="right")) - 1
        frac = (e[i + 1] - elapsed) / (e[i + 1] - e[i])
        new_m = np.concatenate([[m[i] * frac], m[i + 1:]])
        new_e = np.concatenate([[elapsed], e[i + 1:]]) - elapsed
        if new_e[1] <= new_e[0]:
            new_e, new_m = new_e[1:], new_m[1:]
        return Empirical(tuple(new_e), tuple(new_m / new_m.sum()))

    def scaled(self, c):
        return Empirical(tuple(self._e * c), self.masses)

    def shifted_by(self, s):
        """Histogram translated by ``s`` (stays an empirical density)."""
        return Empirical(tuple(self._e + s), self.masses)

    @property
    def is_degenerate(self) -> bool:
        lo, hi = self.support
        return len(self.masses) == 1 and hi - lo <= max(1e-6, 1e-6 * hi) * (1 + 1e-9)

    def to_dict(self):
        out = {"kind": self.kind, "edges": list(self.edges), "masses": list(self.masses)}
        if self.samples is not None:
            out["samples"] = list(self.samples)
        return out


# -- module-level API -------------------------------------------------------

def density_eval(d: Density, x):
    return d.pdf(x)


def cdf_eval(d: Density, x):
    return d.cdf(x)


def support_bounds(d: Density) -> tuple[float, float]:
    return d.support


def residual_density(d: Density, elapsed: float) -> Density:
    """Conditional density of the remaining delay given no occurrence before ``elapsed``."""
    return d.residual(elapsed)


def sample(d: Density, rng: np.random.Generator, size=None):
    return d.sample(rng, size)


def auto_bin_count(samples: np.ndarray) -> int:
    """Freedman-Diaconis bin count clamped to [MIN_BINS, MAX_BINS]."""
    x = np.asarray(samples, dtype=float)
    span = x.max() - x.min()
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    if iqr <= 0 or span <= 0:
        return MIN_BINS
    width = 2.0 * iqr * len(x) ** (-1.0 / 3.0)
    return int(np.clip(math.ceil(span / width), MIN_BINS, MAX_BINS))


def empirical_from_samples(samples: Sequence[float], bins: int | str = "auto") -> Empirical:
    """Histogram density of nonnegative samples.

    ``bins`` is a count or ``"auto"`` (Freedman-Diaconis, clamped). All-equal
    samples give a single narrow bin centred on the value.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    bad = np.flatnonzero(~(x >= 0) | ~np.isfinite(x))
    if bad.size:
        raise ValueError(f"sample {bad[0]} is negative or not finite: {x[bad[0]]}")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        w = max(1e-6, 1e-6 * lo)
        left = max(lo - w / 2, 0.0)
        return Empirical((left, left + w), (1.0,), samples=tuple(x.tolist()))
    nb = auto_bin_count(x) if bins == "auto" else int(bins)
    if nb < 1:
        raise ValueError(f"bin count must be positive, got {bins}")
    edges = np.linspace(lo, hi, nb + 1)
    counts, _ = np.histogram(x, bins=edges)
    return Empirical(tuple(edges), tuple(counts / counts.sum()), samples=tuple(x.tolist()))


def from_dict(doc: dict) -> Density:
    """Build a density from its tree-structured description."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError(f"density description needs a 'kind': {doc!r}")
    kind = doc["kind"]
    allowed = {
        "exponential": {"rate"},
        "erlang": {"phases", "rate"},
        "uniform": {"a", "b"},
        "shifted": {"base", "shift"},
        "hyper-erlang": {"branches"},
        "truncated": {"base", "upper"},
        "empirical": {"edges", "masses", "samples"},
        "samples": {"values", "bins"},
    }
    if kind not in allowed:
        raise ValueError(f"unknown density kind {kind!r}")
    extra = set(doc) - allowed[kind] - {"kind"}
    if extra:
        raise ValueError(f"unknown fields for {kind}: {sorted(extra)}")
    if kind == "exponential":
        return Exponential(_num(doc["rate"]))
    if kind == "erlang":
        return Erlang(int(doc["phases"]), _num(doc["rate"]))
    if kind == "uniform":
        return Uniform(_num(doc["a"]), _num(doc["b"]))
    if kind == "shifted":
        return Shifted(from_dict(doc["base"]), _num(doc["shift"]))
    if kind == "hyper-erlang":
        return HyperErlang(tuple((_num(w), int(k), _num(r)) for w, k, r in doc["branches"]))
    if kind == "truncated":
        return Truncated(from_dict(doc["base"]), _num(doc["upper"]))
    if kind == "samples":
        return empirical_from_samples(doc["values"], doc.get("bins", "auto"))
    samples = doc.get("samples")
    return Empirical(tuple(map(float, doc["edges"])), tuple(map(float, doc["masses"])),
                     samples=None if samples is None else tuple(map(float, samples)))


def _num(v) -> float:
    """Accept numbers, decimal strings and rationals like ``"81/20"``."""
    if isinstance(v, str) and "/" in v:
        num, den = v.split("/")
        return float(num) / float(den)
    return float(v)
