import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from iphfit import dist
from iphfit.dist import (ConditioningError, Empirical, Erlang, Exponential, HyperErlang, Shifted, Truncated,
                         Uniform, empirical_from_samples)

X = np.linspace(0.0, 12.0, 241)


@pytest.mark.parametrize("d, ref", [
    (Exponential(1.7), stats.expon(scale=1 / 1.7)),
    (Erlang(4, 2.5), stats.gamma(4, scale=1 / 2.5)),
    (Uniform(1.0, 3.0), stats.uniform(1.0, 2.0)),
    (Shifted(Exponential(2.0), 4.06), stats.expon(loc=4.06, scale=0.5)),
])
def test_pdf_cdf_against_scipy(d, ref):
    np.testing.assert_allclose(d.pdf(X), ref.pdf(X), atol=1e-12)
    np.testing.assert_allclose(d.cdf(X), ref.cdf(X), atol=1e-12)
    assert d.mean == pytest.approx(ref.mean())


def test_hyper_erlang_is_mixture():
    branches = ((0.3, 2, 1.0), (0.7, 5, 4.0))
    h = HyperErlang(branches)
    ref = sum(w * stats.gamma(k, scale=1 / r).pdf(X) for w, k, r in branches)
    np.testing.assert_allclose(h.pdf(X), ref, atol=1e-12)
    assert h.mean == pytest.approx(0.3 * 2 + 0.7 * 5 / 4)


def test_exponential_residual_is_memoryless():
    r = Exponential(3.0).residual(2.2)
    assert isinstance(r, Exponential) and r.rate == 3.0


def test_shifted_residual_inside_shift():
    r = Shifted(Exponential(1.0), 4.0).residual(1.5)
    np.testing.assert_allclose(r.pdf(X), stats.expon(loc=2.5).pdf(X), atol=1e-12)


def test_residual_oracle_formula():
    d = Erlang(3, 1.2)
    a = 1.4
    r = d.residual(a)
    np.testing.assert_allclose(r.pdf(X), d.pdf(X + a) / d.sf(a), rtol=1e-9, atol=1e-14)


def test_residual_beyond_support_raises():
    with pytest.raises(ConditioningError):
        Uniform(0, 2).residual(2.5)


def test_truncated_normalises():
    t = Truncated(Exponential(1.0), 2.0)
    mass, _ = integrate.quad(t.pdf, 0, 2)
    assert mass == pytest.approx(1.0)
    assert t.support == (0.0, 2.0)


def test_empirical_from_samples_histogram():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, 5000)
    e = empirical_from_samples(x, 10)
    assert len(e.masses) == 10
    assert sum(e.masses) == pytest.approx(1.0)
    assert e.mean == pytest.approx(float(np.sum(np.array(e.masses) * (np.array(e.edges[1:]) + e.edges[:-1]) / 2)))


def test_degenerate_samples_single_bin():
    e = empirical_from_samples([5.0] * 20)
    assert len(e.masses) == 1
    assert e.is_degenerate
    lo, hi = e.support
    assert hi - lo == pytest.approx(max(1e-6, 5e-6))
    assert (lo + hi) / 2 == pytest.approx(5.0)


def test_from_dict_round_trip():
    docs = [Exponential(2.0), Erlang(3, 1.5), Uniform(0, 2), Shifted(Erlang(2, 1.0), 4.06),
            HyperErlang(((0.4, 1, 1.0), (0.6, 3, 2.0))), Truncated(Exponential(1.0), 3.0),
            empirical_from_samples([1.0, 2.0, 2.5, 3.0], 3)]
    for d in docs:
        back = dist.from_dict(d.to_dict())
        np.testing.assert_allclose(back.pdf(X), d.pdf(X))


def test_from_dict_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown fields"):
        dist.from_dict({"kind": "exponential", "rate": 1, "scale": 2})
    with pytest.raises(ValueError, match="unknown density kind"):
        dist.from_dict({"kind": "weibull"})


def test_rational_parameters():
    assert dist.from_dict({"kind": "uniform", "a": 0, "b": "81/20"}).support == (0.0, 4.05)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.floats(0.1, 10.0), st.floats(0.0, 5.0))
def test_erlang_cdf_monotone_and_bounded(k, r, shift):
    d = Shifted(Erlang(k, r), shift)
    c = d.cdf(X)
    assert np.all(np.diff(c) >= -1e-15)
    assert np.all((c >= 0) & (c <= 1))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.0, 3.0))
def test_scaled_mean(c, shift):
    d = Shifted(Erlang(2, 1.0), shift)
    assert d.scaled(c).mean == pytest.approx(c * d.mean)
