import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from iphfit.dist import Erlang, Exponential, HyperErlang, Shifted, Uniform
from iphfit.model import erlang_chain, hyper_erlang_chain
from iphfit.phfit import (FitError, candidate_structures, err_metric, fit_erlang, fit_hyper_erlang, get_fitter,
                          partitions)


def quad_err(f, g, hi):
    # independent oracle: scipy quad on a fine breakpoint grid
    pts = np.linspace(0, hi, 41)
    return sum(integrate.quad(lambda x: abs(f.pdf(x) - g.pdf(x)), a, b, limit=200)[0]
               for a, b in zip(pts[:-1], pts[1:]))


def test_err_identical_is_zero():
    assert err_metric(Erlang(3, 2.0), Erlang(3, 2.0)) < 1e-9


def test_err_disjoint_is_two():
    assert err_metric(Uniform(0, 1), Uniform(2, 3)) == pytest.approx(2.0, abs=1e-7)


@pytest.mark.parametrize("f, g, hi", [
    (Uniform(0, 2), Erlang(2, 2.0), 30.0),
    (Exponential(1.0), Erlang(3, 3.0), 40.0),
    (Shifted(Exponential(1.0), 1.0), Exponential(0.5), 80.0),
])
def test_err_against_quad(f, g, hi):
    assert err_metric(f, g) == pytest.approx(quad_err(f, g, hi), abs=1e-6)


def test_fit_erlang_exponential_is_exact():
    ch = fit_erlang(1, Exponential(3.0))
    assert ch.rates[1] == pytest.approx(3.0, rel=1e-6)


def test_fit_erlang_recovers_erlang():
    ch = fit_erlang(4, Erlang(4, 2.0))
    assert ch.meta["stages"] == 4
    assert ch.rates[1] == pytest.approx(2.0, rel=1e-5)


def test_more_phases_never_worse():
    f = Uniform(0, 2)
    errs = [fit_erlang(n, f).meta["err"] for n in (1, 2, 4, 8, 16)]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))


def test_hyper_erlang_recovers_mixture():
    target = HyperErlang(((0.4, 1, 0.5), (0.6, 3, 4.0)))
    ch = fit_hyper_erlang(4, target, samples=20_000, max_candidates=20, refine=4, polish=1, seed=1)
    assert err_metric(target, ch) < 0.05


def test_hyper_erlang_deterministic_given_seed():
    f = Uniform(0, 2)
    a = fit_hyper_erlang(4, f, samples=5000, max_candidates=6, refine=2, polish=0, seed=7)
    b = fit_hyper_erlang(4, f, samples=5000, max_candidates=6, refine=2, polish=0, seed=7)
    np.testing.assert_array_equal(a.rates, b.rates)
    np.testing.assert_array_equal(a.init, b.init)


def test_partitions_count():
    # partitions of 6 into 2 parts: 5+1, 4+2, 3+3
    assert sorted(tuple(sorted(p)) for p in partitions(6, 2)) == [(1, 5), (2, 4), (3, 3)]
    assert all(sum(s) == 6 for s in candidate_structures(6, None, 4, 100))


def test_fitter_errors():
    with pytest.raises(FitError):
        get_fitter("acyclic")
    with pytest.raises(FitError):
        fit_erlang(0, Exponential(1.0))
    with pytest.raises(FitError):
        fit_hyper_erlang(2, Exponential(1.0), branches=3)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.floats(0.2, 5.0), st.floats(0.0, 3.0), st.integers(1, 6), st.floats(0.2, 5.0))
def test_err_is_bounded(k1, r1, s1, k2, r2):
    assert 0.0 <= err_metric(Shifted(Erlang(k1, r1), s1), erlang_chain(k2, r2)) <= 2.0


def test_chain_density_matches_closed_form():
    ch = hyper_erlang_chain(((0.5, 2, 1.0), (0.5, 1, 3.0)))
    x = np.linspace(0, 6, 50)
    object.__setattr__(ch, "closed_form", None)
    np.testing.assert_allclose(ch.pdf(x), HyperErlang(((0.5, 2, 1.0), (0.5, 1, 3.0))).pdf(x), atol=1e-10)
