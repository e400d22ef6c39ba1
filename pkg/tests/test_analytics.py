import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from rfqfit.analytics import (
    DEFAULT_GRID,
    AnalyticsError,
    AnalyticsRequest,
    best_price_density,
    expected_outcome_shares,
    export_curves,
    hit_ratio,
    not_traded_probability,
)
from rfqfit.distributions import ClientParams, SepParams, sep_pdf
from rfqfit.model import ModelSpec, Outcome, Pooling, Side, SideParams, Variant
from rfqfit.simulate import ReferenceQuoteRule, SimConfig, outcome_frequencies, simulate_dataset

from conftest import BUY_PARTIAL, SELL_PARTIAL, partial_spec

BUY_N5 = SideParams(SepParams(0.738, 0.141, 0.409, 0.840), ClientParams(1.64, 1.65), 0.351)


def request(side=Side.BUY, n=3, sp=None, grid=tuple(DEFAULT_GRID), variant=Variant.PARTIAL):
    spec = partial_spec() if sp is None else ModelSpec(variant, Pooling.POOLED, {(side, None): sp})
    return AnalyticsRequest(side, n, spec, grid)


def test_single_dealer_density_is_dealer_density():
    grid = np.linspace(-6, 6, 97)
    dens = best_price_density(request(n=1), grid)
    np.testing.assert_allclose(dens, sep_pdf(grid, BUY_PARTIAL.dealer), rtol=1e-12)


@pytest.mark.parametrize("side", list(Side))
@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_best_price_density_normalises(side, n):
    req = request(side, n)
    f = lambda d: float(best_price_density(req, [d])[0])
    mu = req.side_params.dealer.mu
    total = integrate.quad(f, -np.inf, mu, limit=200)[0] + integrate.quad(f, mu, np.inf, limit=200)[0]
    assert total == pytest.approx(1.0, abs=1e-4)


def test_full_answer_gives_minimum_order_statistic():
    sp = BUY_PARTIAL.with_answer_prob(1.0)
    grid = np.linspace(-5, 5, 41)
    dens = best_price_density(request(sp=sp, n=4, variant=Variant.FULL), grid)
    F = np.array([integrate.quad(lambda v: float(sep_pdf(v, sp.dealer)), -np.inf, x)[0] for x in grid])
    expected = 4 * sep_pdf(grid, sp.dealer) * (1 - F) ** 3
    np.testing.assert_allclose(dens, expected, atol=1e-9)


def test_zero_answer_probability_rejected():
    with pytest.raises(AnalyticsError):
        best_price_density(request(sp=BUY_PARTIAL.with_answer_prob(0.0)))


def test_request_validation():
    with pytest.raises(AnalyticsError):
        request(n=6)
    with pytest.raises(AnalyticsError):
        request(grid=(1.0, 0.0))
    with pytest.raises(AnalyticsError):
        request(grid=(0.0, float("inf")))


@pytest.mark.parametrize("n", [1, 3, 5])
def test_hit_ratio_limits_and_monotonicity(n):
    buy = hit_ratio(request(Side.BUY, n))
    sell = hit_ratio(request(Side.SELL, n))
    assert np.all((buy >= 0) & (buy <= 1)) and np.all((sell >= 0) & (sell <= 1))
    assert np.all(np.diff(buy) <= 1e-12) and np.all(np.diff(sell) >= -1e-12)
    far = np.array([-60.0, 60.0])
    assert hit_ratio(request(Side.BUY, n), far) == pytest.approx([1.0, 0.0], abs=1e-6)
    assert hit_ratio(request(Side.SELL, n), far) == pytest.approx([0.0, 1.0], abs=1e-6)


@pytest.mark.parametrize("side", list(Side))
def test_hit_ratio_decreases_with_competition(side):
    curves = np.array([hit_ratio(request(side, n)) for n in range(1, 6)])
    assert np.all(np.diff(curves, axis=0) <= 1e-12)


def test_denominator_is_one_minus_not_traded():
    grid = np.linspace(-4, 4, 33)
    req = request(Side.BUY, 3)
    w = [math.comb(3, k) * 0.4**k * 0.6 ** (3 - k) for k in range(4)]
    from rfqfit.likelihood import case_probabilities
    probs = case_probabilities(grid, 3, BUY_PARTIAL)
    # HR = Done / (1 - NotTraded) with every term from the likelihood module.
    np.testing.assert_allclose(hit_ratio(req, grid), probs["done"] / (1 - probs["not_traded"]), atol=1e-8)
    np.testing.assert_allclose(not_traded_probability(req, grid), probs["not_traded"], atol=1e-12)
    assert sum(w) == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 2.0), st.floats(-2, 2), st.floats(-1, 1), st.floats(0.3, 2), st.floats(-2, 2),
       st.floats(0.3, 3), st.floats(0.05, 1.0), st.integers(1, 5))
def test_reflection_symmetry(alpha, lam, mu, sigma, nu, tau, p, n):
    sp = SideParams(SepParams(alpha, lam, mu, sigma), ClientParams(nu, tau), p)
    grid = np.linspace(-5, 5, 21)
    buy = request(Side.BUY, n, sp, tuple(grid))
    sell = request(Side.SELL, n, sp.reflected(), tuple(-grid[::-1]))
    np.testing.assert_allclose(hit_ratio(buy), hit_ratio(sell)[::-1], atol=1e-10)
    np.testing.assert_allclose(best_price_density(buy), best_price_density(sell)[::-1], atol=1e-10)


def test_best_price_density_matches_simulated_minimum():
    spec = ModelSpec(Variant.PARTIAL, Pooling.POOLED, {(Side.BUY, None): BUY_N5})
    data = simulate_dataset(SimConfig(spec, (0, 0, 0, 0, 1.0), record_count=1_000_000, seed=17))
    lat = data.latent
    answered = lat.a.any(axis=1)
    best = np.where(lat.a, lat.w, np.inf).min(axis=1)[answered]
    grid = np.linspace(-40, 40, 16001)
    dens = best_price_density(request(Side.BUY, 5, BUY_N5), grid)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    res = stats.kstest(best, lambda x: np.interp(x, grid, cdf))
    assert res.pvalue > 0.01


def test_hit_ratio_matches_simulator_at_zero():
    draws = 1_000_000
    spec = ModelSpec(Variant.PARTIAL, Pooling.POOLED, {(Side.BUY, None): BUY_PARTIAL})
    cfg = SimConfig(spec, (0, 0, 1.0, 0, 0), record_count=draws,
                    reference_quote_rule=ReferenceQuoteRule("fixed", 0.0), seed=23)
    table = simulate_dataset(cfg).table
    traded = table.outcome != Outcome.NOT_TRADED
    freq = np.mean(table.outcome[traded] == Outcome.DONE)
    hr = float(hit_ratio(request(Side.BUY, 3, BUY_PARTIAL), [0.0])[0])
    assert abs(freq - hr) < 4 * math.sqrt(hr * (1 - hr) / traded.sum())


def test_expected_shares_match_simulation():
    draws = 500_000
    spec = ModelSpec(Variant.PARTIAL, Pooling.POOLED, {(Side.BUY, None): BUY_PARTIAL})
    data = simulate_dataset(SimConfig(spec, (0, 1.0, 0, 0, 0), record_count=draws, cover_record_prob=0.0, seed=5))
    shares = outcome_frequencies(data).shares(Side.BUY)[1]
    expected = expected_outcome_shares(BUY_PARTIAL, 2)
    for i, key in enumerate(("done", "tied", "covered", "other", "not_traded")):
        q = expected[key]
        assert abs(shares[i] - q) <= 4 * math.sqrt(q * (1 - q) / draws) + 1e-12, key


def test_export_empty_grid_writes_header_only(tmp_path):
    path = tmp_path / "curves.csv"
    assert export_curves(request(grid=()), path) == 0
    assert path.read_text() == "delta,value,n,side,curve_kind\n"


def test_export_is_byte_identical_and_counts_rows(tmp_path):
    grid = tuple(np.linspace(-3, 3, 25))
    reqs = [request(Side.SELL, n, grid=grid) for n in (2, 4)]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert export_curves(reqs, a) == 2 * 2 * 25
    export_curves(reqs, b)
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert len(lines) == 1 + 100
    assert lines[1].endswith(",2,sell,best_price")


def test_export_io_error_names_path(tmp_path):
    target = tmp_path / "missing" / "curves.csv"
    with pytest.raises(OSError, match="missing"):
        export_curves(request(grid=(0.0,)), target)
