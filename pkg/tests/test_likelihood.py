import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from rfqfit.distributions import ClientParams, SepParams, gaussian_sf, sep_pdf
from rfqfit.likelihood import (
    LikelihoodError,
    PreparedBatch,
    case_probabilities,
    cover_density,
    covered_two_forms,
    loglik_full,
    loglik_partial,
    partition_terms,
    record_logliks,
    total_loglik,
)
from rfqfit.model import (
    ModelSpec,
    OtherRule,
    Outcome,
    Pooling,
    RecordBatch,
    ReducedRecord,
    Side,
    SideParams,
    SubOutcome,
    Variant,
)
from rfqfit.simulate import ReferenceQuoteRule, SimConfig, simulate_dataset

from conftest import BUY_PARTIAL, SELL_PARTIAL

side_params = st.builds(
    lambda a, lam, mu, s, nu, tau, p: SideParams(SepParams(a, lam, mu, s), ClientParams(nu, tau), p),
    st.floats(0.3, 2.0), st.floats(-2.0, 2.0), st.floats(-1.5, 1.5), st.floats(0.3, 2.5),
    st.floats(-3.0, 3.0), st.floats(0.3, 3.0), st.floats(0.0, 1.0),
)


def rec(outcome, sub=SubOutcome.NOT_APPLICABLE, y=0.0, cover=None, n=3, side=Side.BUY, cov=(0.0, 0.0, 0.0, 0.0)):
    return ReducedRecord(side, outcome, sub, y, cover, n, cov)


def ref_cdf(p, x):
    pdf = lambda v: float(sep_pdf(v, p))
    if x <= p.mu:
        return integrate.quad(pdf, -np.inf, x, epsabs=1e-13)[0]
    return integrate.quad(pdf, -np.inf, p.mu, epsabs=1e-13)[0] + integrate.quad(pdf, p.mu, x, epsabs=1e-13)[0]


@settings(max_examples=80, deadline=None)
@given(side_params, st.floats(-4, 4), st.integers(1, 5), st.sampled_from(list(Variant)), st.sampled_from(list(Side)))
def test_partition_identity(sp, y, n, variant, side):
    total = partition_terms(y, n, sp, variant, side)
    assert abs(float(total[0]) - 1.0) < 1e-6


@settings(max_examples=60, deadline=None)
@given(side_params, st.floats(-4, 4), st.integers(1, 5))
def test_covered_two_forms_agree(sp, y, n):
    a, b = covered_two_forms(y, n, sp)
    assert abs(float(a[0]) - float(b[0])) < 1e-8


def test_done_nocover_at_both_medians():
    dealer = SepParams(0.7, 0.4, 0.2, 1.1)
    med = optimize.brentq(lambda x: ref_cdf(dealer, x) - 0.5, -5, 5, xtol=1e-13)
    sp = SideParams(dealer, ClientParams(med, 1.3), 1.0)
    r = rec(Outcome.DONE, y=med, n=1)
    assert math.exp(loglik_full(r, sp)) == pytest.approx(0.25, abs=1e-9)


def test_not_traded_with_no_effective_competitor_is_client_cdf():
    sp = SideParams(SepParams(0.7, 0.4, 0.2, 1.1), ClientParams(0.5, 1.3), 0.0)
    y = 0.8
    assert math.exp(loglik_partial(rec(Outcome.NOT_TRADED, y=y), sp)) == pytest.approx(
        stats.norm.cdf(y, 0.5, 1.3), rel=1e-9)
    assert math.exp(loglik_partial(rec(Outcome.DONE, y=y), sp)) == pytest.approx(
        stats.norm.sf(y, 0.5, 1.3), rel=1e-9)


ALL_CASES = [
    (Outcome.DONE, SubOutcome.NOT_APPLICABLE, None),
    (Outcome.DONE, SubOutcome.NOT_APPLICABLE, 0.9),
    (Outcome.TRADED_AWAY, SubOutcome.TIED, None),
    (Outcome.TRADED_AWAY, SubOutcome.COVERED, None),
    (Outcome.TRADED_AWAY, SubOutcome.OTHER, None),
    (Outcome.NOT_TRADED, SubOutcome.NOT_APPLICABLE, None),
]


@pytest.mark.parametrize("outcome,sub,cover", ALL_CASES)
@pytest.mark.parametrize("n", [1, 3, 5])
def test_partial_with_p_one_equals_full(outcome, sub, cover, n):
    sp = BUY_PARTIAL.with_answer_prob(1.0)
    r = rec(outcome, sub, y=0.3, cover=cover, n=n)
    assert loglik_partial(r, sp) == pytest.approx(loglik_full(r, sp), abs=1e-12)


def test_done_with_cover_is_binomial_mixture():
    p = 0.4
    sp = BUY_PARTIAL.with_answer_prob(p)
    y, c = 0.1, 0.7
    d, cl = sp.dealer, sp.client
    F = ref_cdf(d, c)
    f = float(sep_pdf(c, d))
    sfv = float(gaussian_sf(y, cl))
    l1 = f * sfv
    l2 = 2 * f * (1 - F) * sfv
    expected = 2 * p * (1 - p) * l1 + p * p * l2
    assert math.exp(loglik_partial(rec(Outcome.DONE, y=y, cover=c, n=2), sp)) == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("y", [-1.0, 0.4, 2.0])
def test_cover_density_integrates_to_done_probability(variant, y):
    sp = BUY_PARTIAL
    n = 3
    dens = lambda c: float(cover_density(c, y, n, sp, variant)[0])
    total = integrate.quad(dens, y, sp.dealer.mu, epsabs=1e-12)[0] if y < sp.dealer.mu else 0.0
    total += integrate.quad(dens, max(y, sp.dealer.mu), np.inf, epsabs=1e-12, limit=200)[0]
    probs = case_probabilities(y, n, sp, variant)
    # Only RFQs with at least one effective competitor have a cover.
    q = 1.0 if variant is Variant.FULL else sp.answer_prob
    no_comp = (1 - q) ** n * float(gaussian_sf(y, sp.client))
    assert total == pytest.approx(float(probs["done"][0]) - no_comp, abs=1e-6)


def test_case_probabilities_match_monte_carlo():
    """Analytic outcome shares at a fixed reference quote vs the simulator."""
    y0, n, draws = 0.0, 3, 400_000
    spec = ModelSpec(Variant.PARTIAL, Pooling.POOLED, {(Side.BUY, None): BUY_PARTIAL})
    cfg = SimConfig(spec, (0, 0, 1.0, 0, 0), 1.0, draws, cover_record_prob=0.0,
                    reference_quote_rule=ReferenceQuoteRule("fixed", y0), seed=3)
    batch = simulate_dataset(cfg).batch()
    probs = case_probabilities(y0, n, BUY_PARTIAL)
    observed = {
        "done": batch.outcome == Outcome.DONE,
        "covered": batch.sub_outcome == SubOutcome.COVERED,
        "other": batch.sub_outcome == SubOutcome.OTHER,
        "traded_away": batch.outcome == Outcome.TRADED_AWAY,
        "not_traded": batch.outcome == Outcome.NOT_TRADED,
    }
    for key, hits in observed.items():
        q = float(probs[key][0])
        se = math.sqrt(q * (1 - q) / draws)
        assert abs(hits.mean() - q) < 4 * se, key


@settings(max_examples=40, deadline=None)
@given(side_params, st.floats(-4, 4), st.integers(1, 5), st.sampled_from(ALL_CASES))
def test_sell_mirror(sp, y, n, case):
    outcome, sub, cover = case
    buy_cover = None if cover is None else y + cover
    buy = rec(outcome, sub, y=y, cover=buy_cover, n=n)
    sell = rec(outcome, sub, y=-y, cover=None if buy_cover is None else -buy_cover, n=n, side=Side.SELL)
    a = loglik_partial(buy, sp)
    b = loglik_partial(sell, sp.reflected())
    if math.isinf(a):
        assert a == b
    else:
        assert b == pytest.approx(a, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(side_params, st.integers(1, 5))
def test_done_nocover_nonincreasing_in_quote(sp, n):
    y = np.linspace(-6, 6, 121)
    done = case_probabilities(y, n, sp)["done"]
    assert np.all(np.diff(done) <= 1e-12)


def spec_of(sp, variant=Variant.PARTIAL):
    return ModelSpec(variant, Pooling.POOLED, {(Side.BUY, None): sp, (Side.SELL, None): SELL_PARTIAL})


def test_empty_dataset_is_zero():
    assert total_loglik([], spec_of(BUY_PARTIAL)) == 0.0


def test_duplicate_record_doubles():
    r = rec(Outcome.TRADED_AWAY, SubOutcome.COVERED, y=0.5)
    one = total_loglik([r], spec_of(BUY_PARTIAL))
    assert total_loglik([r, r], spec_of(BUY_PARTIAL)) == 2 * one


def test_impossible_record_is_reported():
    sp = BUY_PARTIAL.with_answer_prob(0.0)
    records = [rec(Outcome.TRADED_AWAY, SubOutcome.OTHER), rec(Outcome.DONE)]
    terms = record_logliks(RecordBatch.from_records(records), spec_of(sp))
    assert terms[0] == -np.inf and np.isfinite(terms[1])
    with pytest.raises(LikelihoodError) as err:
        total_loglik(records, spec_of(sp))
    assert err.value.count == 1


def test_extreme_quotes_give_no_nan():
    records = [rec(o, s, y=y, cover=None) for o, s, _ in ALL_CASES for y in (-60.0, 60.0, 1e6)]
    terms = record_logliks(RecordBatch.from_records(records), spec_of(BUY_PARTIAL))
    assert not np.isnan(terms).any()


def test_covariate_loading_shifts_both_laws():
    base = BUY_PARTIAL
    loaded = SideParams(base.dealer, base.client, base.answer_prob, (("high_yield", 0.38),), (("high_yield", 0.71),))
    shifted = SideParams(base.dealer.shifted(-0.38), base.client.shifted(-0.71), base.answer_prob)
    for outcome, sub, cover in ALL_CASES:
        a = loglik_partial(rec(outcome, sub, y=0.2, cover=cover, cov=(1.0, 0.0, 0.0, 0.0)), loaded)
        b = loglik_partial(rec(outcome, sub, y=0.2, cover=cover), shifted)
        assert a == pytest.approx(b, abs=1e-12)
        c = loglik_partial(rec(outcome, sub, y=0.2, cover=cover), loaded)
        d = loglik_partial(rec(outcome, sub, y=0.2, cover=cover), base)
        assert c == pytest.approx(d, abs=1e-12)


def test_batch_matches_single_records():
    spec = ModelSpec(Variant.PARTIAL, Pooling.POOLED, {(Side.BUY, None): BUY_PARTIAL, (Side.SELL, None): SELL_PARTIAL})
    data = simulate_dataset(SimConfig(spec, sides_mix=0.5, record_count=300, cover_record_prob=0.5, seed=9))
    batch = data.batch()
    bulk = record_logliks(PreparedBatch(batch), spec)
    for i, r in enumerate(data.records()):
        sp = spec.side_params(r.side, r.n_other)
        assert bulk[i] == pytest.approx(loglik_partial(r, sp), abs=1e-10)


def test_large_batch_matches_small_batch_evaluation():
    spec = ModelSpec(Variant.PARTIAL, Pooling.POOLED, {(Side.BUY, None): BUY_PARTIAL, (Side.SELL, None): SELL_PARTIAL})
    batch = simulate_dataset(SimConfig(spec, sides_mix=0.5, record_count=30_000, seed=2)).batch()
    bulk = record_logliks(batch, spec)
    pieces = np.concatenate([record_logliks(batch.subset(np.arange(i, min(i + 500, len(batch)))), spec)
                             for i in range(0, len(batch), 500)])
    np.testing.assert_allclose(bulk, pieces, atol=1e-11)


def test_true_parameters_beat_shifted_location():
    wins = 0
    shifted = SideParams(BUY_PARTIAL.dealer.shifted(0.3), BUY_PARTIAL.client, BUY_PARTIAL.answer_prob)
    for seed in range(100):
        spec = ModelSpec(Variant.PARTIAL, Pooling.POOLED, {(Side.BUY, None): BUY_PARTIAL})
        cfg = SimConfig(spec, record_count=10_000, cover_record_prob=0.0, seed=seed)
        prepared = PreparedBatch(simulate_dataset(cfg).batch())
        alt = ModelSpec(Variant.PARTIAL, Pooling.POOLED, {(Side.BUY, None): shifted})
        wins += total_loglik(prepared, spec) >= total_loglik(prepared, alt)
    assert wins >= 95


@pytest.mark.parametrize("n", [1, 2, 4])
def test_other_rules(n):
    y = 0.35
    probs = case_probabilities(y, n, BUY_PARTIAL)
    r = rec(Outcome.TRADED_AWAY, SubOutcome.OTHER, y=y, n=n)
    assert math.exp(loglik_partial(r, BUY_PARTIAL)) == pytest.approx(float(probs["other"][0]), rel=1e-9)
    missing = loglik_partial(r, BUY_PARTIAL, OtherRule.MISSING)
    assert math.exp(missing) == pytest.approx(float(probs["traded_away"][0]), rel=1e-9)


def test_exclusive_outcome_probabilities_sum_to_one():
    # Done, covered, other and not traded partition the sample space.
    for n in range(1, 6):
        probs = case_probabilities(np.linspace(-3, 3, 13), n, BUY_PARTIAL)
        total = probs["done"] + probs["covered"] + probs["other"] + probs["not_traded"]
        np.testing.assert_allclose(total, 1.0, atol=1e-9)
