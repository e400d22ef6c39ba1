"""Per-RFQ likelihoods for the full- and partial-participation models.

Everything is written for buy RFQs.  Sell RFQs are scored by reflection:
quotes are negated and (mu, lambda, nu, beta, gamma) change sign, which turns
the sell mechanism (highest price wins, trade iff price >= V) into the buy one.

With j effective competitors, F/f the dealer cdf/pdf and G/g the client
cdf/pdf, the case likelihoods are::

    done, cover C   j f(C) (1-F(C))^(j-1) (1-G(Y))
    done, no cover  (1-F(Y))^j (1-G(Y))
    tied            j (1-F(Y))^(j-1) f(Y) (1-G(Y))
    covered         j (1-F(Y))^(j-1) int_{-inf}^Y (1-G) f
    traded away     1 - (1-F(Y))^j (1-G(Y)) - int_{-inf}^Y (1-F)^j g
    other           traded away - covered
    not traded      int_{-inf}^Y (1-F)^j g

and the partial model mixes them over j ~ Binomial(n, p).  Under
OtherRule.MISSING an "other" record is scored with the traded-away total.
"""

from __future__ import annotations

import functools
import logging
import math
from typing import Iterable, Sequence

import numpy as np

from .chebyshev import ROW_CDF, ROW_COVER, IntegralTable, row_survival
from .distributions import ClientParams, SepParams, gaussian_logsf, gaussian_sf, sep_logpdf
from .model import (
    ModelSpec,
    OtherRule,
    Outcome,
    Pooling,
    ReducedRecord,
    RecordBatch,
    RfqRecord,
    Side,
    SideParams,
    SubOutcome,
    Variant,
)

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-300
_TABLE_CACHE_SIZE = 64


class LikelihoodError(ArithmeticError):
    """Some records have zero likelihood under the given parameters."""

    def __init__(self, count: int):
        super().__init__(f"{count} record(s) have zero likelihood")
        self.count = count


@functools.lru_cache(maxsize=_TABLE_CACHE_SIZE)
def integral_table(dealer: SepParams, client: ClientParams, kmax: int) -> IntegralTable:
    return IntegralTable(dealer, client, kmax)


def clear_cache() -> None:
    integral_table.cache_clear()


def binomial_weights(n: np.ndarray, p: float, variant: Variant, kmax: int) -> np.ndarray:
    """(N, kmax+1) matrix of P(effective competitors = j | n)."""
    n = np.asarray(n, dtype=int)
    j = np.arange(kmax + 1)
    if variant is Variant.FULL:
        return (j[None, :] == n[:, None]).astype(float)
    comb = np.array([[math.comb(int(m), int(k)) for k in j] for m in range(kmax + 1)], dtype=float)
    w = comb[n] * p ** j[None, :] * (1.0 - p) ** np.maximum(n[:, None] - j[None, :], 0)
    w[j[None, :] > n[:, None]] = 0.0
    return w


def _log_linear(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(x > 0.0, np.log(np.maximum(x, PROB_FLOOR)), -np.inf)


def _times_log(k, log_x):
    """k * log_x with 0 * (-inf) read as 0 (x**0 = 1)."""
    k = np.asarray(k, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(k == 0, 0.0, k * log_x)


class _Evaluator:
    """Quantities shared by every case at a set of reduced quotes y."""

    def __init__(self, dealer: SepParams, client: ClientParams, kmax: int, y: np.ndarray,
                 js: Sequence[int] | None = None):
        self.kmax = kmax
        self.table = integral_table(dealer, client, kmax)
        self.dealer, self.client = dealer, client
        self.y = y
        js = range(kmax + 1) if js is None else js
        rows = [ROW_CDF, ROW_COVER] + [row_survival(j) for j in js]
        rows += [self.table.row_complement(j) for j in js if j >= 1]
        self.vals = self.table.values(y, rows)
        self.cdf = self.vals[ROW_CDF]
        with np.errstate(divide="ignore"):
            self.log_sf = np.log1p(-self.cdf)
        self.log_sf_client = gaussian_logsf(y, client)
        self.sf_client = gaussian_sf(y, client)

    def survival_integral(self, j: int) -> np.ndarray:
        return self.vals[row_survival(j)]

    def complement_integral(self, j: int) -> np.ndarray:
        return self.vals[self.table.row_complement(j)]

    def cover_integral(self) -> np.ndarray:
        return self.vals[ROW_COVER]

    # Linear-space case terms for a fixed j, used by analytics and checks.
    def done_nocover(self, j: int) -> np.ndarray:
        return np.exp(_times_log(j, self.log_sf)) * self.sf_client

    def covered(self, j: int) -> np.ndarray:
        if j == 0:
            return np.zeros_like(self.y)
        return j * np.exp(_times_log(j - 1, self.log_sf)) * self.cover_integral()

    def covered_rewritten(self, j: int) -> np.ndarray:
        if j == 0:
            return np.zeros_like(self.y)
        sf = np.exp(self.log_sf)
        inner = 1.0 - sf * self.sf_client - self.survival_integral(1)
        return j * np.exp(_times_log(j - 1, self.log_sf)) * inner

    def traded_away(self, j: int) -> np.ndarray:
        """P(some effective competitor trades), from int (1 - (1-F)^j) g."""
        if j == 0:
            return np.zeros_like(self.y)
        return self.complement_integral(j) + -np.expm1(_times_log(j, self.log_sf)) * self.sf_client

    def traded_away_by_complement(self, j: int) -> np.ndarray:
        if j == 0:
            return np.zeros_like(self.y)
        return 1.0 - self.done_nocover(j) - self.survival_integral(j)

    def not_traded(self, j: int) -> np.ndarray:
        return self.survival_integral(j)


def _mix(log_w: np.ndarray, terms: list[np.ndarray], js: Sequence[int]) -> np.ndarray:
    """log sum_j w_j exp(term_j) over the supported j."""
    if len(js) == 1:
        return terms[0] + log_w[js[0]]
    stacked = np.stack(terms) + log_w[list(js)][:, None]
    top = stacked.max(axis=0)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return safe + np.log(np.exp(stacked - safe).sum(axis=0))


def _group_logliks(batch: RecordBatch, dealer: SepParams, client: ClientParams, p: float,
                   variant: Variant, other_rule: OtherRule = OtherRule.EXCLUSIVE) -> np.ndarray:
    """Log-likelihoods of buy-space records sharing one law and one n.

    Each outcome category only evaluates the integrals it needs, on its own
    records.
    """
    n = int(batch.n_other[0])
    if np.any(batch.n_other != n):
        raise ValueError("a group must share one n")
    weights = binomial_weights(np.array([n]), p, variant, n)[0]
    js = [j for j in range(n + 1) if weights[j] > 0.0]
    js_pos = [j for j in js if j >= 1]
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    table = integral_table(dealer, client, n)

    outcome, sub = batch.outcome, batch.sub_outcome
    has_cover = np.isfinite(batch.cover)
    traded_away = outcome == Outcome.TRADED_AWAY
    masks = {
        "done_cover": (outcome == Outcome.DONE) & has_cover,
        "done_nocover": (outcome == Outcome.DONE) & ~has_cover,
        "tied": traded_away & (sub == SubOutcome.TIED),
        "covered": traded_away & (sub == SubOutcome.COVERED),
        "other": traded_away & (sub == SubOutcome.OTHER),
        "not_traded": outcome == Outcome.NOT_TRADED,
    }
    out = np.full(len(batch), -np.inf)
    y_all = batch.y
    log_sf_client = gaussian_logsf(y_all, client)

    def rows_at(mask, rows):
        return table.values(y_all[mask], rows)

    def log_sf_of(cdf):
        with np.errstate(divide="ignore"):
            return np.log1p(-cdf)

    m = masks["done_nocover"]
    if m.any():
        log_sf = log_sf_of(rows_at(m, [ROW_CDF])[ROW_CDF])
        out[m] = _mix(log_w, [_times_log(j, log_sf) for j in js], js) + log_sf_client[m]

    m = masks["not_traded"]
    if m.any():
        vals = rows_at(m, [row_survival(j) for j in js])
        out[m] = _mix(log_w, [_log_linear(vals[row_survival(j)]) for j in js], js)

    m = masks["other"]
    if m.any() and js_pos:
        vals = rows_at(m, [ROW_CDF, ROW_COVER] + [table.row_complement(j) for j in js_pos])
        log_sf = log_sf_of(vals[ROW_CDF])
        sfc = np.exp(log_sf_client[m])
        terms = []
        for j in js_pos:
            prob = vals[table.row_complement(j)] - np.expm1(j * log_sf) * sfc
            if other_rule is OtherRule.EXCLUSIVE:
                prob = prob - j * np.exp(_times_log(j - 1, log_sf)) * vals[ROW_COVER]
            terms.append(_log_linear(prob))
        out[m] = _mix(log_w, terms, js_pos)

    m = masks["covered"]
    if m.any() and js_pos:
        vals = rows_at(m, [ROW_CDF, ROW_COVER])
        log_sf = log_sf_of(vals[ROW_CDF])
        log_int = _log_linear(vals[ROW_COVER])
        out[m] = _mix(log_w, [math.log(j) + _times_log(j - 1, log_sf) + log_int for j in js_pos], js_pos)

    m = masks["tied"]
    if m.any() and js_pos:
        log_sf = log_sf_of(rows_at(m, [ROW_CDF])[ROW_CDF])
        base = sep_logpdf(y_all[m], dealer) + log_sf_client[m]
        out[m] = _mix(log_w, [math.log(j) + _times_log(j - 1, log_sf) + base for j in js_pos], js_pos)

    m = masks["done_cover"]
    if m.any() and js_pos:
        c = batch.cover[m]
        log_sf_c = log_sf_of(table.values(c, [ROW_CDF])[ROW_CDF])
        base = sep_logpdf(c, dealer) + log_sf_client[m]
        out[m] = _mix(log_w, [math.log(j) + _times_log(j - 1, log_sf_c) + base for j in js_pos], js_pos)

    return np.where(np.isnan(out), -np.inf, out)


class PreparedBatch:
    """A batch split once into groups of equal (side, n, covariate row).

    Sell groups are stored mirrored, so every group is scored with the
    buy-side formulas.  Records inside a group are ordered by y, which the
    quadrature tables evaluate fastest.  Reusing a prepared batch across many likelihood
    evaluations avoids regrouping the data each time.
    """

    def __init__(self, batch: RecordBatch):
        self.size = len(batch)
        self.groups: list[tuple[Side, int, np.ndarray, np.ndarray, RecordBatch]] = []
        for side in Side:
            side_mask = batch.side == side.sign
            for n in np.unique(batch.n_other[side_mask]):
                cell = np.nonzero(side_mask & (batch.n_other == n))[0]
                cov = batch.covariates[cell]
                if not cov.any():
                    parts = [(np.zeros(cov.shape[1]), cell)]
                else:
                    uniq, inverse = np.unique(cov, axis=0, return_inverse=True)
                    inverse = np.asarray(inverse).ravel()
                    parts = [(row, cell[inverse == gi]) for gi, row in enumerate(uniq)]
                for row, idx in parts:
                    idx = idx[np.argsort(side.sign * batch.y[idx], kind="stable")]
                    sub = batch.subset(idx)
                    if side is Side.SELL:
                        sub = sub.mirrored()
                    self.groups.append((side, int(n), row, idx, sub))


def _prepared_logliks(prepared: PreparedBatch, spec: ModelSpec) -> np.ndarray:
    out = np.empty(prepared.size)
    for side, n, row, idx, sub in prepared.groups:
        sp = spec.side_params(side, n)
        if side is Side.SELL:
            sp = sp.reflected()
        zb, zg = sp.shifts(row[None, :])
        dealer = sp.dealer.shifted(-float(zb[0]))
        client = sp.client.shifted(-float(zg[0]))
        out[idx] = _group_logliks(sub, dealer, client, sp.answer_prob, spec.variant, spec.other_rule)
    return out


def side_logliks(batch: RecordBatch, side: Side, sp: SideParams, variant: Variant,
                 other_rule: OtherRule = OtherRule.EXCLUSIVE) -> np.ndarray:
    """Per-record log-likelihoods for records that all belong to ``side``."""
    batch = RecordBatch(np.full(len(batch), side.sign), batch.outcome, batch.sub_outcome, batch.y,
                        batch.cover, batch.n_other, batch.covariates)
    spec = ModelSpec(variant, Pooling.POOLED, {(side, None): sp}, other_rule)
    return _prepared_logliks(PreparedBatch(batch), spec)


def record_logliks(batch: RecordBatch | PreparedBatch, spec: ModelSpec) -> np.ndarray:
    """Per-record log-likelihood array; -inf marks impossible records."""
    prepared = batch if isinstance(batch, PreparedBatch) else PreparedBatch(batch)
    return _prepared_logliks(prepared, spec)


def _as_batch(dataset) -> RecordBatch | PreparedBatch:
    if isinstance(dataset, (RecordBatch, PreparedBatch)):
        return dataset
    return RecordBatch.from_records(list(dataset))


def total_loglik(dataset: RecordBatch | PreparedBatch | Iterable[RfqRecord], spec: ModelSpec) -> float:
    """Sum of per-record log-likelihoods (compensated summation).

    Raises LikelihoodError if any record has zero likelihood.
    """
    batch = _as_batch(dataset)
    if (batch.size if isinstance(batch, PreparedBatch) else len(batch)) == 0:
        return 0.0
    terms = record_logliks(batch, spec)
    bad = int(np.count_nonzero(~np.isfinite(terms)))
    if bad:
        raise LikelihoodError(bad)
    return math.fsum(terms)


def _single(record: RfqRecord | ReducedRecord, sp: SideParams, variant: Variant, other_rule: OtherRule) -> float:
    batch = RecordBatch.from_records([record])
    side = Side.BUY if batch.side[0] > 0 else Side.SELL
    return float(side_logliks(batch, side, sp, variant, other_rule)[0])


def loglik_full(record: RfqRecord | ReducedRecord, params: SideParams,
                other_rule: OtherRule = OtherRule.EXCLUSIVE) -> float:
    """Log-likelihood of one record when every requested dealer answers."""
    return _single(record, params.with_answer_prob(1.0), Variant.FULL, other_rule)


def loglik_partial(record: RfqRecord | ReducedRecord, params: SideParams,
                   other_rule: OtherRule = OtherRule.EXCLUSIVE) -> float:
    """Log-likelihood of one record with binomially many effective answers."""
    return _single(record, params, Variant.PARTIAL, other_rule)


def _evaluator(y, n: int, sp: SideParams, side: Side) -> tuple[_Evaluator, np.ndarray]:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if side is Side.SELL:
        sp, y = sp.reflected(), -y
    return _Evaluator(sp.dealer, sp.client, n, y), y


def case_probabilities(y, n: int, sp: SideParams, variant: Variant = Variant.PARTIAL,
                       side: Side = Side.BUY) -> dict[str, np.ndarray]:
    """Outcome probabilities given the reference quote y and n other dealers.

    ``traded_away`` is the probability that some competitor wins; ``other``
    removes the covered part from it.
    ``done`` is the mixture of no-cover Done likelihoods (all covers unrecorded).
    Covariate loadings are ignored; pass shifted laws instead.
    """
    ev, _ = _evaluator(y, n, sp, side)
    p = 1.0 if variant is Variant.FULL else sp.answer_prob
    w = binomial_weights(np.array([n]), p, variant, n)[0]
    out = {k: np.zeros_like(ev.y) for k in ("done", "covered", "traded_away", "not_traded")}
    for j in range(n + 1):
        out["done"] += w[j] * ev.done_nocover(j)
        out["covered"] += w[j] * ev.covered(j)
        out["traded_away"] += w[j] * ev.traded_away(j)
        out["not_traded"] += w[j] * ev.not_traded(j)
    out["other"] = out["traded_away"] - out["covered"]
    return out


def partition_terms(y, n: int, sp: SideParams, variant: Variant, side: Side = Side.BUY) -> np.ndarray:
    """Done(no cover) + TradedAway(total) + NotTraded for each y; equals 1 analytically.

    The traded-away term is the form the likelihood evaluates (built from
    int (1 - (1-F)^j) g), so the sum is a genuine check of the quadrature.
    """
    ev, _ = _evaluator(y, n, sp, side)
    p = 1.0 if variant is Variant.FULL else sp.answer_prob
    w = binomial_weights(np.array([n]), p, variant, n)[0]
    total = np.zeros_like(ev.y)
    for j in range(n + 1):
        total += w[j] * (ev.done_nocover(j) + ev.traded_away(j) + ev.not_traded(j))
    return total


def covered_two_forms(y, n: int, sp: SideParams, side: Side = Side.BUY) -> tuple[np.ndarray, np.ndarray]:
    """Covered likelihood (full model) in integral form and rewritten form."""
    ev, _ = _evaluator(y, n, sp, side)
    return ev.covered(n), ev.covered_rewritten(n)


def cover_density(cover, y, n: int, sp: SideParams, variant: Variant = Variant.PARTIAL,
                  side: Side = Side.BUY) -> np.ndarray:
    """Density in the cover price of a Done RFQ with recorded cover."""
    cover = np.atleast_1d(np.asarray(cover, dtype=float))
    y = np.broadcast_to(np.asarray(y, dtype=float), cover.shape)
    if side is Side.SELL:
        sp, cover, y = sp.reflected(), -cover, -y
    table = integral_table(sp.dealer, sp.client, n)
    cdf_c = table.values(cover)[ROW_CDF]
    log_f_c = sep_logpdf(cover, sp.dealer)
    sf_client = gaussian_sf(y, sp.client)
    p = 1.0 if variant is Variant.FULL else sp.answer_prob
    w = binomial_weights(np.array([n]), p, variant, n)[0]
    dens = np.zeros_like(cover)
    for j in range(1, n + 1):
        dens += w[j] * j * np.exp(log_f_c) * (1.0 - cdf_c) ** (j - 1)
    return np.where(cover > y, dens * sf_client, 0.0)
