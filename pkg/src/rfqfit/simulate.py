"""Monte Carlo generator for RFQ outcomes.

Each RFQ draws n, the effective competitors, competitor quotes W, the
client's reservation value V and the reference quote Y, then applies the
auction rule: the lowest buy quote (highest sell quote) wins if the client
accepts it.  Datasets are generated in fixed-size chunks, chunk ``i`` using
the seed sequence ``(seed, i)``, so output does not depend on worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distributions import SepParams, sep_sample_rng
from .model import (
    COVARIATE_NAMES,
    MAX_OTHER_DEALERS,
    ModelSpec,
    Outcome,
    RecordBatch,
    RfqRecord,
    RfqTable,
    Side,
    SubOutcome,
)

CHUNK_SIZE = 100_000


@dataclass(frozen=True)
class MarketContext:
    """mid ~ log-uniform[mid_low, mid_high], half-spread ~ uniform[spread_low, spread_high]."""

    mid_low: float = 50.0
    mid_high: float = 150.0
    spread_low: float = 0.05
    spread_high: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.mid_low <= self.mid_high:
            raise ValueError("need 0 < mid_low <= mid_high")
        if not 0.0 < self.spread_low <= self.spread_high:
            raise ValueError("need 0 < spread_low <= spread_high")


@dataclass(frozen=True)
class CovariateGenerator:
    """Independent Bernoulli flags; names missing from ``probabilities`` stay 0."""

    probabilities: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, q in self.probabilities.items():
            if name not in COVARIATE_NAMES:
                raise ValueError(f"unknown covariate {name!r}")
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"flag probability for {name} must be in [0, 1]")


@dataclass(frozen=True)
class ReferenceQuoteRule:
    """``"sep"`` draws Y from the dealers' SEP law; ``"fixed"`` uses ``value``."""

    kind: str = "sep"
    value: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("sep", "fixed"):
            raise ValueError(f"unknown reference quote rule {self.kind!r}")


@dataclass(frozen=True)
class SimConfig:
    true_params: ModelSpec
    n_distribution: Sequence[float] = (0.2, 0.2, 0.2, 0.2, 0.2)
    sides_mix: float = 1.0
    record_count: int = 0
    cover_record_prob: float = 1.0
    market_context: MarketContext = MarketContext()
    covariate_generator: CovariateGenerator = CovariateGenerator()
    reference_quote_rule: ReferenceQuoteRule = ReferenceQuoteRule()
    seed: int = 0
    tick: float | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        probs = np.asarray(self.n_distribution, dtype=float)
        if probs.shape != (MAX_OTHER_DEALERS,) or np.any(probs < 0.0):
            raise ValueError("n_distribution needs 5 non-negative probabilities")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("n_distribution must sum to 1")
        if self.record_count < 0:
            raise ValueError("record_count must be non-negative")
        if not 0.0 <= self.sides_mix <= 1.0:
            raise ValueError("sides_mix must be in [0, 1]")
        if not 0.0 <= self.cover_record_prob <= 1.0:
            raise ValueError("cover_record_prob must be in [0, 1]")
        if self.tick is not None and not self.tick > 0.0:
            raise ValueError("tick must be positive")


@dataclass
class LatentLog:
    """Unobserved draws on the reduced scale, one row per RFQ.

    ``w`` holds every requested competitor's quote (nan beyond n) and ``a``
    whether that competitor answered.
    """

    v: np.ndarray
    w: np.ndarray
    a: np.ndarray

    @property
    def n_effective(self) -> np.ndarray:
        return self.a.sum(axis=1)

    @classmethod
    def concatenate(cls, logs: Sequence["LatentLog"]) -> "LatentLog":
        if not logs:
            return cls(np.zeros(0), np.zeros((0, MAX_OTHER_DEALERS)), np.zeros((0, MAX_OTHER_DEALERS), bool))
        return cls(*(np.concatenate([getattr(x, f) for x in logs]) for f in ("v", "w", "a")))


@dataclass
class SimulatedDataset:
    table: RfqTable
    latent: LatentLog

    def __len__(self) -> int:
        return len(self.table)

    def records(self) -> list[RfqRecord]:
        return self.table.records()

    def batch(self) -> RecordBatch:
        return self.table.to_batch()


def _round_tick(x: np.ndarray, tick: float | None) -> np.ndarray:
    return x if tick is None else np.round(x / tick) * tick


def _simulate_cell(rng, size, sp, n, covariates, config: SimConfig):
    """Buy-space draws for ``size`` RFQs sharing (side params, n)."""
    zb, zg = sp.shifts(covariates)
    d = sp.dealer
    loc = d.mu - zb
    std = SepParams(d.alpha, d.lam, 0.0, 1.0)
    w = loc[:, None] + d.sigma * sep_sample_rng(std, (size, MAX_OTHER_DEALERS), rng)
    a = rng.random((size, MAX_OTHER_DEALERS)) < sp.answer_prob
    requested = np.arange(MAX_OTHER_DEALERS)[None, :] < n
    a &= requested
    v = (sp.client.nu - zg) + sp.client.tau * rng.standard_normal(size)
    if config.reference_quote_rule.kind == "sep":
        y = loc + d.sigma * sep_sample_rng(std, size, rng)
    else:
        y = np.full(size, float(config.reference_quote_rule.value))
    w = _round_tick(w, config.tick)
    y = _round_tick(y, config.tick)
    keep_cover = rng.random(size) < config.cover_record_prob
    tie_draw = rng.random(size)

    w_eff = np.where(a, w, np.inf)
    best = w_eff.min(axis=1)
    below = (w_eff < y[:, None]).sum(axis=1)
    equal = (w_eff == y[:, None]).sum(axis=1)

    # Exact ties at the best price: the client picks uniformly among them.
    wins_tie = tie_draw * (equal + 1) < 1.0
    done = (below == 0) & ((equal == 0) | wins_tie) & (y <= v)
    away = ~done & (best <= y) & (best <= v)
    outcome = np.full(size, int(Outcome.NOT_TRADED))
    outcome[done] = Outcome.DONE
    outcome[away] = Outcome.TRADED_AWAY
    sub = np.zeros(size, dtype=int)
    sub[away] = SubOutcome.OTHER
    sub[away & (below == 0)] = SubOutcome.TIED
    sub[away & (below == 1) & (equal == 0)] = SubOutcome.COVERED
    # A cover equal to the quote is not a valid record, so tied wins keep none.
    cover = np.where(done & (best > y) & np.isfinite(best) & keep_cover, best, np.nan)
    w = np.where(requested, w, np.nan)
    return y, cover, outcome, sub, v, w, a


def _simulate_chunk(config: SimConfig, index: int, size: int) -> tuple[RfqTable, LatentLog]:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    side = np.where(rng.random(size) < config.sides_mix, 1, -1)
    n_other = rng.choice(np.arange(1, MAX_OTHER_DEALERS + 1), size=size, p=np.asarray(config.n_distribution))
    covariates = np.zeros((size, len(COVARIATE_NAMES)))
    for i, name in enumerate(COVARIATE_NAMES):
        q = config.covariate_generator.probabilities.get(name, 0.0)
        covariates[:, i] = rng.random(size) < q
    ctx = config.market_context
    mid = np.exp(rng.uniform(math.log(ctx.mid_low), math.log(ctx.mid_high), size))
    half = rng.uniform(ctx.spread_low, ctx.spread_high, size)

    y = np.empty(size)
    cover = np.full(size, np.nan)
    outcome = np.empty(size, dtype=int)
    sub = np.zeros(size, dtype=int)
    v = np.empty(size)
    w = np.full((size, MAX_OTHER_DEALERS), np.nan)
    a = np.zeros((size, MAX_OTHER_DEALERS), dtype=bool)
    for s in Side:
        for n in range(1, MAX_OTHER_DEALERS + 1):
            idx = np.nonzero((side == s.sign) & (n_other == n))[0]
            if idx.size == 0:
                continue
            sp = config.true_params.side_params(s, n)
            if s is Side.SELL:
                sp = sp.reflected()
            cy, ccov, cout, csub, cv, cw, ca = _simulate_cell(rng, idx.size, sp, n, covariates[idx], config)
            sign = float(s.sign)
            y[idx], cover[idx], v[idx], w[idx] = sign * cy, sign * ccov, sign * cv, sign * cw
            outcome[idx], sub[idx], a[idx] = cout, csub, ca

    table = RfqTable(
        side=side,
        outcome=outcome,
        sub_outcome=sub,
        y_quote=mid + half * y,
        cover=mid + half * cover,
        n_other=n_other,
        cbbt_mid=mid,
        cbbt_half_spread=half,
        covariates=covariates,
    )
    return table, LatentLog(v, w, a)


def _chunks(count: int) -> list[int]:
    full, rest = divmod(count, CHUNK_SIZE)
    return [CHUNK_SIZE] * full + ([rest] if rest else [])


def simulate_dataset(config: SimConfig) -> SimulatedDataset:
    """``record_count`` i.i.d. RFQs plus their latent draws; deterministic in ``seed``."""
    sizes = _chunks(config.record_count)
    jobs = list(enumerate(sizes))
    if config.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(lambda job: _simulate_chunk(config, *job), jobs))
    else:
        parts = [_simulate_chunk(config, i, size) for i, size in jobs]
    table = RfqTable.concatenate([p[0] for p in parts])
    latent = LatentLog.concatenate([p[1] for p in parts])
    return SimulatedDataset(table, latent)


def simulate_rfq(config: SimConfig) -> RfqRecord:
    """One RFQ drawn with ``config.seed``."""
    cfg = SimConfig(**{**config.__dict__, "record_count": 1})
    return simulate_dataset(cfg).table.record(0)


OUTCOME_COLUMNS = ("done", "tied", "covered", "other", "not_traded")


@dataclass
class OutcomeTable:
    """Counts per side, n (rows 1..5) and outcome cell (OUTCOME_COLUMNS)."""

    counts: dict[Side, np.ndarray]

    def shares(self, side: Side) -> np.ndarray:
        c = self.counts[side].astype(float)
        totals = c.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, c / np.where(totals > 0, totals, 1.0), 0.0)

    def format(self, side: Side) -> str:
        c = self.counts[side]
        head = ["", "Done", "Tied", "Covered", "Other", "Not traded", "Total"]
        rows = [head]
        for n in range(1, MAX_OTHER_DEALERS + 1):
            row = c[n - 1]
            rows.append([f"n={n}"] + [str(int(x)) for x in row] + [str(int(row.sum()))])
        tot = c.sum(axis=0)
        rows.append(["Total"] + [str(int(x)) for x in tot] + [str(int(tot.sum()))])
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = [f"{side.value} RFQs by number of other requested dealers and outcome"]
        for r in rows:
            lines.append("  ".join(cell.rjust(wd) for cell, wd in zip(r, widths)))
        return "\n".join(lines)


def _cell_columns(outcome: np.ndarray, sub: np.ndarray) -> np.ndarray:
    col = np.full(outcome.shape, -1)
    col[outcome == Outcome.DONE] = 0
    away = outcome == Outcome.TRADED_AWAY
    col[away & (sub == SubOutcome.TIED)] = 1
    col[away & (sub == SubOutcome.COVERED)] = 2
    col[away & (sub == SubOutcome.OTHER)] = 3
    col[outcome == Outcome.NOT_TRADED] = 4
    return col


def outcome_frequencies(dataset: SimulatedDataset | RfqTable | RecordBatch | Iterable[RfqRecord]) -> OutcomeTable:
    if isinstance(dataset, SimulatedDataset):
        dataset = dataset.table
    elif not isinstance(dataset, (RfqTable, RecordBatch)):
        dataset = RfqTable.from_records(list(dataset))
    col = _cell_columns(np.asarray(dataset.outcome), np.asarray(dataset.sub_outcome))
    counts = {}
    for s in Side:
        table = np.zeros((MAX_OTHER_DEALERS, len(OUTCOME_COLUMNS)), dtype=np.int64)
        mask = (np.asarray(dataset.side) == s.sign) & (col >= 0)
        np.add.at(table, (np.asarray(dataset.n_other)[mask] - 1, col[mask]), 1)
        counts[s] = table
    return OutcomeTable(counts)
