"""Best competitor quote densities and hit-ratio curves for fitted models.

Sell curves are computed from the mirrored buy problem: for a sell RFQ,
the highest competitor quote at delta is the lowest mirrored quote at -delta.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate

from .chebyshev import ROW_CDF, row_survival
from .distributions import gaussian_sf, sep_pdf
from .likelihood import binomial_weights, case_probabilities, integral_table
from .model import MAX_OTHER_DEALERS, ModelSpec, Side, SideParams, Variant

DEFAULT_GRID = np.linspace(-8.0, 8.0, 801)
CURVE_KINDS = ("best_price", "hit_ratio")
CURVE_COLUMNS = ("delta", "value", "n", "side", "curve_kind")


class AnalyticsError(ValueError):
    pass


@dataclass(frozen=True)
class AnalyticsRequest:
    side: Side
    n: int
    params: ModelSpec
    grid: tuple[float, ...] = tuple(DEFAULT_GRID)

    def __post_init__(self) -> None:
        if not 1 <= self.n <= MAX_OTHER_DEALERS:
            raise AnalyticsError(f"n must be in 1..{MAX_OTHER_DEALERS}, got {self.n}")
        g = np.asarray(self.grid, dtype=float)
        if g.size and (not np.all(np.isfinite(g)) or np.any(np.diff(g) < 0)):
            raise AnalyticsError("grid must be finite and sorted")

    @property
    def side_params(self) -> SideParams:
        return self.params.side_params(self.side, self.n)

    def grid_array(self) -> np.ndarray:
        return np.asarray(self.grid, dtype=float)


def _answer_prob(req: AnalyticsRequest) -> float:
    return 1.0 if req.params.variant is Variant.FULL else req.side_params.answer_prob


def _buy_space(req: AnalyticsRequest, delta: np.ndarray) -> tuple[SideParams, np.ndarray]:
    sp = req.side_params
    if req.side is Side.SELL:
        return sp.reflected(), -delta
    return sp, delta


def best_price_density(req: AnalyticsRequest, grid: Sequence[float] | None = None) -> np.ndarray:
    """Density of the best competitor quote given that at least one competitor answers."""
    delta = req.grid_array() if grid is None else np.asarray(grid, dtype=float)
    p = _answer_prob(req)
    if p <= 0.0:
        raise AnalyticsError("answer probability is 0: no competitor can answer")
    sp, x = _buy_space(req, delta)
    n = req.n
    if x.size == 0:
        return np.zeros(0)
    sf = 1.0 - integral_table(sp.dealer, sp.client, n).values(x, [ROW_CDF])[ROW_CDF]
    total = np.zeros_like(x)
    for k in range(1, n + 1):
        total += k * math.comb(n, k) * p**k * (1.0 - p) ** (n - k) * sf ** (k - 1)
    norm = -math.expm1(n * math.log1p(-p)) if p < 1.0 else 1.0
    return sep_pdf(x, sp.dealer) * total / norm


def hit_ratio(req: AnalyticsRequest, grid: Sequence[float] | None = None) -> np.ndarray:
    """P(reference dealer wins at quote delta | some trade happens)."""
    delta = req.grid_array() if grid is None else np.asarray(grid, dtype=float)
    sp, x = _buy_space(req, delta)
    n = req.n
    if x.size == 0:
        return np.zeros(0)
    w = binomial_weights(np.array([n]), _answer_prob(req), Variant.PARTIAL, n)[0]
    table = integral_table(sp.dealer, sp.client, n)
    rows = [ROW_CDF] + [row_survival(k) for k in range(n + 1)]
    vals = table.values(x, rows)
    sf = 1.0 - vals[ROW_CDF]
    sf_client = gaussian_sf(x, sp.client)
    num = np.zeros_like(x)
    not_traded = np.zeros_like(x)
    for k in range(n + 1):
        num += w[k] * sf_client * sf**k
        not_traded += w[k] * vals[row_survival(k)]
    return np.clip(num / (1.0 - not_traded), 0.0, 1.0)


def not_traded_probability(req: AnalyticsRequest, grid: Sequence[float] | None = None) -> np.ndarray:
    """Mixture of the Not Traded likelihood, i.e. one minus the hit-ratio denominator."""
    delta = req.grid_array() if grid is None else np.asarray(grid, dtype=float)
    sp, x = _buy_space(req, delta)
    variant = Variant.FULL if req.params.variant is Variant.FULL else Variant.PARTIAL
    return case_probabilities(x, req.n, sp, variant, Side.BUY)["not_traded"]


def expected_outcome_shares(sp: SideParams, n: int, variant: Variant = Variant.PARTIAL,
                            side: Side = Side.BUY, fixed_quote: float | None = None) -> dict[str, float]:
    """Unconditional outcome shares when Y follows the dealers' law (or is fixed).

    Keys: done, tied, covered, other, not_traded.  ``other`` is the traded-away
    probability minus the covered part, matching how records are labelled.
    """
    def cells(y):
        c = case_probabilities(y, n, sp, variant, side)
        return np.array([c["done"][0], 0.0, c["covered"][0], c["other"][0], c["not_traded"][0]])

    if fixed_quote is not None:
        out = cells(float(fixed_quote))
    else:
        dealer = sp.dealer
        split = dealer.mu
        f = lambda y: cells(y) * sep_pdf(y, dealer)
        left, _ = integrate.quad_vec(f, -np.inf, split, epsabs=1e-13, epsrel=1e-11)
        right, _ = integrate.quad_vec(f, split, np.inf, epsabs=1e-13, epsrel=1e-11)
        out = left + right
    return dict(zip(("done", "tied", "covered", "other", "not_traded"), (float(v) for v in out)))


def curve_rows(req: AnalyticsRequest, kinds: Iterable[str] = CURVE_KINDS) -> list[tuple]:
    rows = []
    grid = req.grid_array()
    for kind in kinds:
        if kind == "best_price":
            values = best_price_density(req)
        elif kind == "hit_ratio":
            values = hit_ratio(req)
        else:
            raise AnalyticsError(f"unknown curve kind {kind!r}")
        rows.extend((float(d), float(v), req.n, req.side.value, kind) for d, v in zip(grid, values))
    return rows


def export_curves(requests: AnalyticsRequest | Sequence[AnalyticsRequest], path: str | os.PathLike,
                  kinds: Iterable[str] = CURVE_KINDS) -> int:
    """Write curves as CSV (columns delta, value, n, side, curve_kind); returns the row count."""
    if isinstance(requests, AnalyticsRequest):
        requests = [requests]
    kinds = tuple(kinds)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    count = 0
    for req in requests:
        for d, v, n, side, kind in curve_rows(req, kinds):
            writer.writerow((repr(d), repr(v), n, side, kind))
            count += 1
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write curves to {os.fspath(path)}: {exc}") from exc
    return count
