"""Maximum-likelihood fits of the RFQ models, one optimisation per cell.

A cell is one side, pooled over n or restricted to a single n.  Parameters
are reported in the side's own orientation (sell quotes keep their sign).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributions import ClientParams, SepParams
from .likelihood import PreparedBatch, record_logliks, clear_cache
from .model import (
    COVARIATE_NAMES,
    MAX_OTHER_DEALERS,
    ModelSpec,
    OtherRule,
    Outcome,
    Pooling,
    RecordBatch,
    Side,
    SideParams,
    Variant,
)
from .optimize import ALPHA, IDENTITY, POSITIVE, PROBABILITY, FitProblem, OptimResult, Transform, multistart

logger = logging.getLogger(__name__)

BASE_NAMES = ("alpha", "lam", "mu", "sigma", "p", "nu", "tau")
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class FitSettings:
    f_tol: float = 1e-9
    x_tol: float = 1e-7
    max_iterations: int = 200
    line_tol: float = 1e-4
    starts: int = 1
    seed: int = 0


@dataclass(frozen=True)
class ParameterLayout:
    """Order of the free parameters of one cell."""

    variant: Variant
    covariates: tuple[str, ...] = ()

    @property
    def names(self) -> tuple[str, ...]:
        base = [n for n in BASE_NAMES if n != "p" or self.variant is Variant.PARTIAL]
        base += [f"beta_{c}" for c in self.covariates] + [f"gamma_{c}" for c in self.covariates]
        return tuple(base)

    @property
    def transform(self) -> Transform:
        kinds = {"alpha": ALPHA, "sigma": POSITIVE, "tau": POSITIVE, "p": PROBABILITY}
        return Transform(tuple(kinds.get(n, IDENTITY) for n in self.names))

    def to_params(self, x: Sequence[float]) -> SideParams:
        v = dict(zip(self.names, (float(t) for t in x)))
        return SideParams(
            SepParams(v["alpha"], v["lam"], v["mu"], v["sigma"]),
            ClientParams(v["nu"], v["tau"]),
            v.get("p", 1.0),
            tuple((c, v[f"beta_{c}"]) for c in self.covariates),
            tuple((c, v[f"gamma_{c}"]) for c in self.covariates),
        )

    def from_params(self, sp: SideParams) -> np.ndarray:
        d, c = sp.dealer, sp.client
        v = {"alpha": d.alpha, "lam": d.lam, "mu": d.mu, "sigma": d.sigma, "p": sp.answer_prob,
             "nu": c.nu, "tau": c.tau}
        beta, gamma = dict(sp.beta), dict(sp.gamma)
        for cov in self.covariates:
            v[f"beta_{cov}"] = beta.get(cov, 0.0)
            v[f"gamma_{cov}"] = gamma.get(cov, 0.0)
        return np.array([v[n] for n in self.names])


@dataclass
class CellFit:
    side: Side
    n: int | None
    params: SideParams
    loglik: float
    iterations: int
    converged: bool
    restarts_used: int
    evaluations: int
    record_count: int
    seconds: float = 0.0


@dataclass
class FitResult:
    """All cells of one fit; ``params`` gathers them into a ModelSpec."""

    params: ModelSpec
    loglik: float
    iterations: int
    converged: bool
    restarts_used: int
    cells: list[CellFit] = field(default_factory=list)


def initial_params(batch: RecordBatch, side: Side, variant: Variant,
                   covariates: Sequence[str] = ()) -> SideParams:
    """Moment-matching start: location and scale from the median and MAD of
    winning (Done) quotes, symmetric unit-shape SEP, client mean one unit to
    the client's side of mid.
    """
    y = batch.y[batch.outcome == Outcome.DONE]
    if y.size < 2:
        y = batch.y
    if y.size:
        mu = float(np.median(y))
        sigma = MAD_SCALE * float(np.median(np.abs(y - mu)))
    else:
        mu, sigma = 0.0, 1.0
    if not (math.isfinite(sigma) and sigma > 0.1):
        sigma = max(sigma, 0.1) if math.isfinite(sigma) else 1.0
    p = 0.5 if variant is Variant.PARTIAL else 1.0
    zeros = tuple((c, 0.0) for c in covariates)
    return SideParams(SepParams(1.0, 0.0, mu, sigma), ClientParams(float(side.sign), 2.0), p, zeros, zeros)


def _cell_mask(batch: RecordBatch, side: Side, n: int | None) -> np.ndarray:
    mask = batch.side == side.sign
    if n is not None:
        mask &= batch.n_other == n
    return mask


def fit_cell(batch: RecordBatch, side: Side, n: int | None, variant: Variant,
             covariates: Sequence[str] = (), settings: FitSettings = FitSettings(),
             initial: SideParams | None = None, other_rule: OtherRule = OtherRule.EXCLUSIVE) -> CellFit:
    """Maximise the likelihood of the records of one (side, n) cell."""
    for c in covariates:
        if c not in COVARIATE_NAMES:
            raise ValueError(f"unknown covariate {c!r}")
    sub = batch.subset(_cell_mask(batch, side, n))
    if len(sub) == 0:
        raise ValueError(f"no records for side={side.value}, n={n}")
    layout = ParameterLayout(variant, tuple(covariates))
    prepared = PreparedBatch(sub)

    def objective(x: np.ndarray) -> float:
        sp = layout.to_params(x)
        spec = ModelSpec(variant, Pooling.POOLED, {(side, None): sp}, other_rule)
        terms = record_logliks(prepared, spec)
        if not np.all(np.isfinite(terms)):
            return -math.inf
        return math.fsum(terms)

    start = initial if initial is not None else initial_params(sub, side, variant, covariates)
    if variant is Variant.FULL:
        start = start.with_answer_prob(1.0)
    problem = FitProblem(objective, layout.transform, layout.from_params(start), settings.f_tol,
                         settings.x_tol, settings.max_iterations, settings.line_tol)
    t0 = time.perf_counter()
    res: OptimResult = multistart(problem, settings.starts, settings.seed)
    clear_cache()
    params = layout.to_params(res.x)
    cell = CellFit(side, n, params, res.value, res.iterations, res.converged, res.restarts_used,
                   res.evaluations, len(sub), time.perf_counter() - t0)
    logger.info("fit %s n=%s: loglik=%.6f cycles=%d evals=%d converged=%s (%.1fs)", side.value, n,
                res.value, res.iterations, res.evaluations, res.converged, cell.seconds)
    return cell


def fit_model(batch: RecordBatch, variant: Variant, pooling: Pooling = Pooling.POOLED,
              sides: Sequence[Side] = (Side.BUY, Side.SELL), covariates: Sequence[str] = (),
              settings: FitSettings = FitSettings(), other_rule: OtherRule = OtherRule.EXCLUSIVE) -> FitResult:
    """Fit every (side, pooling cell) with data; cells are independent problems."""
    cells: list[CellFit] = []
    for side in sides:
        if not np.any(batch.side == side.sign):
            continue
        if pooling is Pooling.POOLED:
            keys: list[int | None] = [None]
        else:
            keys = [n for n in range(1, MAX_OTHER_DEALERS + 1) if np.any(_cell_mask(batch, side, n))]
        for n in keys:
            cells.append(fit_cell(batch, side, n, variant, covariates, settings, other_rule=other_rule))
    if not cells:
        raise ValueError("no records to fit")
    spec = ModelSpec(variant, pooling, {(c.side, c.n): c.params for c in cells}, other_rule)
    return FitResult(
        params=spec,
        loglik=math.fsum(c.loglik for c in cells),
        iterations=max(c.iterations for c in cells),
        converged=all(c.converged for c in cells),
        restarts_used=sum(c.restarts_used for c in cells),
        cells=cells,
    )
