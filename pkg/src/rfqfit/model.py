"""RFQ records, parameter containers and the reduction to the reduced-quote scale."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distributions import ClientParams, ParameterError, SepParams

COVARIATE_NAMES = ("high_yield", "subordinated", "low_notional", "high_notional")
MAX_OTHER_DEALERS = 5


class RecordError(ValueError):
    """An RFQ record violates the observation invariants."""


class Side(enum.Enum):
    BUY = "buy"
    SELL = "sell"

    @property
    def sign(self) -> int:
        return 1 if self is Side.BUY else -1


class Outcome(enum.IntEnum):
    DONE = 1
    TRADED_AWAY = 2
    NOT_TRADED = 3


class SubOutcome(enum.IntEnum):
    NOT_APPLICABLE = 0
    TIED = 1
    COVERED = 2
    OTHER = 3


class Variant(enum.Enum):
    FULL = "full"
    PARTIAL = "partial"


class OtherRule(enum.Enum):
    """How an "other traded away" record is scored.

    EXCLUSIVE: traded away and the reference dealer was not the unique second
    best, i.e. P(traded away) - P(covered).  MISSING: the sub-outcome is
    treated as unknown and the record is scored with P(traded away).
    """

    EXCLUSIVE = "exclusive"
    MISSING = "missing"


class Pooling(enum.Enum):
    POOLED = "pooled"
    PER_N = "per-n"


@dataclass(frozen=True)
class RfqRecord:
    """One observed RFQ, in price units."""

    side: Side
    outcome: Outcome
    sub_outcome: SubOutcome
    y_quote: float
    cover: float | None
    n_other: int
    cbbt_mid: float
    cbbt_half_spread: float
    covariates: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        validate_record(self)


def validate_record(r: RfqRecord) -> None:
    if not 1 <= r.n_other <= MAX_OTHER_DEALERS:
        raise RecordError("n out of range")
    if not (r.cbbt_half_spread > 0.0) or not math.isfinite(r.cbbt_half_spread):
        raise RecordError("half-spread must be positive")
    if not (math.isfinite(r.y_quote) and math.isfinite(r.cbbt_mid)):
        raise RecordError("non-finite quote or mid")
    if (r.sub_outcome != SubOutcome.NOT_APPLICABLE) != (r.outcome == Outcome.TRADED_AWAY):
        raise RecordError("sub_outcome must be set exactly for traded-away RFQs")
    if r.cover is not None:
        if r.outcome != Outcome.DONE:
            raise RecordError("cover present on a record that is not done")
        if not math.isfinite(r.cover):
            raise RecordError("non-finite cover")
        if r.cover == r.y_quote:
            raise RecordError("cover equals quote on a done record")
        worse = r.cover > r.y_quote if r.side is Side.BUY else r.cover < r.y_quote
        if not worse:
            raise RecordError("inconsistent cover")


@dataclass(frozen=True)
class ReducedRecord:
    """A record on the reduced-quote scale: (price - mid) / half-spread."""

    side: Side
    outcome: Outcome
    sub_outcome: SubOutcome
    y: float
    cover: float | None
    n_other: int
    covariates: tuple[float, ...]


def reduce_price(price, mid, half_spread):
    half_spread = np.asarray(half_spread, dtype=float)
    if np.any(half_spread <= 0.0):
        raise RecordError("half-spread must be positive")
    return (np.asarray(price, dtype=float) - mid) / half_spread


def reduce(record: RfqRecord) -> ReducedRecord:
    y = float(reduce_price(record.y_quote, record.cbbt_mid, record.cbbt_half_spread))
    cover = None
    if record.cover is not None:
        cover = float(reduce_price(record.cover, record.cbbt_mid, record.cbbt_half_spread))
    return ReducedRecord(record.side, record.outcome, record.sub_outcome, y, cover, record.n_other, record.covariates)


@dataclass(frozen=True)
class SideParams:
    """Dealer and client laws for one side, optionally with covariate loadings.

    ``beta`` and ``gamma`` are keyed by covariate name; a record with flags Z
    sees dealer location mu - Z.beta and client mean nu - Z.gamma.
    """

    dealer: SepParams
    client: ClientParams
    answer_prob: float = 1.0
    beta: tuple[tuple[str, float], ...] = ()
    gamma: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.answer_prob <= 1.0:
            raise ParameterError(f"answer probability must be in [0, 1], got {self.answer_prob!r}")

    @property
    def covariate_names(self) -> tuple[str, ...]:
        names = [k for k, _ in self.beta] + [k for k, _ in self.gamma if k not in dict(self.beta)]
        return tuple(names)

    def reflected(self) -> "SideParams":
        """Parameters of the mirrored buy-side problem for a sell side."""
        return SideParams(
            self.dealer.reflected(),
            self.client.reflected(),
            self.answer_prob,
            tuple((k, -b) for k, b in self.beta),
            tuple((k, -g) for k, g in self.gamma),
        )

    def with_answer_prob(self, p: float) -> "SideParams":
        return replace(self, answer_prob=p)

    def shifts(self, covariates: np.ndarray, names: Sequence[str] = COVARIATE_NAMES) -> tuple[np.ndarray, np.ndarray]:
        """Per-record (Z.beta, Z.gamma) for a covariate matrix with columns ``names``."""
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        index = {name: i for i, name in enumerate(names)}
        zb = np.zeros(covariates.shape[0])
        zg = np.zeros(covariates.shape[0])
        for name, b in self.beta:
            zb += b * covariates[:, index[name]]
        for name, g in self.gamma:
            zg += g * covariates[:, index[name]]
        return zb, zg


@dataclass(frozen=True)
class ModelSpec:
    """Model variant plus parameters per side (and per n when not pooled).

    ``params`` maps ``(side, n)`` to SideParams; pooled specs use ``n=None``.
    """

    variant: Variant
    pooling: Pooling
    params: Mapping[tuple[Side, int | None], SideParams] = field(default_factory=dict)
    other_rule: OtherRule = OtherRule.EXCLUSIVE

    def __post_init__(self) -> None:
        if self.variant is Variant.FULL:
            for key, sp in self.params.items():
                if sp.answer_prob != 1.0:
                    raise ParameterError(f"full-participation model requires p = 1 (cell {key})")

    def side_params(self, side: Side, n: int) -> SideParams:
        if (side, n) in self.params:
            return self.params[(side, n)]
        if (side, None) in self.params:
            return self.params[(side, None)]
        raise KeyError(f"no parameters for side={side.value}, n={n}")

    def cells(self) -> list[tuple[Side, int | None]]:
        return list(self.params)


@dataclass
class RecordBatch:
    """Column-oriented reduced records, the form the likelihood consumes."""

    side: np.ndarray  # +1 buy, -1 sell
    outcome: np.ndarray
    sub_outcome: np.ndarray
    y: np.ndarray
    cover: np.ndarray  # nan when absent
    n_other: np.ndarray
    covariates: np.ndarray  # (N, len(COVARIATE_NAMES))

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_records(cls, records: Iterable[RfqRecord | ReducedRecord]) -> "RecordBatch":
        rows = [r if isinstance(r, ReducedRecord) else reduce(r) for r in records]
        width = len(COVARIATE_NAMES)
        return cls(
            side=np.array([r.side.sign for r in rows], dtype=int),
            outcome=np.array([int(r.outcome) for r in rows], dtype=int),
            sub_outcome=np.array([int(r.sub_outcome) for r in rows], dtype=int),
            y=np.array([r.y for r in rows], dtype=float),
            cover=np.array([np.nan if r.cover is None else r.cover for r in rows], dtype=float),
            n_other=np.array([r.n_other for r in rows], dtype=int),
            covariates=np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), width),
        )

    def subset(self, mask) -> "RecordBatch":
        return RecordBatch(
            self.side[mask],
            self.outcome[mask],
            self.sub_outcome[mask],
            self.y[mask],
            self.cover[mask],
            self.n_other[mask],
            self.covariates[mask],
        )

    def concat(self, other: "RecordBatch") -> "RecordBatch":
        return RecordBatch(
            *(np.concatenate([getattr(self, f), getattr(other, f)]) for f in
              ("side", "outcome", "sub_outcome", "y", "cover", "n_other", "covariates"))
        )

    def mirrored(self) -> "RecordBatch":
        """Negate quotes so a sell batch can be scored with buy-side formulas."""
        return RecordBatch(self.side.copy(), self.outcome, self.sub_outcome, -self.y, -self.cover,
                           self.n_other, self.covariates)


@dataclass
class RfqTable:
    """Column-oriented RFQ dataset in price units (the CSV layout)."""

    side: np.ndarray  # +1 buy, -1 sell
    outcome: np.ndarray
    sub_outcome: np.ndarray
    y_quote: np.ndarray
    cover: np.ndarray  # nan when absent
    n_other: np.ndarray
    cbbt_mid: np.ndarray
    cbbt_half_spread: np.ndarray
    covariates: np.ndarray  # (N, len(COVARIATE_NAMES))

    _FIELDS = ("side", "outcome", "sub_outcome", "y_quote", "cover", "n_other",
               "cbbt_mid", "cbbt_half_spread", "covariates")

    def __len__(self) -> int:
        return len(self.y_quote)

    @classmethod
    def empty(cls) -> "RfqTable":
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0),
                   np.zeros(0, int), np.zeros(0), np.zeros(0), np.zeros((0, len(COVARIATE_NAMES))))

    @classmethod
    def from_records(cls, records: Sequence[RfqRecord]) -> "RfqTable":
        if not records:
            return cls.empty()
        return cls(
            side=np.array([r.side.sign for r in records], dtype=int),
            outcome=np.array([int(r.outcome) for r in records], dtype=int),
            sub_outcome=np.array([int(r.sub_outcome) for r in records], dtype=int),
            y_quote=np.array([r.y_quote for r in records], dtype=float),
            cover=np.array([np.nan if r.cover is None else r.cover for r in records], dtype=float),
            n_other=np.array([r.n_other for r in records], dtype=int),
            cbbt_mid=np.array([r.cbbt_mid for r in records], dtype=float),
            cbbt_half_spread=np.array([r.cbbt_half_spread for r in records], dtype=float),
            covariates=np.array([r.covariates for r in records], dtype=float),
        )

    @classmethod
    def concatenate(cls, tables: Sequence["RfqTable"]) -> "RfqTable":
        if not tables:
            return cls.empty()
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in cls._FIELDS))

    def subset(self, mask) -> "RfqTable":
        return RfqTable(*(getattr(self, f)[mask] for f in self._FIELDS))

    def record(self, i: int) -> RfqRecord:
        cover = self.cover[i]
        return RfqRecord(
            side=Side.BUY if self.side[i] > 0 else Side.SELL,
            outcome=Outcome(int(self.outcome[i])),
            sub_outcome=SubOutcome(int(self.sub_outcome[i])),
            y_quote=float(self.y_quote[i]),
            cover=None if np.isnan(cover) else float(cover),
            n_other=int(self.n_other[i]),
            cbbt_mid=float(self.cbbt_mid[i]),
            cbbt_half_spread=float(self.cbbt_half_spread[i]),
            covariates=tuple(float(x) for x in self.covariates[i]),
        )

    def records(self) -> list[RfqRecord]:
        return [self.record(i) for i in range(len(self))]

    def to_batch(self) -> RecordBatch:
        """Reduce every quote to (price - mid) / half-spread."""
        return RecordBatch(
            side=self.side.copy(),
            outcome=self.outcome.copy(),
            sub_outcome=self.sub_outcome.copy(),
            y=reduce_price(self.y_quote, self.cbbt_mid, self.cbbt_half_spread),
            cover=reduce_price(self.cover, self.cbbt_mid, self.cbbt_half_spread),
            n_other=self.n_other.copy(),
            covariates=self.covariates.copy(),
        )
