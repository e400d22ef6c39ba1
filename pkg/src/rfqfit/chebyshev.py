"""Chebyshev antiderivatives for the censoring integrals of the RFQ likelihood.

Every integral the likelihood needs has the form ``y -> int_{-inf}^y h(v) dv``
where ``h`` is the SEP density times a bounded weight, or the Gaussian
density times a power of the SEP survival function.  Each integrand is pulled
back to ``(-1, 1)`` through a tanh change of variables, interpolated at
Chebyshev extreme points, and integrated term by term.

The SEP density has a cusp at its location ``mu``, so the real line is split
there and each half-line is mapped separately::

    v = mu + direction * sigma * t**q,   t = s * atanh((1 + u) / 2)

The power ``q >= max(4, 2 / alpha)`` turns the ``|v - mu|**(k alpha / 2)``
terms of the density into smooth powers of ``t``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from scipy import fft

from .distributions import (
    ClientParams,
    SepParams,
    gaussian_pdf,
    gaussian_sf,
    sep_pdf,
)

logger = logging.getLogger(__name__)

MIN_DEGREE = 256
MAX_DEGREE = 2048
COEFF_TOL = 1e-13
CHOP_TOL = 1e-14
SCALE_FLOOR = 1e-2
CLAMP_WARN = 1e-7
_EVAL_CHUNK = 8192
LOCAL_TOL = 1e-15
LOCAL_DEGREES = (16, 32, 64)
LOCAL_MIN_POINTS = 2048


class ChebyshevConvergenceError(ArithmeticError):
    """The integrand could not be resolved at the maximum degree."""


class DomainMap(Protocol):
    def to_u(self, v): ...

    def to_v(self, u): ...

    def dv_du(self, u): ...


@dataclass(frozen=True)
class AffineMap:
    """Affine map of [lo, hi] onto [-1, 1]."""

    lo: float
    hi: float

    def to_u(self, v):
        return (2.0 * np.asarray(v, dtype=float) - (self.lo + self.hi)) / (self.hi - self.lo)

    def to_v(self, u):
        return 0.5 * (self.lo + self.hi) + 0.5 * (self.hi - self.lo) * np.asarray(u, dtype=float)

    def dv_du(self, u):
        return np.full(np.shape(u), 0.5 * (self.hi - self.lo))


@dataclass(frozen=True)
class TanhMap:
    """v = center + scale * atanh(u), mapping the real line onto (-1, 1)."""

    center: float
    scale: float

    def to_u(self, v):
        return np.tanh((np.asarray(v, dtype=float) - self.center) / self.scale)

    def to_v(self, u):
        with np.errstate(divide="ignore"):
            return self.center + self.scale * np.arctanh(np.asarray(u, dtype=float))

    def dv_du(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            return self.scale / (1.0 - u * u)


@dataclass(frozen=True)
class HalfLineMap:
    """Map of the half-line on one side of ``origin`` onto (-1, 1).

    ``u = -1`` is the origin and ``u = 1`` is infinity in ``direction``.
    """

    origin: float
    direction: int
    sigma: float
    power: float
    scale: float

    def _t(self, u):
        w = 0.5 * (1.0 + np.asarray(u, dtype=float))
        with np.errstate(divide="ignore"):
            return self.scale * np.arctanh(w)

    def to_v(self, u):
        return self.origin + self.direction * self.sigma * self._t(u) ** self.power

    def to_u(self, v):
        z = np.maximum(self.direction * (np.asarray(v, dtype=float) - self.origin) / self.sigma, 0.0)
        return 2.0 * np.tanh(z ** (1.0 / self.power) / self.scale) - 1.0

    def dv_du(self, u):
        u = np.asarray(u, dtype=float)
        w = 0.5 * (1.0 + u)
        t = self._t(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            dt_du = 0.5 * self.scale / (1.0 - w * w)
            return self.direction * self.sigma * self.power * t ** (self.power - 1.0) * dt_du


def chebyshev_points(n: int) -> np.ndarray:
    """Chebyshev extreme points cos(pi j / n), j = 0..n (descending)."""
    return np.cos(np.pi * np.arange(n + 1) / n)


def values_to_coefficients(values: np.ndarray) -> np.ndarray:
    """Chebyshev-T coefficients of the interpolant through extreme-point values."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1] - 1
    coeffs = fft.dct(values, type=1, axis=-1) / n
    coeffs[..., 0] *= 0.5
    coeffs[..., -1] *= 0.5
    return coeffs


def integrate_coefficients(a: np.ndarray) -> np.ndarray:
    """Coefficients of the antiderivative vanishing at u = -1.

    Uses int T_0 = T_1, int T_1 = T_2 / 4 and, for n >= 2,
    int T_n = T_{n+1} / (2(n+1)) - T_{n-1} / (2(n-1)).
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    padded = np.zeros(a.shape[:-1] + (n + 2,))
    padded[..., :n] = a
    padded[..., 0] *= 2.0
    b = np.zeros(a.shape[:-1] + (n + 1,))
    k = np.arange(1, n + 1)
    b[..., 1:] = (padded[..., k - 1] - padded[..., k + 1]) / (2.0 * k)
    signs = np.where(k % 2 == 0, 1.0, -1.0)
    b[..., 0] = -(b[..., 1:] * signs).sum(axis=-1)
    return b


def chebyshev_eval(coeffs: np.ndarray, u) -> np.ndarray:
    return npcheb.chebval(np.asarray(u, dtype=float), coeffs)


def chebyshev_eval_many(coeffs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate K series (rows of ``coeffs``) at M points; returns (K, M)."""
    coeffs = np.atleast_2d(coeffs)
    u = np.asarray(u, dtype=float).ravel()
    deg = coeffs.shape[1]
    out = np.empty((coeffs.shape[0], u.size))
    for start in range(0, u.size, _EVAL_CHUNK):
        uc = u[start:start + _EVAL_CHUNK]
        basis = np.empty((deg, uc.size))
        basis[0] = 1.0
        if deg > 1:
            basis[1] = uc
        two_u = 2.0 * uc
        for k in range(2, deg):
            np.multiply(two_u, basis[k - 1], out=basis[k])
            basis[k] -= basis[k - 2]
        out[:, start:start + uc.size] = coeffs @ basis
    return out


class LocalSeries:
    """Piecewise re-expansion of a high-degree series for fast bulk evaluation.

    [-1, 1] is cut into segments of equal width in theta = arccos(u), and on
    each the series is re-interpolated at a low degree.  The re-expansion is
    accepted only if every local tail is below LOCAL_TOL; ``build`` returns
    None otherwise and callers fall back to the global series.
    """

    def __init__(self, edges: np.ndarray, coeffs: np.ndarray):
        self.edges = edges
        self.coeffs = coeffs  # (K, segments, L + 1)

    @classmethod
    def build(cls, coeffs: np.ndarray) -> "LocalSeries | None":
        coeffs = np.atleast_2d(coeffs)
        segments = max(1, int(math.ceil(coeffs.shape[1] / 6)))
        edges = np.cos(np.pi * np.arange(segments, -1, -1) / segments)
        edges[0], edges[-1] = -1.0, 1.0
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        for degree in LOCAL_DEGREES:
            if degree >= coeffs.shape[1]:
                return None
            t = chebyshev_points(degree)
            u = (mid[:, None] + half[:, None] * t[None, :]).ravel()
            vals = chebyshev_eval_many(coeffs, u).reshape(coeffs.shape[0], segments, degree + 1)
            local = values_to_coefficients(vals)
            tail = np.abs(local[..., -(degree // 4):]).max()
            if tail <= LOCAL_TOL:
                return cls(edges, local)
        return None

    def eval_sorted(self, u: np.ndarray) -> np.ndarray:
        """Evaluate at ascending ``u``; returns (K, len(u))."""
        out = np.empty((self.coeffs.shape[0], u.size))
        bounds = np.searchsorted(u, self.edges[1:-1], side="left")
        starts = np.concatenate([[0], bounds])
        stops = np.concatenate([bounds, [u.size]])
        lo, hi = self.edges[:-1], self.edges[1:]
        for s, (a, b) in enumerate(zip(starts, stops)):
            if a == b:
                continue
            t = (2.0 * u[a:b] - (lo[s] + hi[s])) / (hi[s] - lo[s])
            out[:, a:b] = chebyshev_eval_many(self.coeffs[:, s, :], t)
        return out


def _chop_length(coeffs: np.ndarray, scales: np.ndarray) -> int:
    thresh = CHOP_TOL * scales[:, None]
    significant = np.abs(coeffs) > thresh
    if not significant.any():
        return 1
    cols = np.nonzero(significant.any(axis=0))[0]
    return int(cols[-1]) + 1


def adaptive_coefficients(
    sample: Callable[[np.ndarray], np.ndarray],
    min_degree: int = MIN_DEGREE,
    max_degree: int = MAX_DEGREE,
) -> np.ndarray:
    """Interpolate one or more integrands, doubling the degree until resolved.

    ``sample(u)`` returns values with shape (K, len(u)).  Returns the chopped
    coefficient matrix (K, D).
    """
    n = min_degree
    while True:
        u = chebyshev_points(n)
        values = np.atleast_2d(sample(u))
        values = np.where(np.isfinite(values), values, 0.0)
        coeffs = values_to_coefficients(values)
        scales = np.maximum(np.abs(coeffs).max(axis=1), SCALE_FLOOR)
        tail = np.abs(coeffs[:, n - n // 8:]).max(axis=1)
        if np.all(tail <= COEFF_TOL * scales):
            return coeffs[:, :_chop_length(coeffs, scales)]
        if n >= max_degree:
            worst = float((tail / scales).max())
            raise ChebyshevConvergenceError(
                f"integrand not resolved at degree {n} (relative tail {worst:.2e})"
            )
        n *= 2


@dataclass(frozen=True, eq=False)
class ChebApprox:
    """A function of v represented as sum_k c_k T_k(u(v))."""

    coefficients: np.ndarray
    domain_map: DomainMap

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, v):
        u = self.domain_map.to_u(v)
        return chebyshev_eval(self.coefficients, u)

    def at_u(self, u):
        return chebyshev_eval(self.coefficients, u)

    def derivative(self, v):
        """d/dv of the represented function."""
        u = self.domain_map.to_u(v)
        du = chebyshev_eval(npcheb.chebder(self.coefficients), u)
        return du / self.domain_map.dv_du(u)


def _anchor(coeffs: np.ndarray, anchor: str) -> np.ndarray:
    b = integrate_coefficients(coeffs)
    if anchor == "start":
        return b
    if anchor == "end":
        # Zero at u = +1 instead of u = -1.
        b[..., 0] -= b.sum(axis=-1)
        return b
    raise ValueError(f"anchor must be 'start' or 'end', got {anchor!r}")


def integrate_function(
    func: Callable[[np.ndarray], np.ndarray],
    domain_map: DomainMap,
    anchor: str = "start",
    min_degree: int = MIN_DEGREE,
    max_degree: int = MAX_DEGREE,
) -> ChebApprox:
    """Antiderivative in v of ``func`` on the mapped domain.

    The integrand is sampled as func(v(u)) * dv/du, so the result F satisfies
    dF/dv = func(v).  With anchor='start' F vanishes at u = -1, with 'end' at u = +1.
    """

    def sample(u):
        with np.errstate(all="ignore"):
            return func(domain_map.to_v(u)) * domain_map.dv_du(u)

    coeffs = adaptive_coefficients(sample, min_degree, max_degree)[0]
    return ChebApprox(_anchor(coeffs, anchor), domain_map)


def antiderivative(a: ChebApprox, anchor: str = "start", **kwargs) -> ChebApprox:
    """Antiderivative of a Chebyshev approximation, including the map's chain-rule factor."""
    return integrate_function(a, a.domain_map, anchor=anchor, **kwargs)


def map_power(alpha: float) -> float:
    return max(4.0, 2.0 / alpha)


def half_line_maps(p: SepParams, c: ClientParams | None = None) -> tuple[HalfLineMap, HalfLineMap]:
    """Left and right maps split at the SEP location, sized to cover both laws."""
    q = map_power(p.alpha)
    t_dealer = (45.0 * p.alpha) ** (1.0 / (q * p.alpha))
    maps = []
    for direction in (-1, 1):
        reach = t_dealer
        if c is not None:
            z = (max(0.0, direction * (c.nu - p.mu)) + 10.0 * c.tau) / p.sigma
            reach = max(reach, z ** (1.0 / q))
        maps.append(HalfLineMap(p.mu, direction, p.sigma, q, reach / 3.0))
    return maps[0], maps[1]


@dataclass(frozen=True, eq=False)
class SplitIntegral:
    """y -> int_{-inf}^y h(v) dv assembled from two half-line pieces.

    ``left`` already holds int_{-inf}^v on v < split; ``right`` holds
    int_{split}^v on v >= split.
    """

    left: ChebApprox
    right: ChebApprox
    split: float
    clamp: tuple[float, float] | None = None
    left_total: float = field(init=False)
    total: float = field(init=False)

    def __post_init__(self) -> None:
        lt = float(self.left.at_u(-1.0))
        object.__setattr__(self, "left_total", lt)
        object.__setattr__(self, "total", lt + float(self.right.at_u(1.0)))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        out = np.empty_like(flat)
        lower = flat < self.split
        out[lower] = self.left(flat[lower])
        out[~lower] = self.left_total + self.right(flat[~lower])
        out = out.reshape(y.shape)
        if self.clamp is not None:
            lo, hi = self.clamp
            excess = max(float(np.max(lo - out, initial=0.0)), float(np.max(out - hi, initial=0.0)))
            if excess > 0.0:
                log = logger.warning if excess > CLAMP_WARN else logger.debug
                log("clamped cdf-like values by %.3g", excess)
            out = np.clip(out, lo, hi)
        return out[()] if out.ndim == 0 else out


def _split_integral(
    func: Callable[[np.ndarray], np.ndarray],
    maps: tuple[HalfLineMap, HalfLineMap],
    clamp=None,
    min_degree: int = MIN_DEGREE,
) -> SplitIntegral:
    left_map, right_map = maps
    # Left map runs from mu (u=-1) to -inf (u=+1); anchor at -inf.
    left = integrate_function(func, left_map, anchor="end", min_degree=min_degree)
    right = integrate_function(func, right_map, anchor="start", min_degree=min_degree)
    return SplitIntegral(left, right, left_map.origin, clamp)


def build_cdf(p: SepParams, c: ClientParams | None = None, min_degree: int = MIN_DEGREE) -> SplitIntegral:
    """Chebyshev approximation of the SEP cdf F(y) = int_{-inf}^y f."""
    cdf = _split_integral(lambda v: sep_pdf(v, p), half_line_maps(p, c), clamp=(0.0, 1.0), min_degree=min_degree)
    if abs(cdf.total - 1.0) > CLAMP_WARN:
        logger.warning("SEP cdf normalisation off by %.3g", cdf.total - 1.0)
    return cdf


def build_survival_power_integral(
    p: SepParams,
    c: ClientParams,
    k: int,
    cdf: SplitIntegral | None = None,
    min_degree: int = MIN_DEGREE,
) -> SplitIntegral:
    """y -> int_{-inf}^y (1 - F(v))^k g(v) dv for k in 0..5."""
    if not 0 <= k <= 5:
        raise ValueError(f"k must be in 0..5, got {k}")
    if cdf is None:
        cdf = build_cdf(p, c)

    def integrand(v):
        return (1.0 - cdf(v)) ** k * gaussian_pdf(v, c)

    return _split_integral(integrand, half_line_maps(p, c), clamp=(0.0, 1.0), min_degree=min_degree)


def build_cover_integral(
    p: SepParams, c: ClientParams, min_degree: int = MIN_DEGREE
) -> SplitIntegral:
    """y -> int_{-inf}^y (1 - G(v)) f(v) dv."""

    def integrand(v):
        return gaussian_sf(v, c) * sep_pdf(v, p)

    return _split_integral(integrand, half_line_maps(p, c), clamp=(0.0, 1.0), min_degree=min_degree)


# Row layout of IntegralTable.values().
ROW_CDF = 0
ROW_COVER = 1


def row_survival(k: int) -> int:
    """Row of int (1-F)^k g, k = 0..kmax."""
    return 2 + k


class IntegralTable:
    """All censoring integrals for one (dealer, client) parameter pair.

    Rows: F, int (1-G) f, int (1-F)^k g for k = 0..kmax, then
    int (1 - (1-F)^k) g for k = 1..kmax.  Every row shares the same pair of
    half-line maps so a single basis evaluation serves all of them.
    """

    def __init__(self, dealer: SepParams, client: ClientParams, kmax: int = 5, min_degree: int = MIN_DEGREE):
        if not 0 <= kmax <= 5:
            raise ValueError("kmax must be in 0..5")
        self.dealer = dealer
        self.client = client
        self.kmax = kmax
        self.maps = half_line_maps(dealer, client)
        self._min_degree = min_degree
        # Left pieces are anchored at -inf; right pieces add the left totals.
        left = self._build_half(self.maps[0], 0.0)
        signs = np.where(np.arange(left.shape[1]) % 2 == 0, 1.0, -1.0)
        self.left_totals = left @ signs
        right = self._build_half(self.maps[1], float(self.left_totals[ROW_CDF]))
        self._pieces = (left, right)
        self.totals = self.left_totals + right.sum(axis=1)
        self._local_cache: dict = {}

    @property
    def n_rows(self) -> int:
        return 2 + (self.kmax + 1) + self.kmax

    def row_complement(self, k: int) -> int:
        """Row of int (1 - (1-F)^k) g, k = 1..kmax."""
        return 2 + self.kmax + k

    def _build_half(self, m: HalfLineMap, left_total: float) -> np.ndarray:
        p, c = self.dealer, self.client
        anchor = "end" if m.direction < 0 else "start"

        def sample_f(u):
            with np.errstate(all="ignore"):
                v = m.to_v(u)
                f = sep_pdf(v, p) * m.dv_du(u)
                return np.vstack([f, f * gaussian_sf(v, c)])

        coeffs_f = adaptive_coefficients(sample_f, self._min_degree)
        cdf_coeffs = _anchor(coeffs_f[0], anchor)

        def sample_g(u):
            with np.errstate(all="ignore"):
                v = m.to_v(u)
                g = gaussian_pdf(v, c) * m.dv_du(u)
                cdf = np.clip(left_total + chebyshev_eval(cdf_coeffs, u), 0.0, 1.0)
                sf = 1.0 - cdf
                log_sf = np.log1p(-cdf)
                rows = [g * sf**k for k in range(self.kmax + 1)]
                rows += [g * -np.expm1(k * log_sf) for k in range(1, self.kmax + 1)]
                return np.vstack(rows)

        coeffs_g = adaptive_coefficients(sample_g, self._min_degree)
        width = max(coeffs_f.shape[1], coeffs_g.shape[1]) + 1
        out = np.zeros((self.n_rows, width))
        anchored_f = _anchor(coeffs_f, anchor)
        anchored_g = _anchor(coeffs_g, anchor)
        out[: anchored_f.shape[0], : anchored_f.shape[1]] = anchored_f
        out[2:, : anchored_g.shape[1]] = anchored_g
        return out

    def _local(self, piece: int, idx: np.ndarray) -> "LocalSeries | None":
        key = (piece, idx.tobytes())
        if key not in self._local_cache:
            self._local_cache[key] = LocalSeries.build(self._pieces[piece][idx])
        return self._local_cache[key]

    def values(self, y, rows: Sequence[int] | None = None) -> np.ndarray:
        """Evaluate rows at y; returns (n_rows, len(y)) clipped to [0, total].

        With ``rows`` given, only those rows are computed and the rest are nan.
        Large inputs go through a piecewise low-degree re-expansion; passing
        y already sorted saves a sort.
        """
        y = np.asarray(y, dtype=float).ravel()
        order = None
        if y.size > 1 and np.any(y[1:] < y[:-1]):
            order = np.argsort(y, kind="stable")
            y = y[order]
        out = np.full((self.n_rows, y.size), np.nan)
        idx = np.arange(self.n_rows) if rows is None else np.unique(np.asarray(rows, dtype=int))
        split = int(np.searchsorted(y, self.dealer.mu, side="left"))
        for piece, (a, b, offset) in enumerate(((0, split, np.zeros(self.n_rows)),
                                                (split, y.size, self.left_totals))):
            if a == b:
                continue
            # The left map runs towards -inf, so u decreases along sorted y.
            step = -1 if piece == 0 else 1
            u = self.maps[piece].to_u(y[a:b])[::step]
            local = self._local(piece, idx) if b - a >= LOCAL_MIN_POINTS else None
            if local is None:
                vals = chebyshev_eval_many(self._pieces[piece][idx], u)
            else:
                vals = local.eval_sorted(u)
            out[idx, a:b] = vals[:, ::step] + offset[idx, None]
        upper = np.clip(self.totals, 0.0, 1.0)[idx, None]
        out[idx] = np.clip(out[idx], 0.0, upper)
        if order is not None:
            unsorted = np.empty_like(out)
            unsorted[:, order] = out
            out = unsorted
        return out
