"""Exponential power, skew exponential power and Gaussian primitives.

All densities live on the reduced-quote scale, i.e. prices expressed as
``(price - CBBT mid) / half-spread``.  Functions accept scalars or numpy
arrays and broadcast like numpy ufuncs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

ALPHA_MAX = 2.0
LAMBDA_MAX_MOMENTS = 50.0
SERIES_RTOL = 1e-12


class ParameterError(ValueError):
    """Raised when distribution parameters fall outside their domain."""


@dataclass(frozen=True)
class SepParams:
    """Parameters of SEP(mu, sigma, alpha, lambda)."""

    alpha: float
    lam: float
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= ALPHA_MAX) or not math.isfinite(self.alpha):
            raise ParameterError(f"alpha must lie in (0, 2], got {self.alpha!r}")
        if not (self.sigma > 0.0) or not math.isfinite(self.sigma):
            raise ParameterError(f"sigma must be positive, got {self.sigma!r}")
        if not (math.isfinite(self.lam) and math.isfinite(self.mu)):
            raise ParameterError("lambda and mu must be finite")

    def reflected(self) -> "SepParams":
        """Law of -X when X ~ SEP(mu, sigma, alpha, lambda)."""
        return SepParams(self.alpha, -self.lam, -self.mu, self.sigma)

    def shifted(self, delta: float) -> "SepParams":
        return SepParams(self.alpha, self.lam, self.mu + delta, self.sigma)


@dataclass(frozen=True)
class ClientParams:
    """Gaussian reservation-value law N(nu, tau^2)."""

    nu: float
    tau: float

    def __post_init__(self) -> None:
        if not (self.tau > 0.0) or not math.isfinite(self.tau):
            raise ParameterError(f"tau must be positive, got {self.tau!r}")
        if not math.isfinite(self.nu):
            raise ParameterError("nu must be finite")

    def reflected(self) -> "ClientParams":
        return ClientParams(-self.nu, self.tau)

    def shifted(self, delta: float) -> "ClientParams":
        return ClientParams(self.nu + delta, self.tau)


def _check_ep(sigma: float, alpha: float) -> None:
    if not (0.0 < alpha <= ALPHA_MAX):
        raise ParameterError(f"alpha must lie in (0, 2], got {alpha!r}")
    if not sigma > 0.0:
        raise ParameterError(f"sigma must be positive, got {sigma!r}")


def ep_log_normalizer(alpha: float) -> float:
    """log c with c = 2 alpha^(1/alpha - 1) Gamma(1/alpha)."""
    return math.log(2.0) + (1.0 / alpha - 1.0) * math.log(alpha) + special.gammaln(1.0 / alpha)


def ep_logpdf(x, mu: float, sigma: float, alpha: float):
    _check_ep(sigma, alpha)
    z = np.abs((np.asarray(x, dtype=float) - mu) / sigma)
    return -(z**alpha) / alpha - ep_log_normalizer(alpha) - math.log(sigma)


def ep_pdf(x, mu: float, sigma: float, alpha: float):
    """Exponential power density f_EP(x; mu, sigma, alpha)."""
    return np.exp(ep_logpdf(x, mu, sigma, alpha))


def skew_argument(z, alpha: float, lam: float):
    """w = sign(z) |z|^(alpha/2) lambda sqrt(2/alpha)."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.abs(z) ** (alpha / 2.0) * lam * math.sqrt(2.0 / alpha)


def sep_logpdf(x, p: SepParams):
    x = np.asarray(x, dtype=float)
    z = (x - p.mu) / p.sigma
    w = skew_argument(z, p.alpha, p.lam)
    return math.log(2.0) + special.log_ndtr(w) + ep_logpdf(x, p.mu, p.sigma, p.alpha)


def sep_pdf(x, p: SepParams):
    """Density 2 Phi(w) f_EP(x) of the skew exponential power law."""
    return np.exp(sep_logpdf(x, p))


def _log_double_factorial_odd(n: np.ndarray) -> np.ndarray:
    # log((2n+1)!!) = log((2n+1)!) - n log 2 - log(n!)
    return special.gammaln(2.0 * n + 2.0) - n * math.log(2.0) - special.gammaln(n + 1.0)


def _odd_moment_series(s: float, ratio: float) -> float:
    """sum_n Gamma(s+n+1/2) / (2n+1)!! * ratio^n, truncated at SERIES_RTOL."""
    if ratio == 0.0:
        return math.exp(special.gammaln(s + 0.5))
    log_ratio = math.log(ratio)
    total = 0.0
    start = 0
    chunk = 4096
    prev_last = -np.inf
    while start < 50_000_000:
        n = np.arange(start, start + chunk, dtype=float)
        log_terms = special.gammaln(s + n + 0.5) - _log_double_factorial_odd(n) + n * log_ratio
        terms = np.exp(log_terms)
        total += math.fsum(terms)
        last = log_terms[-1]
        # Terms eventually decay geometrically; stop once past the peak and negligible.
        if last < prev_last and terms[-1] < SERIES_RTOL * total:
            small = terms < SERIES_RTOL * total
            if small[-chunk // 4:].all():
                break
        prev_last = last
        start += chunk
        chunk = min(chunk * 2, 1 << 20)
    return total


def sep_moment(m: int, p: SepParams) -> float:
    """E[((X - mu)/sigma)^m] for X ~ SEP(mu, sigma, alpha, lambda), 1 <= m <= 4."""
    if not 1 <= m <= 4:
        raise ParameterError(f"moment order must be in 1..4, got {m}")
    a, lam = p.alpha, p.lam
    if m % 2 == 0:
        k = m // 2
        return math.exp((2 * k / a) * math.log(a) + special.gammaln((2 * k + 1) / a) - special.gammaln(1 / a))
    if lam == 0.0:
        return 0.0
    if abs(lam) > LAMBDA_MAX_MOMENTS:
        raise ParameterError(f"|lambda| must be <= {LAMBDA_MAX_MOMENTS} for odd moments")
    k = (m - 1) // 2
    s = 2.0 * (k + 1) / a
    lam2 = lam * lam
    series = _odd_moment_series(s, 2.0 * lam2 / (1.0 + lam2))
    log_pref = (
        math.log(2.0)
        + ((2 * k + 1) / a) * math.log(a)
        - 0.5 * math.log(math.pi)
        - special.gammaln(1.0 / a)
        - (s + 0.5) * math.log1p(lam2)
    )
    return lam * math.exp(log_pref) * series


def sep_mean(p: SepParams) -> float:
    return p.mu + p.sigma * sep_moment(1, p)


def sep_std(p: SepParams) -> float:
    m1 = sep_moment(1, p)
    return p.sigma * math.sqrt(sep_moment(2, p) - m1 * m1)


def ep_sample(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Standard EP(0, 1, alpha) draws via |Z|^alpha / alpha ~ Gamma(1/alpha)."""
    g = rng.standard_gamma(1.0 / alpha, size=size)
    radius = (alpha * g) ** (1.0 / alpha)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * radius


def sep_sample_rng(p: SepParams, size, rng: np.random.Generator) -> np.ndarray:
    """SEP draws from an existing generator.

    Uses the sign-flip form of the skew-symmetric construction: keep the symmetric
    draw z with probability Phi(w(z)), otherwise return -z.
    """
    z = ep_sample(p.alpha, size, rng)
    keep = rng.random(np.shape(z)) < special.ndtr(skew_argument(z, p.alpha, p.lam))
    z = np.where(keep, z, -z)
    return p.mu + p.sigma * z


def sep_sample(p: SepParams, count: int, seed: int) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be non-negative")
    return sep_sample_rng(p, count, np.random.default_rng(seed))


def gaussian_pdf(x, c: ClientParams):
    x = np.asarray(x, dtype=float)
    z = (x - c.nu) / c.tau
    return np.exp(-0.5 * z * z) / (c.tau * math.sqrt(2.0 * math.pi))


def gaussian_cdf(x, c: ClientParams):
    return special.ndtr((np.asarray(x, dtype=float) - c.nu) / c.tau)


def gaussian_logsf(x, c: ClientParams):
    """log(1 - G(x)), accurate deep in the right tail."""
    return special.log_ndtr((c.nu - np.asarray(x, dtype=float)) / c.tau)


def gaussian_sf(x, c: ClientParams):
    return special.ndtr((c.nu - np.asarray(x, dtype=float)) / c.tau)
