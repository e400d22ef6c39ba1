"""Derivative-free maximisation with Powell's direction-set method.

The search runs in an unconstrained space; :class:`Transform` maps each
coordinate onto its legal region (logistic for bounded parameters, exp for
scales, identity otherwise).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))
GROW = 1.0 + (1.0 + math.sqrt(5.0)) / 2.0
ALPHA_MIN = 1e-3
ALPHA_MAX = 2.0
PROB_EPS = 1e-4


def _sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def _logit(q: float) -> float:
    return math.log(q) - math.log1p(-q)


@dataclass(frozen=True)
class Bijection:
    """One coordinate: ``forward`` maps the search line onto the model range."""

    kind: str  # "identity", "log", "logistic"
    lower: float = 0.0
    upper: float = 1.0

    def forward(self, t: float) -> float:
        if self.kind == "identity":
            return float(t)
        if self.kind == "log":
            return math.exp(min(t, 700.0))
        return self.lower + (self.upper - self.lower) * _sigmoid(t)

    def inverse(self, x: float) -> float:
        if self.kind == "identity":
            return float(x)
        if self.kind == "log":
            if not x > 0.0:
                raise ValueError(f"value {x!r} outside (0, inf)")
            return math.log(x)
        q = (x - self.lower) / (self.upper - self.lower)
        if not 0.0 < q < 1.0:
            # Clamp boundary values (e.g. p = 1) onto the representable interior.
            q = min(max(q, 1e-15), 1.0 - 1e-15)
        return _logit(q)


IDENTITY = Bijection("identity")
POSITIVE = Bijection("log")
ALPHA = Bijection("logistic", ALPHA_MIN, ALPHA_MAX)
PROBABILITY = Bijection("logistic", PROB_EPS, 1.0 - PROB_EPS)


@dataclass(frozen=True)
class Transform:
    coords: tuple[Bijection, ...]

    def forward(self, t: np.ndarray) -> np.ndarray:
        return np.array([c.forward(v) for c, v in zip(self.coords, t)])

    def inverse(self, x: Sequence[float]) -> np.ndarray:
        return np.array([c.inverse(v) for c, v in zip(self.coords, x)])

    def __len__(self) -> int:
        return len(self.coords)


@dataclass
class FitProblem:
    """Maximise ``objective`` over model-space vectors.

    ``objective`` receives the model-space vector; non-finite values and
    ArithmeticError/ValueError are read as minus infinity.
    """

    objective: Callable[[np.ndarray], float]
    transform: Transform
    initial: np.ndarray
    f_tol: float = 1e-9
    x_tol: float = 1e-7
    max_iterations: int = 200
    line_tol: float = 1e-4
    evaluations: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self.initial = np.asarray(self.initial, dtype=float)
        if len(self.transform) != self.initial.size:
            raise ValueError("transform and initial point differ in length")

    def value(self, t: np.ndarray) -> float:
        """Objective at a search-space point."""
        self.evaluations += 1
        try:
            v = float(self.objective(self.transform.forward(t)))
        except (ArithmeticError, ValueError):
            return -math.inf
        return v if math.isfinite(v) else -math.inf


@dataclass
class OptimResult:
    """Optimiser output in model space (``x``) and search space (``t``)."""

    x: np.ndarray
    t: np.ndarray
    value: float
    iterations: int
    converged: bool
    evaluations: int
    restarts_used: int = 0
    history: list[float] = field(default_factory=list)
    message: str = ""


def _bracket(g: Callable[[float], float], g0: float, step: float, budget: int):
    """Bracket a minimum of g along a line starting at 0.

    Returns (a, b, c, ga, gb, gc) with gb <= ga, gb <= gc, or None.
    """
    a, ga = 0.0, g0
    b, gb = step, g(step)
    used = 1
    if gb > ga:
        # Try the other way before shrinking.
        c, gc = -step, g(-step)
        used += 1
        if gc >= ga:
            # Shrink towards 0 in both directions.
            h = step
            while used < budget:
                h *= 0.1
                gp, gm = g(h), g(-h)
                used += 2
                if gp < ga:
                    return _expand(g, 0.0, ga, h, gp, budget - used)
                if gm < ga:
                    return _expand(g, 0.0, ga, -h, gm, budget - used)
            return None
        return _expand(g, a, ga, -step, gc, budget - used)
    return _expand(g, a, ga, b, gb, budget - used)


def _expand(g, a, ga, b, gb, budget):
    """Given g(b) < g(a), walk downhill until the function rises."""
    c = b + (b - a) * (GROW - 1.0)
    gc = g(c)
    used = 1
    while gc < gb and used < max(budget, 1):
        a, ga, b, gb = b, gb, c, gc
        c = b + (b - a) * (GROW - 1.0)
        gc = g(c)
        used += 1
    if gc < gb:
        return None
    if a > c:
        a, ga, c, gc = c, gc, a, ga
    return a, b, c, ga, gb, gc


def _brent(g, a, b, c, gb, tol: float, max_iter: int = 100):
    """Brent's parabolic/golden minimisation inside the bracket [a, c]."""
    lo, hi = min(a, c), max(a, c)
    x = w = v = b
    gx = gw = gv = gb
    d = e = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        tol1 = tol * (abs(x) + 1e-3)
        tol2 = 2.0 * tol1
        if abs(x - mid) <= tol2 - 0.5 * (hi - lo):
            break
        parabolic = False
        if abs(e) > tol1 and math.isfinite(gx) and math.isfinite(gw) and math.isfinite(gv):
            r = (x - w) * (gx - gv)
            q = (x - v) * (gx - gw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            if abs(p) < abs(0.5 * q * e) and q * (lo - x) < p < q * (hi - x):
                e, d = d, p / q
                u = x + d
                if u - lo < tol2 or hi - u < tol2:
                    d = tol1 if mid >= x else -tol1
                parabolic = True
        if not parabolic:
            e = (hi - x) if x < mid else (lo - x)
            d = GOLDEN * e
        u = x + (d if abs(d) >= tol1 else math.copysign(tol1, d))
        gu = g(u)
        if gu <= gx:
            if u >= x:
                lo = x
            else:
                hi = x
            v, gv, w, gw, x, gx = w, gw, x, gx, u, gu
        else:
            if u < x:
                lo = u
            else:
                hi = u
            if gu <= gw or w == x:
                v, gv, w, gw = w, gw, u, gu
            elif gu <= gv or v == x or v == w:
                v, gv = u, gu
    return x, gx


def line_search(f: Callable[[np.ndarray], float], point, direction, f0: float | None = None,
                tol: float = 1e-10, budget: int = 60) -> float:
    """Step s maximising f(point + s * direction); 0 when nothing improves."""
    point = np.asarray(point, dtype=float)
    direction = np.asarray(direction, dtype=float)
    step, _ = _line_max(f, point, direction, f0, tol, budget)
    return step


def _line_max(f, point, direction, f0, tol, budget):
    def g(s: float) -> float:
        v = f(point + s * direction)
        return -v if math.isfinite(v) else math.inf

    g0 = -f(point) if f0 is None else -f0
    if not math.isfinite(g0):
        return 0.0, -g0
    br = _bracket(g, g0, 1.0, budget)
    if br is None:
        return 0.0, -g0
    a, b, c, ga, gb, gc = br
    s, gs = _brent(g, a, b, c, gb, tol)
    if not gs < g0:
        return 0.0, -g0
    return s, -gs


def powell_maximize(problem: FitProblem, start: np.ndarray | None = None) -> OptimResult:
    """Classic Powell with replacement of the largest-gain direction.

    ``start`` is a search-space point; by default the transformed initial point.
    The direction set is reset to the coordinate axes every 5 * dim cycles.
    """
    t = problem.transform.inverse(problem.initial) if start is None else np.asarray(start, dtype=float)
    dim = t.size
    evals_before = problem.evaluations
    fx = problem.value(t)
    if not math.isfinite(fx):
        raise ValueError("objective is not finite at the initial point")
    directions = np.eye(dim)
    history = [fx]
    converged = False
    cycle = 0
    for cycle in range(1, problem.max_iterations + 1):
        t_start, f_start = t.copy(), fx
        biggest, ibig = 0.0, 0
        for i in range(dim):
            s, fnew = _line_max(problem.value, t, directions[i], fx, problem.line_tol, 60)
            if s != 0.0 and fnew > fx:
                t = t + s * directions[i]
                if fnew - fx > biggest:
                    biggest, ibig = fnew - fx, i
                fx = fnew
        gain = fx - f_start
        move = float(np.max(np.abs(t - t_start)))
        history.append(fx)
        logger.debug("cycle %d: f=%.10g gain=%.3g move=%.3g", cycle, fx, gain, move)
        if gain <= problem.f_tol * 0.5 * (abs(f_start) + abs(fx)) + 1e-300 and move < problem.x_tol:
            converged = True
            break
        shift = t - t_start
        if np.any(shift != 0.0):
            f_ext = problem.value(t + shift)
            if f_ext > f_start:
                # Powell's test for adopting the average direction.
                crit = -2.0 * (f_start - 2.0 * fx + f_ext) * (f_start - fx + biggest) ** 2 \
                    - biggest * (f_start - f_ext) ** 2
                if crit < 0.0:
                    s, fnew = _line_max(problem.value, t, shift, fx, problem.line_tol, 60)
                    if s != 0.0 and fnew > fx:
                        t = t + s * shift
                        fx = fnew
                    directions[ibig] = directions[-1]
                    directions[-1] = shift / np.linalg.norm(shift)
        if cycle % (5 * dim) == 0:
            directions = np.eye(dim)
    message = "converged" if converged else f"no convergence after {cycle} cycles"
    return OptimResult(
        x=problem.transform.forward(t),
        t=t,
        value=fx,
        iterations=cycle,
        converged=converged,
        evaluations=problem.evaluations - evals_before,
        history=history,
        message=message,
    )


def multistart(problem: FitProblem, starts: int = 1, seed: int = 0, jitter: float = 0.5) -> OptimResult:
    """Best of ``starts`` Powell runs; run 0 starts exactly at the initial point.

    Other runs add N(0, jitter^2) noise to the search-space initial point.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    rng = np.random.default_rng(seed)
    t0 = problem.transform.inverse(problem.initial)
    best: OptimResult | None = None
    total_evals = 0
    for k in range(starts):
        start = t0 if k == 0 else t0 + rng.normal(0.0, jitter, size=t0.size)
        try:
            res = powell_maximize(problem, start)
        except ValueError:
            logger.warning("start %d: objective not finite, skipped", k)
            continue
        total_evals += res.evaluations
        if best is None or res.value > best.value:
            best = res
    if best is None:
        raise ValueError("objective is not finite at any start")
    best.restarts_used = starts - 1
    best.evaluations = total_evals
    return best
