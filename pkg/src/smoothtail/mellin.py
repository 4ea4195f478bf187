"""Mellin-function analysis: evaluation, roots, regime classification.

The Mellin function of a model is m(s) = E[sum_i A_i^s].  Its geometry
against the level 1 (two crossings, tangency, or none) decides which
tail regime the fixed-point solution lives in, so the classifier here
is the gatekeeper for everything downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import models, rng
from .errors import MellinDiverged, NoFiniteWindow

_S_EPS = 1e-8  # left end of the scan window, exclusive of 0


@dataclass(frozen=True)
class RootInfo:
    s: float
    m_prime: float


@dataclass(frozen=True)
class AssumptionFlags:
    """Hypothesis checklist for the critical tail theorem."""

    EN_gt_1: bool
    nonarithmetic: bool
    moments_finite: bool
    delta: float
    moments: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MellinReport:
    regime: str  # TwoRoot | CriticalTangent | StrictlySubcriticalWindow | NoRootBelowOne
    roots: tuple
    window: tuple | None
    delta: float
    flags: AssumptionFlags | None
    stderr_at_min: float = 0.0


class _McMellin:
    """Common-random-numbers Monte Carlo surrogate for m(s).

    One pool of branch samples is drawn up front and reused for every
    s, which makes the estimate a smooth deterministic function of s
    (suitable for bracketing root finders) with a computable stderr.
    """

    def __init__(self, spec: models.ModelSpec, budget: int, seed: int):
        counts, _, a_flat, _ = models.sample_branches(spec, seed, budget)
        self.owner = np.repeat(np.arange(budget), counts)
        self.log_a = np.log(a_flat)
        self.n = budget

    def moments(self, s: float, order: int = 0):
        with np.errstate(over="ignore"):
            w = np.exp(self.log_a * s)
            if order:
                w = w * self.log_a**order
            per = np.bincount(self.owner, weights=w, minlength=self.n)
        mean = per.mean()
        if not math.isfinite(mean):
            raise MellinDiverged(f"Monte Carlo Mellin estimate overflowed at s={s:g}")
        se = per.std(ddof=1) / math.sqrt(self.n)
        return mean, se


def evaluate(spec: models.ModelSpec, s: float, budget: int = 10**5,
             seed: int = 0, force_mc: bool = False):
    """Return (m(s), stderr); stderr is 0 for the closed form.

    Raises MellinDiverged where m(s) is infinite.
    """
    if not force_mc:
        v = models.analytic_mellin(spec, s)
        if math.isinf(v):
            raise MellinDiverged(f"m({s:g}) diverges for {spec.label or spec}")
        return v, 0.0
    return _McMellin(spec, budget, seed).moments(s)


def derivative(spec: models.ModelSpec, s: float, order: int = 1,
               budget: int = 10**5, seed: int = 0, force_mc: bool = False):
    """s-derivative of m of order 1 or 2, as (value, stderr)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if not force_mc:
        v = models.analytic_mellin(spec, s, order)
        if math.isinf(v):
            raise MellinDiverged(f"m^({order})({s:g}) diverges")
        return v, 0.0
    return _McMellin(spec, budget, seed).moments(s, order)


def default_delta(alpha: float) -> float:
    """Working moment margin below 1-alpha, capped at 1/4."""
    if not 0.0 < alpha < 1.0:
        return 0.25
    return min(0.5 * (1.0 - alpha), 0.25)


def check_assumptions(spec: models.ModelSpec, alpha: float,
                      delta: float | None = None) -> AssumptionFlags:
    """Evaluate the hypotheses needed by the critical tail theory.

    Uses closed forms for every law family in this package; the Monte
    Carlo growth heuristic (mc_moment_diverges) exists for laws whose
    moments cannot be integrated directly.
    """
    if delta is None:
        delta = default_delta(alpha)
    moments = {
        "E[N^(1+delta)]": spec.offspring.moment(1.0 + delta),
        "E[B^(alpha+delta)]": spec.inhom.moment(alpha + delta),
        "m(-delta)": models.analytic_mellin(spec, -delta),
        "m(alpha+delta)": models.analytic_mellin(spec, alpha + delta),
    }
    finite = all(math.isfinite(v) for v in moments.values())
    return AssumptionFlags(
        EN_gt_1=spec.offspring.mean() > 1.0,
        nonarithmetic=models.is_nonarithmetic(spec.weight),
        moments_finite=finite,
        delta=delta,
        moments=moments,
    )


def mc_moment_diverges(sampler, budgets=(10**4, 10**5, 10**6),
                       growth_factor: float = 3.0, seed: int = 0) -> bool:
    """Divergence heuristic for E[X] from samples alone.

    ``sampler(n, seed)`` must return n i.i.d. nonnegative draws.  The
    mean is estimated at increasing budgets with independent seeds; a
    growth by more than ``growth_factor`` from the smallest budget to
    the largest is declared divergence.  This is a screen, not a proof.
    """
    means = []
    for i, n in enumerate(budgets):
        x = np.asarray(sampler(int(n), seed + i), dtype=np.float64)
        means.append(float(np.mean(x)))
    if not all(math.isfinite(v) for v in means):
        return True
    return means[-1] > growth_factor * means[0]


def find_roots(spec: models.ModelSpec, s_max: float = 10.0, tol: float = 1e-9,
               budget: int = 10**5, seed: int = 0,
               force_mc: bool = False) -> MellinReport:
    """Locate the roots of m(s) = 1 on (0, s_max] and classify the regime.

    Convexity of m makes the root set an interval boundary: the regime
    is TwoRoot when m dips below 1 and comes back, CriticalTangent when
    the minimum touches 1 within tolerance (3 stderr for Monte Carlo),
    StrictlySubcriticalWindow when m stays below 1 through s_max past a
    single down-crossing (the window records where m < 1), and
    NoRootBelowOne when m never reaches 1.
    """
    if force_mc:
        mc = _McMellin(spec, budget, seed)

        def m(s):
            return mc.moments(s)[0]

        def m_se(s):
            return mc.moments(s)[1]

        def m_prime(s):
            return mc.moments(s, 1)[0]
    else:
        def m(s):
            return models.analytic_mellin(spec, s)

        def m_se(s):
            return 0.0

        def m_prime(s):
            return models.analytic_mellin(spec, s, 1)

    # Restrict to the sub-interval where m is finite (it is an interval:
    # m is convex, finite at 0+, and can only blow up at the right end).
    s_hi = s_max
    grid = np.linspace(_S_EPS, s_max, 257)
    finite = []
    for s in grid:
        try:
            finite.append(math.isfinite(m(s)))
        except MellinDiverged:
            finite.append(False)
    if not any(finite):
        raise NoFiniteWindow(f"m(s) diverges on all of (0, {s_max:g}]")
    if not all(finite):
        s_hi = grid[np.nonzero(finite)[0].max()]

    res = optimize.minimize_scalar(m, bounds=(_S_EPS, s_hi), method="bounded",
                                   options={"xatol": 1e-12})
    s_star = float(res.x)
    m_min = float(res.fun)
    if not force_mc and _S_EPS < s_star < s_hi:
        # Newton-polish the flat minimum on m' (the quadratic bowl limits
        # a value-based minimizer to ~sqrt(eps) accuracy in s)
        for _ in range(3):
            d1 = models.analytic_mellin(spec, s_star, 1)
            d2 = models.analytic_mellin(spec, s_star, 2)
            if not (math.isfinite(d1) and math.isfinite(d2)) or d2 <= 0:
                break
            step = d1 / d2
            s_star = min(max(s_star - step, _S_EPS), s_hi)
            if abs(step) < 1e-15 * max(1.0, abs(s_star)):
                break
        m_min = m(s_star)
    # the bounded minimizer can stall a hair away from a boundary minimum
    for s_edge in (_S_EPS, s_hi):
        v = m(s_edge)
        if v < m_min:
            s_star, m_min = s_edge, v

    crit_tol = tol if not force_mc else max(tol, 3.0 * m_se(s_star))
    en = spec.offspring.mean()

    def flags_for(alpha):
        return check_assumptions(spec, alpha) if 0.0 < alpha < 1.0 else \
            check_assumptions(spec, alpha, delta=0.25)

    if abs(m_min - 1.0) <= crit_tol:
        alpha = s_star
        fl = flags_for(alpha)
        return MellinReport(
            regime="CriticalTangent",
            roots=(RootInfo(alpha, m_prime(alpha)),),
            window=None,
            delta=fl.delta,
            flags=fl,
            stderr_at_min=m_se(s_star),
        )
    if m_min > 1.0:
        return MellinReport(regime="NoRootBelowOne", roots=(), window=None,
                            delta=math.nan, flags=None,
                            stderr_at_min=m_se(s_star))

    # m dips strictly below 1: locate the crossings that exist
    roots = []
    if en > 1.0 + crit_tol:
        lo = optimize.brentq(lambda s: m(s) - 1.0, _S_EPS, s_star, xtol=1e-13)
        roots.append(RootInfo(float(lo), m_prime(lo)))
        win_lo = float(lo)
    else:
        win_lo = 0.0
    has_up = m(s_hi) > 1.0
    if has_up:
        hi = optimize.brentq(lambda s: m(s) - 1.0, s_star, s_hi, xtol=1e-13)
        roots.append(RootInfo(float(hi), m_prime(hi)))
        win_hi = float(hi)
    else:
        win_hi = s_hi

    if len(roots) == 2:
        alpha = roots[0].s
        fl = flags_for(alpha)
        return MellinReport(regime="TwoRoot", roots=tuple(roots), window=None,
                            delta=fl.delta, flags=fl,
                            stderr_at_min=m_se(s_star))
    alpha = roots[0].s if roots else win_lo
    fl = flags_for(alpha) if alpha > 0 else None
    return MellinReport(
        regime="StrictlySubcriticalWindow",
        roots=tuple(roots),
        window=(win_lo, win_hi),
        delta=fl.delta if fl else math.nan,
        flags=fl,
        stderr_at_min=m_se(s_star),
    )
