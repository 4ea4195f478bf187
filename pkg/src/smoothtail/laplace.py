"""Laplace-transform route to the critical tail constant.

The minimal solution's transform phi(t) = E e^{-tR} solves the fixed
point phi(t) = E[e^{-tB} prod_i phi(t A_i)].  Iterating from phi = 1
converges monotonically down to the minimal solution; everything here
works in the deficit u = 1 - phi, which is free of cancellation at
small t where phi is within 1e-9 of 1.

On a grid uniform in log t, evaluating u at t * A is an index shift by
the constant log(A)/h, so one fixed sample pool (common random numbers
across iterations) turns each sweep into shifted reads of the
interpolant, which is linear in (log t, log u): exact in the small-t
limit where u is a power of t, and elsewhere a chord under the concave
graph of log u, so the discrete map errs a hair toward the subcritical
side and keeps a genuine minimal fixed point even at criticality.
Every iterate stays in [0,1], monotone in t, with u/t nonincreasing,
and the transform shape invariants are checked each sweep.

From the converged transform, the harmonic analysis of
D(x) = e^{alpha x} (1 - phi(e^{-x})) under the tilted step law Y gives
the Poisson equation E[D(x+Y)] - D(x) = G(x) and the tail constant

    C_D = -2 integral(x G(x) dx) / sigma^2,   C_tail = C_D / Gamma(1-a).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import _kernels
from .errors import (GridTooNarrow, MonotonicityViolated, NoPlateau,
                     NotConverged, NotNormalized)
from .models import ModelSpec, sample_branches
from .tilted import tilted_law

__all__ = [
    "LaplaceGrid",
    "PoissonData",
    "TailConstant",
    "iterate_phi",
    "derive_poisson",
    "tail_constant_from_laplace",
    "regular_variation_ratios",
]

# Plain iterates are nondecreasing in exact arithmetic, and the kernel
# accumulates the pool sum with Kahan compensation, so each sweep's
# value is exact to about an ulp of the branch terms; a decrease beyond
# ten machine epsilons is then a genuine overshoot of the interpolant,
# not rounding.
_MONOTONE_EPS = 10.0 * float(np.finfo(np.float64).eps)
# Slack for the bound and in-t shape checks, which compare quantities
# of order one that are exact only modulo per-branch rounding; genuine
# shape bugs (overshooting reads, sign slips) land at 1e-3 or worse.
_MONOTONE_SLACK = 1e-12
# The u/t shape comparison has vanishing exact margin where u/t is flat
# (the left edge during early sweeps), and there the interpolated map
# wiggles at the interpolation-error scale, measured near 3e-9 relative;
# bugs that actually break the shape (overshooting interpolants, sign
# slips) land at 1e-3 or worse, so 1e-6 separates the two cleanly.
_SHAPE_RTOL = 1e-6
# Switch from plain sweeps to Newton once this many sweeps have run and
# the sup update has fallen below the gate (the iterate is then well
# inside the Newton basin; subcritical models usually converge plainly
# before ever reaching the gate).
_NEWTON_MIN_PLAIN = 30
_NEWTON_GATE = 1e-2


def _grid(t_min: float, t_max: float, points_per_decade: int,
          base: float = 10.0):
    """Log-uniform abscissae with spacing h = log(base)/points_per_decade.

    ``points_per_decade`` counts knots per factor of ``base`` (a decade
    in the default base 10).  The span must cover at least 10 decades;
    narrower grids cannot hold the source term's full support.
    """
    if not (0.0 < t_min < t_max):
        raise ValueError("need 0 < t_min < t_max")
    if points_per_decade < 4:
        raise ValueError("points_per_decade must be >= 4")
    if not base > 1.0:
        raise ValueError("base must be > 1")
    if math.log10(t_max / t_min) < 10.0 - 1e-9:
        raise ValueError("grid must span at least 10 decades")
    h = math.log(base) / points_per_decade
    n = int(round(math.log(t_max / t_min) / h)) + 1
    return np.exp(math.log(t_min) + h * np.arange(n)), h


def _log_ratios(u: np.ndarray) -> np.ndarray:
    """Per-cell log ratios log(u[k+1]/u[k]) of the log-log interpolant.

    Cells with a nonpositive endpoint get ratio 0; the kernels read
    their base value directly (only the all-zero start iterate and
    transient Newton trial states have such cells).
    """
    r = np.zeros(u.shape[0] - 1)
    ok = (u[:-1] > 0.0) & (u[1:] > 0.0)
    r[ok] = np.log(u[1:][ok] / u[:-1][ok])
    return r


def _left_ratio(u: np.ndarray) -> float:
    """Per-index log ratio for geometric extrapolation below the grid."""
    if u[0] > 0.0 and u[1] > u[0]:
        return math.log(u[1] / u[0])
    return 0.0


def _recenter_pool(a_flat: np.ndarray, alpha: float, m: int):
    """Project a branch pool onto the critical manifold at ``alpha``.

    A finite pool drawn from a critical model has empirical Mellin mass
    g(alpha) = 1 + O(M^{-1/2}) and drift g'(alpha) = O(M^{-1/2}); when
    the mass lands above 1 (half the time) the pool-empirical branching
    is strictly supercritical and the minimal fixed point collapses to
    phi = 0, so the iteration has nothing useful to converge to.  The
    two-parameter deformation a -> c a^p (solved so that the deformed
    pool has mass exactly 1 and drift exactly 0 at alpha) removes the
    sampling drift while keeping the pool fixed across iterations.

    Returns (a_new, c, p).  Raises NotNormalized when the required
    deformation is large, which means the model itself is not
    near-critical at alpha rather than the pool being noisy.
    """
    la = np.log(a_flat)

    def g_and_dg(p: float):
        w = np.exp(alpha * p * la)
        g = float(w.sum()) / m
        dg = float((w * la).sum()) / m      # d/ds at s = alpha, per unit p
        d2g = float((w * la * la).sum()) / m
        return g, dg, d2g

    # Solve psi(p) = ln g(p a) - a p g'(p a)/g(p a) = 0, then
    # ln c = -p g'(p a)/g(p a); psi is strictly decreasing in p.
    p = 1.0
    for _ in range(60):
        g, dg, d2g = g_and_dg(p)
        psi = math.log(g) - alpha * p * dg / g
        dpsi = -alpha * alpha * p * (d2g * g - dg * dg) / (g * g)
        step = psi / dpsi
        p_new = p - step
        if not (0.0 < p_new < 10.0):
            raise NotNormalized(
                "pool recentring diverged; the model is not "
                f"near-critical at alpha = {alpha:g}")
        p = p_new
        if abs(step) < 1e-14:
            break
    g, dg, _ = g_and_dg(p)
    ln_c = -p * dg / g
    if abs(p - 1.0) > 0.2 or abs(ln_c) > 0.2:
        raise NotNormalized(
            f"pool recentring needs a large deformation (p = {p:.3g}, "
            f"ln c = {ln_c:.3g}); the model is not near-critical at "
            f"alpha = {alpha:g}")
    a_new = np.exp(ln_c + p * la)
    return a_new, math.exp(ln_c), p


def _check_shape(u: np.ndarray, t: np.ndarray, it: int) -> None:
    """Transform shape invariants for one iterate (checked, not assumed).

    u must lie in [0,1], be nondecreasing in t, and have u/t
    nonincreasing in t (every iterate is the transform deficit of a
    positive variable, which has all three exactly); slacks cover pool
    rounding noise only.
    """
    if float(u.min()) < -0.0 or float(u.max()) > 1.0 + _MONOTONE_SLACK:
        raise MonotonicityViolated(
            f"iterate {it} leaves [0,1]: range "
            f"[{float(u.min()):.3g}, {float(u.max()):.3g}]")
    du = np.diff(u)
    if float(du.min()) < -_MONOTONE_SLACK:
        j = int(np.argmin(du))
        raise MonotonicityViolated(
            f"iterate {it} of 1-phi decreases in t at knot {j} "
            f"by {-float(du[j]):.3g}")
    lhs = u[:-1] * t[1:]
    rhs = u[1:] * t[:-1]
    bad = lhs < rhs * (1.0 - _SHAPE_RTOL) - 1e-300
    if bool(bad.any()):
        j = int(np.argmax(bad))
        raise MonotonicityViolated(
            f"iterate {it} of (1-phi)/t increases in t at knot {j}")


@dataclass(frozen=True)
class LaplaceGrid:
    """Converged transform iterate on a log-uniform t grid.

    ``u`` is the deficit 1 - phi at the knots and ``alpha`` the tilting
    exponent recorded for downstream harmonic analysis (NaN when none
    was given).  The sample pool that defines the fixed-point map is
    retained (with the critical-manifold recentring a -> c a^p already
    applied, see iterate_phi) so downstream evaluations reuse the exact
    same randomness.
    """

    t: np.ndarray
    u: np.ndarray
    h: float
    alpha: float
    iterations: int
    residual: float
    branch_pool_size: int
    seed: int
    recenter_c: float
    recenter_p: float
    update_history: np.ndarray
    pool_counts: np.ndarray = field(repr=False)
    pool_b: np.ndarray = field(repr=False)
    pool_a: np.ndarray = field(repr=False)
    pool_offsets: np.ndarray = field(repr=False)

    @property
    def phi(self) -> np.ndarray:
        return 1.0 - self.u

    def evaluate(self, t) -> np.ndarray:
        """Interpolated deficit u(t), linear in (log t, log u).

        Below the grid, log u is extrapolated with the locally fitted
        left slope; above it, u is clamped to its last knot (the same
        rules the fixed-point sweeps use).
        """
        tq = np.atleast_1d(np.asarray(t, dtype=np.float64))
        lnr = _log_ratios(self.u)
        pos = (np.log(tq) - math.log(self.t[0])) / self.h
        out = np.empty(tq.shape)
        ratio = _left_ratio(self.u)
        for i, p in enumerate(pos):
            if p <= 0.0:
                out[i] = self.u[0] * math.exp(ratio * p) \
                    if self.u[0] > 0 else 0.0
            elif p >= self.u.shape[0] - 1:
                out[i] = self.u[-1]
            else:
                k = int(p)
                f = p - k
                out[i] = self.u[k] * math.exp(f * lnr[k]) \
                    if self.u[k] > 0 else 0.0
        if np.isscalar(t) or np.asarray(t).ndim == 0:
            return float(out[0])
        return out


def iterate_phi(spec: ModelSpec, t_min: float = 1e-9, t_max: float = 1e8,
                points_per_decade: int = 25, base: float = 10.0,
                pool_size: int = 100_000, tol: float = 1e-9,
                max_iter: int = 10_000, seed: int = 0,
                alpha: float = float("nan")) -> LaplaceGrid:
    """Solve the transform fixed point to sup-norm update ``tol``.

    Starts at phi = 1 (u = 0), whose plain iterates decrease pointwise
    to the minimal solution; a violation of that monotonicity (beyond
    ten machine epsilons) or of the transform shape invariants raises
    MonotonicityViolated, and exhausting ``max_iter`` raises
    NotConverged.  One pool of ``pool_size`` branch samples (seed-fixed)
    defines the map throughout, so the limit is the exact fixed point of
    the pool-empirical model and every verification downstream can reuse
    the identical randomness.

    Away from criticality the plain sweeps contract geometrically and
    finish on their own.  Near criticality the spectral gap is small
    and plain sweeps would need far more than ``max_iter`` of them, so
    once warmed up the solver accelerates with damped Newton steps on
    F(u) - u = 0, using the exact Jacobian of the interpolated map;
    convergence is still certified on the spec of the plain iteration,
    by committing a final plain sweep whose sup update is below ``tol``.
    ``update_history`` records plain-phase sup updates followed by
    Newton-phase defects (for the current iterate, sup|F(u) - u| is
    exactly the update the next plain sweep would take); ``iterations``
    counts every application of the map.

    When a finite ``alpha`` is given (as it must be for critical
    models), the pool is first recentred onto the critical manifold by
    the deformation a -> c a^p with c, p solved so the empirical Mellin
    mass is exactly 1 and its drift exactly 0 at alpha; without this, a
    pool whose sampled mass lands above 1 defines a supercritical
    empirical model whose minimal fixed point is phi = 0 and the
    iteration faithfully collapses to it.  ``alpha`` is also carried on
    the result for the harmonic analysis of derive_poisson.
    """
    t, h = _grid(t_min, t_max, points_per_decade, base)
    counts, b, a_flat, offsets = sample_branches(spec, seed, pool_size)
    rc, rp = 1.0, 1.0
    if math.isfinite(alpha):
        a_flat, rc, rp = _recenter_pool(a_flat, alpha, pool_size)
    offs = np.concatenate((offsets, [counts.sum()])).astype(np.int64)
    s = np.log(a_flat) / h
    k0s = np.floor(s).astype(np.int64)
    fs = (s - k0s).astype(np.float64)
    const_b = int(spec.inhom.family == "Constant")
    if const_b:
        em1_const = np.expm1(-t * spec.inhom.b)
        b_arr = np.empty(0)
    else:
        em1_const = np.empty(0)
        b_arr = np.ascontiguousarray(b)
    n = t.shape[0]
    u = np.zeros(n)
    history: list[float] = []
    out_def = np.empty(n)
    comp = np.empty(n)
    out_sq = np.empty(0)
    max_nm = int(counts.max()) if counts.shape[0] else 0

    def apply_map(cur: np.ndarray) -> np.ndarray:
        out_def[:] = 0.0
        comp[:] = 0.0
        _kernels.phi_pass(cur, _log_ratios(cur), _left_ratio(cur), k0s, fs,
                          offs, em1_const, b_arr, t, const_b, out_def, comp,
                          out_sq, False)
        return out_def / pool_size

    def newton_matrix(cur: np.ndarray) -> np.ndarray:
        jac = np.zeros((n, n))
        _kernels.jacobian_pass(cur, _log_ratios(cur), _left_ratio(cur),
                               k0s, fs, offs, em1_const, b_arr, t, const_b,
                               max_nm, jac)
        jac /= pool_size
        return jac

    it_count = 0
    converged = False
    # Phase 1: plain sweeps.  Iterates rise pointwise from u = 0 toward
    # the minimal fixed point (checked at the 10-epsilon level, which
    # the compensated pool sums make meaningful), which finishes on its
    # own whenever the contraction has a healthy gap.
    while it_count < max_iter:
        it_count += 1
        u_next = apply_map(u)
        if np.any(u_next < u - _MONOTONE_EPS):
            worst = float(np.max(u - u_next))
            raise MonotonicityViolated(
                f"iterate decreased by {worst:.3g} "
                f"at iteration {it_count}")
        _check_shape(u_next, t, it_count)
        sup = float(np.max(np.abs(u_next - u)))
        history.append(sup)
        u = u_next
        if sup <= tol:
            converged = True
            break
        if it_count >= _NEWTON_MIN_PLAIN and sup <= _NEWTON_GATE:
            break

    # Phase 2: pseudo-transient continuation on F(u) - u = 0, with the
    # exact Jacobian of the interpolated pool map.  Solves
    # (I - J + lambda I) delta = F(u) - u, shrinking lambda by the
    # squared residual ratio on accepted steps and growing it on
    # rejections.  At exact criticality the minimal fixed point is
    # nearly semi-stable: the collapsed state u = 1 is also a fixed
    # point, and the defect stays small along the connecting slow
    # manifold, so a residual decrease alone cannot certify that a step
    # stayed in the wanted basin; the left-edge guard catches the one
    # spurious attractor (u[0] near 1 instead of ~ sqrt(t_min)) and
    # aborts honestly rather than report it as converged.
    collapse_guard = math.isfinite(alpha)
    if not converged and it_count < max_iter:
        resid = apply_map(u) - u
        it_count += 1
        res = float(np.max(np.abs(resid)))
        history.append(res)
        jac = None
        lu = None
        lam = 4.0
        n_assemble = 0
        res_at_assembly = math.inf
        consec_fails = 0
        while res > 0.5 * tol and it_count < max_iter:
            if collapse_guard and float(u[0]) > 0.9:
                break
            if jac is None or res < res_at_assembly / 30.0:
                if n_assemble >= 15:
                    break
                jac = newton_matrix(u)
                n_assemble += 1
                res_at_assembly = res
                lu = None
            if lu is None:
                lu = lu_factor(np.eye(n) - jac + lam * np.eye(n))
            delta = lu_solve(lu, resid)
            if not np.all(np.isfinite(delta)):
                break
            if float(np.max(np.abs(delta))) < 0.1 * tol:
                break
            # Backtracking on the step fraction: near criticality the
            # full step's quadratic remainder c |delta|^2 can exceed
            # the residual it corrects (|delta| ~ res/gap with a small
            # gap), and fractional steps are then the only way forward.
            # A step is accepted when it realizes at least 20% of the
            # progress its own linear model predicts; the model
            # residual is free, since the solve gives
            # (I - J) delta = resid - lam delta exactly, so the
            # prediction is |(1 - theta) resid + theta lam delta|.
            ok = False
            if float(np.max(np.abs(delta))) <= 0.1:
                for theta in (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125):
                    u_try = u + theta * delta
                    if float(u_try.min()) < -_MONOTONE_SLACK or \
                            float(u_try.max()) > 1.0 + _MONOTONE_SLACK:
                        continue
                    r_try = apply_map(u_try) - u_try
                    it_count += 1
                    res_try = float(np.max(np.abs(r_try)))
                    pred = float(np.max(np.abs(
                        (1.0 - theta) * resid + (theta * lam) * delta)))
                    if res_try < res and \
                            res_try <= 0.8 * res + 0.2 * pred:
                        ok = True
                        break
                    if it_count >= max_iter:
                        break
            if not ok:
                consec_fails += 1
                if consec_fails > 24:
                    break
                lam = min(lam * 8.0, 1e5)
                lu = None
                if consec_fails % 3 == 0:
                    jac = None
                continue
            consec_fails = 0
            ratio = res_try / res
            lam = lam * min(0.5, ratio * ratio / (theta * theta))
            lu = None
            u = u_try
            resid = r_try
            res = res_try
            history.append(res)
        if res <= 0.5 * tol:
            if collapse_guard and float(u[0]) > 0.9:
                raise NotConverged(
                    "iteration escaped to the trivial fixed point "
                    "phi = 0; the recentred pool's minimal solution "
                    "was not reached")
            # Commit the already-computed map image: the final state is
            # then a plain sweep whose sup update res is below tol, the
            # stopping criterion of the unaccelerated iteration.
            u = u + resid
            history.append(res)
            _check_shape(u, t, it_count)
            converged = True

    # Phase 3: fallback plain sweeps.  After Newton the iterate can sit
    # on either side of the fixed point, so only the shape invariants
    # (not the one-sided in-k monotonicity) apply.  The left-edge guard
    # aborts an escape toward u = 1 instead of letting it masquerade as
    # convergence.
    while not converged and it_count < max_iter:
        if collapse_guard and float(u[0]) > 0.9:
            raise NotConverged(
                "iteration escaped to the trivial fixed point phi = 0; "
                "the recentred pool's minimal solution was not reached")
        it_count += 1
        u_next = apply_map(u)
        _check_shape(u_next, t, it_count)
        sup = float(np.max(np.abs(u_next - u)))
        history.append(sup)
        u = u_next
        if sup <= tol:
            converged = True
    if not converged:
        raise NotConverged(
            f"sup update {history[-1]:.3g} > tol {tol:g} "
            f"after {max_iter} iterations")
    return LaplaceGrid(t=t, u=u, h=h, alpha=float(alpha),
                       iterations=it_count, residual=history[-1],
                       branch_pool_size=pool_size, seed=seed,
                       recenter_c=rc, recenter_p=rp,
                       update_history=np.asarray(history),
                       pool_counts=counts, pool_b=b, pool_a=a_flat,
                       pool_offsets=offsets)


@dataclass(frozen=True)
class PoissonData:
    """Harmonic (Poisson equation) data derived from a converged grid.

    On the x = -log t axis (ascending): D(x) = e^{alpha x} u(e^{-x}),
    G(x) the one-step generator applied to D under the branching law,
    and EDY(x) the tilted-step expectation E[D(x+Y)] computed exactly
    over the pool's atoms, so residual = |EDY - D - G| measures
    convergence and interpolation only, with no fresh MC noise.

    The mass identity int G dx = 0 holds on the whole line, but in the
    critical case D approaches its plateau only like 1/x, so a finite
    window retains a boundary flux: int_window (E[D(x+Y)] - D) dx =
    (sigma^2/2) (D'(x_max) - D'(x_min)) + higher order.  ``int_G`` is
    therefore the flux-completed estimator of the full-line integral
    (trapezoid of EDY - D minus the fitted edge fluxes), while
    ``int_G_window`` is the raw trapezoid of the G array.  ``int_xG``
    stays a window integral: its tail completion would need the unknown
    limit constant itself, so the constant C_D = -2 int x G / sigma^2
    is a windowed reading that overshoots the x -> infinity limit by
    O(1/x_max) in the critical case (it matches the direct D plateau at
    the same window to within that accuracy).
    """

    alpha: float
    sigma2: float
    x: np.ndarray
    D: np.ndarray
    G: np.ndarray
    EDY: np.ndarray
    residual: np.ndarray
    int_G: float
    int_G_window: float
    flux_left: float
    flux_right: float
    int_xG: float
    C_D: float
    C_tail: float
    plateau_mean: float
    plateau_spread: float


def derive_poisson(grid: LaplaceGrid, spec: ModelSpec,
                   pool_seed: int | None = None,
                   pool_size: int | None = None,
                   sigma2: float | None = None,
                   edge_tol: float = 1e-3) -> PoissonData:
    """Evaluate D, G, and the tail constant from a converged transform.

    The tilting exponent is read from ``grid.alpha``; the walk variance
    comes from the tilted step law (exact for lognormal and finite
    weights) unless ``sigma2`` overrides it.  By default the grid's own
    pool evaluates G (common random numbers with the fixed point, making
    the Poisson residual deterministic); pass ``pool_seed`` to draw a
    fresh pool of ``pool_size`` samples and measure pool-to-pool spread
    instead.

    Raises NotNormalized when the tilted walk has drift (the harmonic
    analysis requires the centered, critical case), and GridTooNarrow
    when |G| at either edge exceeds ``edge_tol`` times max|G|: then the
    integrals int G dx and int x G dx are missing mass and the constant
    cannot be trusted.
    """
    alpha = grid.alpha
    if not math.isfinite(alpha):
        raise ValueError("grid carries no alpha; rebuild with iterate_phi("
                         "..., alpha=...) before the harmonic analysis")
    law = tilted_law(spec, alpha)
    if abs(law.mean) > 0.02 * max(law.sd, 1e-300):
        raise NotNormalized(
            f"tilted step law has drift {law.mean:.3g} (sd {law.sd:.3g}); "
            "the harmonic analysis needs the centered critical case")
    if sigma2 is None:
        sigma2 = law.var
    if not (sigma2 > 0.0):
        raise ValueError("sigma2 must be positive")

    t = grid.t
    if pool_seed is None:
        counts, b, a_flat, offsets = (grid.pool_counts, grid.pool_b,
                                      grid.pool_a, grid.pool_offsets)
        m = grid.branch_pool_size
    else:
        m = pool_size or grid.branch_pool_size
        counts, b, a_flat, offsets = sample_branches(spec, pool_seed, m)
        a_flat, _, _ = _recenter_pool(a_flat, alpha, m)
    offs = np.concatenate((offsets, [counts.sum()])).astype(np.int64)
    s = np.log(a_flat) / grid.h
    k0s = np.floor(s).astype(np.int64)
    fs = (s - k0s).astype(np.float64)
    const_b = int(spec.inhom.family == "Constant")
    if const_b:
        em1_const = np.expm1(-t * spec.inhom.b)
        b_arr = np.empty(0)
    else:
        em1_const = np.empty(0)
        b_arr = np.ascontiguousarray(b)
    out_def = np.zeros(t.shape[0])
    comp = np.zeros(t.shape[0])
    out_sq = np.zeros(t.shape[0])
    _kernels.phi_pass(grid.u, _log_ratios(grid.u), _left_ratio(grid.u),
                      k0s, fs, offs, em1_const, b_arr, t, const_b,
                      out_def, comp, out_sq, True)
    mean_def = out_def / m
    mean_sq = out_sq / m

    # map to the ascending x = -log t axis
    rev = slice(None, None, -1)
    x = (-np.log(t))[rev]
    tpow = t**(-alpha)
    D = (tpow * grid.u)[rev]
    G = (tpow * (mean_sq - mean_def))[rev]
    EDY = (tpow * mean_sq)[rev]
    residual = np.abs(EDY - D - G)

    # shape invariants of D (equivalent to the grid's, on the x axis)
    de_down = D * np.exp(-alpha * x)       # = u(e^{-x}), nonincreasing
    if float(np.diff(de_down).max()) > _MONOTONE_SLACK:
        raise MonotonicityViolated("D e^{-alpha x} increases in x")
    de_up = D * np.exp((1.0 - alpha) * x)  # = u(t)/t reversed, nondecreasing
    bad = de_up[1:] < de_up[:-1] * (1.0 - _SHAPE_RTOL) - 1e-300
    if bool(bad.any()):
        raise MonotonicityViolated("D e^{(1-alpha) x} decreases in x")

    g_edge = max(abs(G[0]), abs(G[-1]))
    g_max = float(np.max(np.abs(G)))
    if g_max == 0.0 or g_edge > edge_tol * g_max:
        raise GridTooNarrow(
            f"|G| at the grid edges is {g_edge:.3g} vs max {g_max:.3g}; "
            "widen [t_min, t_max] until G decays at both ends")
    int_G_window = float(np.trapezoid(G, x))
    int_xG = float(np.trapezoid(x * G, x))
    C_D = -2.0 * int_xG / sigma2
    C_tail = C_D / math.gamma(1.0 - alpha)

    # full-line int G estimate: trapezoid of EDY - D (the fixed point
    # makes the map image equal D, so this is the same estimand with
    # the solver defect removed) minus the second-moment edge fluxes
    # from linear fits of D over the first and last decade
    decade = math.log(10.0)
    sel_r = x >= x[-1] - decade
    sel_l = x <= x[0] + decade
    d1_right = float(np.polyfit(x[sel_r], D[sel_r], 1)[0])
    d1_left = float(np.polyfit(x[sel_l], D[sel_l], 1)[0])
    flux_right = 0.5 * sigma2 * d1_right
    flux_left = 0.5 * sigma2 * d1_left
    int_G = float(np.trapezoid(EDY - D, x)) - flux_right + flux_left

    # plateau of D over the last decade of x
    sel = x >= x[-1] - math.log(10.0)
    pl = D[sel]
    plateau_mean = float(pl.mean())
    spread = float((pl.max() - pl.min()) / abs(pl.mean())) \
        if pl.mean() != 0.0 else math.inf
    return PoissonData(alpha=alpha, sigma2=sigma2, x=x, D=D, G=G, EDY=EDY,
                       residual=residual, int_G=int_G,
                       int_G_window=int_G_window, flux_left=flux_left,
                       flux_right=flux_right, int_xG=int_xG,
                       C_D=C_D, C_tail=C_tail, plateau_mean=plateau_mean,
                       plateau_spread=spread)


@dataclass(frozen=True)
class TailConstant:
    """Tail constant with its plateau diagnostic.

    ``C_tail`` multiplies t^{-alpha} in the survival asymptotics;
    ``C_D`` is the same constant before division by Gamma(1-alpha).
    ``route_gap`` compares the integral route C_D against the direct
    plateau reading of D at large x (two computations of one limit).
    """

    C_tail: float
    C_D: float
    plateau_mean: float
    plateau_spread: float
    route_gap: float


def tail_constant_from_laplace(pd: PoissonData,
                               plateau_tol: float = 0.05) -> TailConstant:
    """The tail constant C with t^alpha P[R > t] -> C, from the transform.

    Uses the integral route C_D = -2 int x G dx / sigma^2 divided by
    Gamma(1 - alpha).  The plateau of D over the last decade must be
    flat to within ``plateau_tol`` (relative spread); a sloped plateau
    means the transform has not reached its asymptotic regime on this
    grid and raises NoPlateau.
    """
    if not math.isfinite(pd.plateau_spread) or \
            pd.plateau_spread > plateau_tol:
        raise NoPlateau(
            f"D plateau spread {pd.plateau_spread:.3g} exceeds "
            f"{plateau_tol:g}; widen the grid or tighten convergence")
    gap = abs(pd.plateau_mean - pd.C_D) / abs(pd.C_D) \
        if pd.C_D != 0.0 else math.inf
    return TailConstant(C_tail=pd.C_tail, C_D=pd.C_D,
                        plateau_mean=pd.plateau_mean,
                        plateau_spread=pd.plateau_spread, route_gap=gap)


def regular_variation_ratios(grid: LaplaceGrid,
                             s_values=(2.0, 5.0, 10.0)) -> dict:
    """Ratios (1-phi(t s))/(1-phi(t)) over the grid's lowest decade.

    As t -> 0 the ratio tends to s^alpha (regular variation of the
    deficit); callers compare against that target.  Returns a dict
    mapping each s to the ratio array over the first-decade knots.
    """
    t0 = grid.t[0]
    sel = grid.t <= t0 * 10.0 * (1.0 + 1e-12)
    t_base = grid.t[sel]
    u_base = grid.u[sel]
    out = {}
    for s in s_values:
        if not s > 0.0:
            raise ValueError("s values must be positive")
        num = np.asarray(grid.evaluate(t_base * s), dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[float(s)] = num / u_base
    return out
