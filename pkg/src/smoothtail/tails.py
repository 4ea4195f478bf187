"""Tail exponent and tail constant estimation from samples.

Three estimators act on a positive sample array: the Hill estimator
over a grid of order-statistic counts, a least-squares fit of the log
empirical survival function against {1, log t} with an optional
log log t regressor to discriminate pure power tails t^{-alpha} from
log-corrected tails t^{-alpha} log t, and a direct plug-in estimate of
the tail constant C = lim t^alpha P[X > t] averaged over a window.

Samples produced by the floored tree traversal lose tail mass to
pruning; pass the traversal's ``weight_floor`` to apply the depletion
correction (b + log t)/b documented in the tree module.  Synthetic
ground-truth samplers for exact Pareto and log-corrected Pareto laws
live here as well because the verification suite uses them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import lambertw

from . import rng
from .errors import DegenerateSample, WindowEmpty
from .tree import floor_correction

__all__ = [
    "TailReport",
    "hill_plot",
    "fit_tail",
    "estimate_C_plus",
    "tail_report",
    "pareto_samples",
    "log_pareto_samples",
]

_GRID_PER_DECADE = 16


@dataclass(frozen=True)
class TailReport:
    """Bundle of tail estimates for one sample set.

    hill: list of (k, alpha_hat) over the requested k grid.
    slope_fit: (alpha_hat, stderr, (t_lo, t_hi)) from the log-survival
        regression.
    log_exponent: (theta_hat, stderr) for the log log t coefficient, or
        None when the fit was run without the log regressor.
    C_plus_hat: (value, stderr), or None when no alpha was supplied.
    design_cond: condition number of the regression design matrix; the
        log log t column is nearly collinear with {1, log t} on narrow
        windows, so a large value warns that theta_hat is ill-posed.
    censored_fraction: fraction of samples flagged censored by the
        caller; above 1% the report is marked unreliable because
        pruning removes exactly the large values tails depend on.
    """

    hill: list
    slope_fit: tuple
    log_exponent: tuple | None
    C_plus_hat: tuple | None
    design_cond: float
    n_samples: int
    censored_fraction: float

    @property
    def unreliable(self) -> bool:
        return self.censored_fraction > 0.01


def _positive_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("samples must be nonempty")
    if not bool(np.all(np.isfinite(x))):
        raise ValueError("samples must be finite")
    x = x[x > 0.0]
    if x.size == 0:
        raise ValueError("samples must contain positive values")
    return x


def hill_plot(samples, k_grid) -> list:
    """Hill estimates [(k, alpha_hat)] over descending order statistics.

    alpha_hat(k) = k / sum_{i<=k} log(X_(i) / X_(k+1)) with X_(1) the
    largest sample.  Raises DegenerateSample when ties make the
    denominator vanish for some requested k.
    """
    x = _positive_samples(samples)
    if x.size < 1000:
        raise ValueError("hill_plot needs at least 1000 positive samples")
    ks = np.asarray(list(k_grid), dtype=np.int64)
    if ks.size == 0 or np.any(ks < 1) or np.any(ks >= x.size):
        raise ValueError("each k must satisfy 1 <= k < n_samples")
    k_max = int(ks.max())
    # only the top k_max + 1 order statistics matter
    top = np.sort(np.partition(x, x.size - k_max - 1)[-(k_max + 1):])[::-1]
    logs = np.log(top)
    csum = np.cumsum(logs[:-1])
    out = []
    for k in ks:
        denom = csum[k - 1] - k * logs[k]
        if denom <= 0.0:
            raise DegenerateSample(
                f"top-{int(k)} order statistics are tied; the Hill "
                "denominator vanishes")
        out.append((int(k), float(k / denom)))
    return out


def _window_grid(window) -> np.ndarray:
    t_lo, t_hi = float(window[0]), float(window[1])
    if not (0.0 < t_lo < t_hi):
        raise ValueError("window must satisfy 0 < t_lo < t_hi")
    n_pts = max(int(round(math.log10(t_hi / t_lo) * _GRID_PER_DECADE)), 2) + 1
    return np.geomspace(t_lo, t_hi, n_pts)


def _survival_on_grid(x: np.ndarray, grid: np.ndarray,
                      weight_floor: float | None):
    xs = np.sort(x)
    counts = x.size - np.searchsorted(xs, grid, side="right")
    p = counts / x.size
    se = np.sqrt(p * (1.0 - p) / x.size)
    if weight_floor is not None:
        factor = floor_correction(grid, weight_floor)
        p = p * factor
        se = se * factor
    return p, se


def fit_tail(samples, window, with_log: bool = False,
             censored=None, weight_floor: float | None = None) -> TailReport:
    """Regression tail fit of the empirical survival on a window.

    Builds the empirical survival function on a geometric grid inside
    ``window`` and least-squares fits log S_hat(t) against {1, log t},
    adding a log log t column when ``with_log`` is true.  Returns a
    TailReport with slope_fit = (alpha_hat, stderr, window) where
    alpha_hat is minus the log t coefficient, and log_exponent =
    (theta_hat, stderr) for the log log t coefficient.  ``censored`` is
    an optional boolean mask of samples to exclude (their fraction is
    reported).  Raises WindowEmpty when fewer than 100 samples exceed
    t_lo or when some grid point has no exceedances.

    The log log t regressor is nearly collinear with the others unless
    the window spans at least two decades; the design condition number
    is reported and a narrower window raises ValueError when with_log
    is set.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    cens_frac = 0.0
    if censored is not None:
        mask = np.asarray(censored, dtype=bool).ravel()
        if mask.shape != x.shape:
            raise ValueError("censored mask must match samples in length")
        cens_frac = float(mask.mean())
        x = x[~mask]
    x = _positive_samples(x)
    grid = _window_grid(window)
    if with_log and math.log10(grid[-1] / grid[0]) < 2.0 - 1e-9:
        raise ValueError("with_log needs a window spanning >= 2 decades")
    if int(np.count_nonzero(x > grid[0])) < 100:
        raise WindowEmpty(
            f"fewer than 100 samples above t_lo = {grid[0]:g}")
    p, se = _survival_on_grid(x, grid, weight_floor)
    if np.any(p <= 0.0):
        raise WindowEmpty("empirical survival hits zero inside the window; "
                          "shrink t_hi or add samples")
    logt = np.log(grid)
    cols = [np.ones_like(logt), logt]
    if with_log:
        cols.append(np.log(logt))
    A = np.column_stack(cols)
    y = np.log(p)
    coef, res_ss, _, _ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(y.size - A.shape[1], 1)
    s2 = float(res_ss[0]) / dof if res_ss.size else \
        float(np.sum((y - A @ coef) ** 2)) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    stderrs = np.sqrt(np.diag(cov))
    cond = float(np.linalg.cond(A))
    alpha_hat = -float(coef[1])
    slope_fit = (alpha_hat, float(stderrs[1]), (float(grid[0]),
                                                float(grid[-1])))
    log_exp = (float(coef[2]), float(stderrs[2])) if with_log else None
    return TailReport(hill=[], slope_fit=slope_fit, log_exponent=log_exp,
                      C_plus_hat=None, design_cond=cond,
                      n_samples=int(x.size), censored_fraction=cens_frac)


def estimate_C_plus(samples, alpha: float, window,
                    weight_floor: float | None = None) -> tuple:
    """(value, stderr) for C = lim t^alpha P[X > t] over a window.

    Averages t^alpha S_hat(t) over the geometric window grid.  The
    grid points share samples, so the stderr is the conservative
    maximum of the per-point binomial errors rather than a quadrature
    combination.
    """
    if not (alpha > 0.0):
        raise ValueError("alpha must be positive")
    x = _positive_samples(samples)
    grid = _window_grid(window)
    if not bool(np.any(x > grid[0])):
        raise WindowEmpty(f"no samples above t_lo = {grid[0]:g}")
    p, se = _survival_on_grid(x, grid, weight_floor)
    tpow = grid**alpha
    value = float(np.mean(tpow * p))
    stderr = float(np.max(tpow * se))
    return value, stderr


def tail_report(samples, alpha: float | None = None,
                window=(1e2, 1e4), with_log: bool = True,
                k_grid=None, censored=None,
                weight_floor: float | None = None) -> TailReport:
    """Full TailReport: regression fit plus Hill plot plus C estimate."""
    rep = fit_tail(samples, window, with_log=with_log, censored=censored,
                   weight_floor=weight_floor)
    x = np.asarray(samples, dtype=np.float64).ravel()
    if censored is not None:
        x = x[~np.asarray(censored, dtype=bool).ravel()]
    if k_grid is None:
        n = _positive_samples(x).size
        k_grid = [k for k in (100, 316, 1000, 3162, 10000, 31623, 100000)
                  if k < n // 10]
    hill = hill_plot(x, k_grid) if len(list(k_grid)) else []
    cp = None
    if alpha is not None:
        cp = estimate_C_plus(x, alpha, window, weight_floor=weight_floor)
    return TailReport(hill=hill, slope_fit=rep.slope_fit,
                      log_exponent=rep.log_exponent, C_plus_hat=cp,
                      design_cond=rep.design_cond, n_samples=rep.n_samples,
                      censored_fraction=rep.censored_fraction)


def pareto_samples(alpha: float, n: int, seed: int = 0,
                   scale: float = 1.0) -> np.ndarray:
    """Exact Pareto samples with survival S(t) = (t/scale)^{-alpha}, t >= scale."""
    if not (alpha > 0.0 and scale > 0.0):
        raise ValueError("alpha and scale must be positive")
    u = rng.CounterStream(seed, stream=0).uniforms(n)
    u = np.maximum(u, 1e-300)
    return scale * u ** (-1.0 / alpha)


def log_pareto_samples(alpha: float, n: int, seed: int = 0) -> np.ndarray:
    """Samples with survival S(t) = e * alpha * log(t) * t^{-alpha}.

    Supported on t >= e^{1/alpha}: with z = alpha log t the law has
    survival z e^{1-z}, the canonical log-corrected power tail with
    theta = 1.  The quantile function inverts z e^{-z} = u/e through
    the secondary real branch of the Lambert W function.
    """
    if not (alpha > 0.0):
        raise ValueError("alpha must be positive")
    u = rng.CounterStream(seed, stream=0).uniforms(n)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    # survival of z = alpha log t is  z e^{1-z} for z >= 1, so the
    # quantile at level u solves (-z) e^{-z} = -u/e on the lower branch
    z = -np.real(lambertw(-u / math.e, k=-1))
    return np.exp(z / alpha)
