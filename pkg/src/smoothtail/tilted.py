"""The tilted step law and its associated random walk.

Size-biasing the branching weights at exponent ``alpha`` produces the
step law Y with E[f(Y)] = E[sum_i f(-log A_i) A_i^alpha] (unit total
mass exactly when m(alpha) = 1).  The induced walk S_n drives all
one-dimensional reductions: its variance enters the tail constant, its
first-passage functionals give the Wiener-Hopf cross-check, and the
discounted pre-passage sums define the boundary function W.

Lognormal weights admit an exact normal representation of Y; all other
families go through an atom pool (empirical importance weights), which
the sampling kernels consume directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng
from .errors import (CensoringExcess, ComplexityExceeded, NotNormalized)
from .models import ModelSpec, analytic_mellin, sample_branches

__all__ = [
    "TiltedLaw",
    "WalkPath",
    "WalkStats",
    "tilted_law",
    "tilted_law_unchecked",
    "sample_Y",
    "sample_Y_batch",
    "walk_path",
    "estimate_sigma2",
    "W_function",
    "many_to_one_check",
]

_EMPTY = np.empty(0, dtype=np.float64)


@dataclass(frozen=True)
class TiltedLaw:
    """Step law of the tilted walk.

    mode "normal": Y ~ Normal(mean, sd^2), exact for lognormal weights.
    mode "atoms":  Y takes values ``atoms`` with probabilities ``probs``
    (self-normalized importance weights; exact for finite-support
    weights, empirical for pool-based constructions).

    ``mass`` records the unnormalized tilted mass, which estimates
    m(alpha) and must be 1 at criticality; ``mass_stderr`` is zero for
    exact constructions.  ``base`` and ``alpha`` remember the model and
    tilting exponent the law was built from.
    """

    mode: str
    mean: float
    sd: float
    mass: float
    mass_stderr: float = 0.0
    atoms: np.ndarray = field(default_factory=lambda: _EMPTY)
    probs: np.ndarray = field(default_factory=lambda: _EMPTY)
    alpha: float = float("nan")
    base: ModelSpec | None = None

    @property
    def var(self) -> float:
        return self.sd * self.sd

    def kernel_args(self) -> tuple:
        """(ymode, ymean, ysd, yatoms, ycum) for the walk kernels."""
        if self.mode == "normal":
            return 0, self.mean, self.sd, _EMPTY, _EMPTY
        return 1, 0.0, 0.0, self.atoms, np.cumsum(self.probs)

    def exp_moment(self, delta: float) -> float:
        """E[e^{delta Y}], which equals m(alpha - delta) at criticality."""
        if self.mode == "normal":
            return math.exp(delta * self.mean + 0.5 * (delta * self.sd) ** 2)
        return float(np.sum(self.probs * np.exp(delta * self.atoms)))


def tilted_law(spec: ModelSpec, alpha: float, pool_size: int = 100_000,
               seed: int = 0, normalized_tol: float = 1e-9) -> TiltedLaw:
    """Construct the tilted step law of ``spec`` at exponent ``alpha``.

    Raises NotNormalized when the tilted mass is not 1 within
    ``normalized_tol`` (exact constructions) or 3 standard errors plus
    tolerance (pool constructions): the walk reductions below assume a
    probability law, which is the m(alpha) = 1 case.
    """
    en = spec.offspring.mean()
    w = spec.weight
    if w.family == "Lognormal":
        mass = en * math.exp(alpha * w.mu + 0.5 * (alpha * w.sigma) ** 2)
        _require_unit_mass(mass, 0.0, normalized_tol)
        return TiltedLaw(mode="normal", mean=-(w.mu + alpha * w.sigma**2),
                         sd=abs(w.sigma), mass=mass, alpha=alpha, base=spec)
    if w.family in ("FiniteSupport", "Deterministic"):
        if w.family == "Deterministic":
            pts = np.array([w.value])
            q = np.array([1.0])
        else:
            pts = np.asarray(w.points, dtype=np.float64)
            q = np.asarray(w.probs, dtype=np.float64)
        wts = en * q * pts**alpha
        mass = float(wts.sum())
        _require_unit_mass(mass, 0.0, normalized_tol)
        probs = wts / mass
        atoms = -np.log(pts)
        mean = float(np.sum(probs * atoms))
        var = float(np.sum(probs * atoms**2)) - mean**2
        return TiltedLaw(mode="atoms", mean=mean, sd=math.sqrt(max(var, 0.0)),
                         mass=mass, atoms=atoms, probs=probs,
                         alpha=alpha, base=spec)
    # pool construction (Uniform01Power and anything without closed form)
    counts, _, a_flat, _ = sample_branches(spec, seed, pool_size)
    if a_flat.size == 0:
        raise NotNormalized("tilted mass is zero: model has no children")
    wts = a_flat**alpha
    per_sample = np.zeros(pool_size)
    owner = np.repeat(np.arange(pool_size), counts)
    np.add.at(per_sample, owner, wts)
    mass = float(per_sample.mean())
    mass_se = float(per_sample.std(ddof=1) / np.sqrt(pool_size))
    _require_unit_mass(mass, mass_se, normalized_tol)
    probs = wts / wts.sum()
    atoms = -np.log(a_flat)
    mean = float(np.sum(probs * atoms))
    var = float(np.sum(probs * atoms**2)) - mean**2
    return TiltedLaw(mode="atoms", mean=mean, sd=math.sqrt(max(var, 0.0)),
                     mass=mass, mass_stderr=mass_se, atoms=atoms, probs=probs,
                     alpha=alpha, base=spec)


def _require_unit_mass(mass: float, stderr: float, tol: float) -> None:
    if not math.isfinite(mass) or abs(mass - 1.0) > tol + 3.0 * stderr:
        raise NotNormalized(
            f"tilted mass m(alpha) = {mass:.6g} (stderr {stderr:.2g}) "
            "is not 1: tilt the model at its critical exponent first")


def sample_Y_batch(law: TiltedLaw, n: int, seed: int = 0,
                   stream: int = 0) -> np.ndarray:
    """n i.i.d. draws of Y on one counter stream.

    Draw i consumes the same counters as step i of the walk kernels
    (two per normal draw, one per atom pick), so walk increments can
    be reproduced draw by draw.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    key = rng.stream_key(seed, stream)
    ymode, ymean, ysd, yatoms, ycum = law.kernel_args()
    if ymode == 0:
        return ymean + ysd * rng.normals(key, 0, n)
    u = rng.uniforms(key, 0, n)
    idx = np.minimum(np.searchsorted(ycum, u, side="right"),
                     len(yatoms) - 1)
    return yatoms[idx]


def sample_Y(law: TiltedLaw, seed: int = 0, stream: int = 0) -> float:
    """One draw of Y (the first element of the stream's batch)."""
    return float(sample_Y_batch(law, 1, seed, stream)[0])


@dataclass(frozen=True)
class WalkPath:
    """One realized walk path with first-passage annotations.

    ``s`` holds S_0 = 0 through S_horizon.  ``L`` is the first index
    with S_i < 0, or None when the passage has not happened by the
    horizon (then ``l_censored`` is set).  ``ladder_epochs`` lists the
    weak ascending ladder epochs T_0 = 0 < T_1 < ... that fall within
    the horizon (T_n is the first i > T_{n-1} with S_i >= S_{T_{n-1}});
    epochs beyond the horizon are unobserved by construction.
    """

    s: np.ndarray
    L: int | None
    l_censored: bool
    ladder_epochs: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.s) - 1


def walk_path(law: TiltedLaw, horizon: int, seed: int = 0,
              stream: int = 0) -> WalkPath:
    """Simulate S_0..S_horizon and annotate its first passages exactly.

    A weak ascending ladder epoch is exactly an index whose value ties
    or beats the running maximum of everything before it, which is how
    the annotation is computed.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    steps = sample_Y_batch(law, horizon, seed, stream)
    s = np.concatenate(([0.0], np.cumsum(steps)))
    below = np.nonzero(s < 0.0)[0]
    first_l = int(below[0]) if below.size else None
    run_max = np.maximum.accumulate(s)
    asc = np.nonzero(s[1:] >= run_max[:-1])[0] + 1
    ladder = np.concatenate(([0], asc)).astype(np.int64)
    return WalkPath(s=s, L=first_l, l_censored=first_l is None,
                    ladder_epochs=ladder)


@dataclass(frozen=True)
class WalkStats:
    """Two independent routes to the walk variance sigma^2.

    Direct: Var(Y) from the step law itself.  Ladder: the factorization
    sigma^2 = 2 E[-S_L] E[S_T1] over first strict-descending and weak
    ascending passages, valid for zero-drift walks.
    """

    mean_Y: float
    sigma2_direct: float
    e_neg_SL: float
    se_neg_SL: float
    e_ST1: float
    se_ST1: float
    sigma2_ladder: float
    se_ladder: float
    n_paths: int
    cap: int
    censored_L: int
    censored_T: int


def estimate_sigma2(law: TiltedLaw, n_paths: int = 100_000,
                    cap: int = 1 << 20, seed: int = 0,
                    start_stream: int = 0,
                    max_censored_frac: float = 0.01) -> WalkStats:
    """Estimate sigma^2 by the ladder route and report both routes.

    Paths are censored at ``cap`` steps; zero-drift walks revisit both
    half-lines slowly (first-passage times have infinite mean), so a
    small censored fraction is expected and tolerated up to
    ``max_censored_frac``, beyond which CensoringExcess is raised.
    """
    ymode, ymean, ysd, yatoms, ycum = law.kernel_args()
    (sum_l, sq_l, n_l, sum_t, sq_t, n_t, cens_l, cens_t) = \
        _kernels.ladder_batch(seed, start_stream, n_paths, cap,
                              ymode, ymean, ysd, yatoms, ycum)
    worst = max(cens_l, cens_t) / n_paths
    if worst > max_censored_frac:
        raise CensoringExcess(
            f"{worst:.2%} of paths hit the {cap}-step cap "
            f"(limit {max_censored_frac:.2%}); raise cap or check drift")
    e_l = sum_l / n_l
    v_l = max(sq_l / n_l - e_l**2, 0.0)
    se_l = math.sqrt(v_l / n_l)
    e_t = sum_t / n_t
    v_t = max(sq_t / n_t - e_t**2, 0.0)
    se_t = math.sqrt(v_t / n_t)
    sigma2_ladder = 2.0 * e_l * e_t
    se_ladder = 2.0 * math.sqrt((e_t * se_l) ** 2 + (e_l * se_t) ** 2)
    return WalkStats(mean_Y=law.mean, sigma2_direct=law.var,
                     e_neg_SL=e_l, se_neg_SL=se_l, e_ST1=e_t, se_ST1=se_t,
                     sigma2_ladder=sigma2_ladder, se_ladder=se_ladder,
                     n_paths=n_paths, cap=cap,
                     censored_L=cens_l, censored_T=cens_t)


def W_function(law: TiltedLaw, x, delta: float, n_paths: int = 20_000,
               cap: int = 1 << 20, window: int = 1000,
               window_tol: float = 1e-12, seed: int = 0,
               start_stream: int = 0):
    """Monte Carlo of W(x) = E[sum_{i>=0} e^{-delta(x+S_i)}; path >= -x].

    The sum runs while the walk stays at or above -x and is cut when a
    trailing window of ``window`` terms adds less than ``window_tol``
    (the designed convergence exit).  truncated_fraction counts only
    the paths that hit the step cap with the window still live, whose
    series were genuinely cut short.  W vanishes identically for x < 0
    (the empty-path convention: even the i = 0 term requires x >= 0).

    Returns (W, stderr, truncated_fraction) as arrays shaped like x.
    Path p of grid point k uses substream start_stream + k*n_paths + p.
    """
    if not (delta > 0.0):
        raise ValueError("delta must be positive")
    ymode, ymean, ysd, yatoms, ycum = law.kernel_args()
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out_w = np.zeros(xs.shape)
    out_se = np.zeros(xs.shape)
    out_tr = np.zeros(xs.shape)
    for k, xv in enumerate(xs):
        if xv < 0.0:
            continue
        tot, sq, ntr = _kernels.w_batch(
            seed, start_stream + k * n_paths, n_paths, cap, float(xv),
            delta, window, window_tol, ymode, ymean, ysd, yatoms, ycum)
        mean = tot / n_paths
        var = max(sq / n_paths - mean**2, 0.0)
        out_w[k] = mean
        out_se[k] = math.sqrt(var / n_paths)
        out_tr[k] = ntr / n_paths
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return float(out_w[0]), float(out_se[0]), float(out_tr[0])
    return out_w, out_se, out_tr


# ---------------------------------------------------------------------------
# exact change-of-measure identity on finite models


def many_to_one_check(spec: ModelSpec, alpha: float, n: int, f,
                      max_terms: float = 1e7):
    """Verify E[e^{a S_n} f(S_1..S_n)] = E[sum_{|v|=n} f(path_v)].

    The left side is the tilted-walk expectation (unnormalized: atom
    probabilities carry a factor mass^n when m(alpha) differs from 1);
    the right side is the branching expectation, which factorizes along
    atom paths with one mean-offspring factor per generation.  Both are
    computed exactly for models with finite weight support by
    enumerating all weight-atom paths of length n.  ``f`` maps a paths
    matrix (n_paths, n) of partial sums to a vector of values; at n = 0
    it receives a single empty path and both sides equal its value.
    Returns (lhs, rhs, rel_err).

    Raises ComplexityExceeded when the enumeration would exceed
    ``max_terms`` path terms, and ValueError for non-finite weights or
    unbounded offspring.
    """
    w = spec.weight
    if w.family == "Deterministic":
        pts = np.array([w.value])
        q = np.array([1.0])
    elif w.family == "FiniteSupport":
        pts = np.asarray(w.points, dtype=np.float64)
        q = np.asarray(w.probs, dtype=np.float64)
    else:
        raise ValueError("exact check needs finite weight support")
    off = spec.offspring
    if off.family == "Geometric":
        raise ValueError("exact check needs bounded offspring support")
    if n < 0:
        raise ValueError("n must be >= 0")
    k = pts.size
    if float(k) ** n > max_terms:
        raise ComplexityExceeded(
            f"{k}^{n} path terms exceed the {max_terms:g} budget")

    # mean offspring by literal summation over the support
    if off.family == "Fixed":
        en = float(off.n)
    else:
        en = float(sum(p * v for v, p in zip(off.values, off.probs)))

    # all weight-index paths, their increments, partial sums, and f values
    if n == 0:
        idx = np.zeros((1, 0), dtype=np.intp)
    else:
        idx = np.indices((k,) * n).reshape(n, -1).T  # (k^n, n)
    steps = -np.log(pts)[idx]
    paths = np.cumsum(steps, axis=1)
    fv = np.asarray(f(paths), dtype=np.float64)
    if fv.shape != (idx.shape[0],):
        raise ValueError("f must map (n_paths, n) to (n_paths,)")

    # tilted side: path law of S, reweighted by e^{alpha S_n}
    law = tilted_law_unchecked(spec, alpha)
    probs_tilt = np.prod(law.probs[idx], axis=1)
    s_n = paths[:, -1] if n > 0 else np.zeros(1)
    lhs = law.mass**n * float(np.sum(probs_tilt * np.exp(alpha * s_n) * fv))

    # branching side: per-level factor en, iid weight atoms
    probs_branch = np.prod(q[idx], axis=1)
    rhs = en**n * float(np.sum(probs_branch * fv))

    scale = max(abs(lhs), abs(rhs), 1e-300)
    return lhs, rhs, abs(lhs - rhs) / scale


def tilted_law_unchecked(spec: ModelSpec, alpha: float) -> TiltedLaw:
    """TiltedLaw for finite weights without the unit-mass requirement.

    The atom probabilities are self-normalized; ``mass`` records the
    actual m(alpha), letting exact identities carry the normalization
    explicitly.  Only finite-support and deterministic weights are
    supported.
    """
    w = spec.weight
    if w.family == "Deterministic":
        pts = np.array([w.value])
        q = np.array([1.0])
    elif w.family == "FiniteSupport":
        pts = np.asarray(w.points, dtype=np.float64)
        q = np.asarray(w.probs, dtype=np.float64)
    else:
        raise ValueError("exact construction needs finite weight support")
    en = spec.offspring.mean()
    wts = en * q * pts**alpha
    mass = float(wts.sum())
    probs = wts / mass
    atoms = -np.log(pts)
    mean = float(np.sum(probs * atoms))
    var = float(np.sum(probs * atoms**2)) - mean**2
    return TiltedLaw(mode="atoms", mean=mean, sd=math.sqrt(max(var, 0.0)),
                     mass=mass, atoms=atoms, probs=probs,
                     alpha=alpha, base=spec)
