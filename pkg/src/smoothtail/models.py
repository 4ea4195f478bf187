"""Model specifications for the branching fixed-point equation.

A model is the law of one branching step ``(N, B, A_1..A_N)``: an
offspring count, an inhomogeneous additive term, and one multiplicative
weight per child, with the weights i.i.d. given ``N`` and independent of
``B`` (coupling ``IIDGivenN``).  Everything downstream (tree simulation,
Mellin analysis, tilted walks, Laplace fixed points) consumes these
specs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import rng
from .errors import NoTwoRoots

_PROB_TOL = 1e-12


def _check_probs(probs) -> tuple:
    p = tuple(float(q) for q in probs)
    if not p:
        raise ValueError("empty probability vector")
    if min(p) < 0.0:
        raise ValueError("negative probability")
    if abs(sum(p) - 1.0) > _PROB_TOL:
        raise ValueError(f"probabilities sum to {sum(p)!r}, not 1")
    return p


@dataclass(frozen=True)
class OffspringLaw:
    """Distribution of the offspring count N (nonnegative integers)."""

    family: str
    n: int = 0
    values: tuple = ()
    probs: tuple = ()
    p: float = 0.0

    @staticmethod
    def fixed(n: int) -> "OffspringLaw":
        if n < 0 or int(n) != n:
            raise ValueError("Fixed offspring count must be a nonnegative integer")
        return OffspringLaw("Fixed", n=int(n))

    @staticmethod
    def finite(values, probs) -> "OffspringLaw":
        vals = tuple(int(v) for v in values)
        if any(v < 0 for v in vals):
            raise ValueError("offspring values must be nonnegative")
        if len(vals) != len(set(vals)):
            raise ValueError("duplicate offspring values")
        pr = _check_probs(probs)
        if len(pr) != len(vals):
            raise ValueError("values/probs length mismatch")
        return OffspringLaw("FiniteSupport", values=vals, probs=pr)

    @staticmethod
    def geometric(p: float) -> "OffspringLaw":
        if not 0.0 < p < 1.0:
            raise ValueError("geometric parameter must lie in (0,1)")
        return OffspringLaw("Geometric", p=float(p))

    def mean(self) -> float:
        if self.family == "Fixed":
            return float(self.n)
        if self.family == "FiniteSupport":
            return float(sum(v * q for v, q in zip(self.values, self.probs)))
        return (1.0 - self.p) / self.p

    def moment(self, power: float) -> float:
        """E[N^power] (absolutely convergent for every finite power)."""
        if self.family == "Fixed":
            return float(self.n) ** power if self.n > 0 else 0.0
        if self.family == "FiniteSupport":
            return float(
                sum((v**power if v > 0 else 0.0) * q for v, q in zip(self.values, self.probs))
            )
        # geometric tail (1-p)^k decays geometrically; sum to negligibility
        total, k, tail = 0.0, 1, 1.0 - self.p
        while True:
            term = (k**power) * tail * self.p
            total += term
            if term < 1e-16 * (1.0 + total) and k > 8:
                return total
            k += 1
            tail *= 1.0 - self.p

    def max_children(self) -> int:
        """Largest possible N, or -1 when unbounded."""
        if self.family == "Fixed":
            return self.n
        if self.family == "FiniteSupport":
            return max(self.values)
        return -1


@dataclass(frozen=True)
class WeightLaw:
    """Distribution of one multiplicative weight A > 0."""

    family: str
    mu: float = 0.0
    sigma: float = 0.0
    points: tuple = ()
    probs: tuple = ()
    value: float = 0.0
    exponent: float = 0.0

    @staticmethod
    def lognormal(mu: float, sigma: float) -> "WeightLaw":
        if sigma <= 0.0:
            raise ValueError("lognormal sigma must be positive")
        return WeightLaw("Lognormal", mu=float(mu), sigma=float(sigma))

    @staticmethod
    def finite(points, probs) -> "WeightLaw":
        pts = tuple(float(x) for x in points)
        if any(x <= 0.0 for x in pts):
            raise ValueError("weight atoms must be positive")
        pr = _check_probs(probs)
        if len(pr) != len(pts):
            raise ValueError("points/probs length mismatch")
        return WeightLaw("FiniteSupport", points=pts, probs=pr)

    @staticmethod
    def deterministic(value: float) -> "WeightLaw":
        if value <= 0.0:
            raise ValueError("deterministic weight must be positive")
        return WeightLaw("Deterministic", value=float(value))

    @staticmethod
    def uniform01_power(exponent: float) -> "WeightLaw":
        """A = U^exponent with U uniform on (0,1)."""
        if exponent <= 0.0:
            raise ValueError("exponent must be positive")
        return WeightLaw("Uniform01Power", exponent=float(exponent))

    def mellin(self, s: float, order: int = 0) -> float:
        """E[A^s * (log A)^order], +inf where the integral diverges."""
        if order not in (0, 1, 2):
            raise ValueError("derivative order must be 0, 1 or 2")
        if self.family == "Lognormal":
            m = math.exp(self.mu * s + 0.5 * self.sigma**2 * s * s)
            loc = self.mu + self.sigma**2 * s
            if order == 0:
                return m
            if order == 1:
                return loc * m
            return (loc * loc + self.sigma**2) * m
        if self.family == "FiniteSupport":
            return float(
                sum(q * x**s * math.log(x) ** order for x, q in zip(self.points, self.probs))
            )
        if self.family == "Deterministic":
            return self.value**s * math.log(self.value) ** order
        # Uniform01Power: E[U^{es} (e log U)^k] = e^k (-1)^k k! / (es+1)^{k+1}
        e = self.exponent
        q = e * s
        if q <= -1.0:
            return math.inf
        k = order
        return (e**k) * ((-1.0) ** k) * math.factorial(k) / (q + 1.0) ** (k + 1)


@dataclass(frozen=True)
class InhomLaw:
    """Distribution of the nonnegative additive term B."""

    family: str
    b: float = 0.0
    rate: float = 0.0
    points: tuple = ()
    probs: tuple = ()

    @staticmethod
    def constant(b: float) -> "InhomLaw":
        if b < 0.0:
            raise ValueError("constant inhomogeneous term must be >= 0")
        return InhomLaw("Constant", b=float(b))

    @staticmethod
    def exponential(rate: float) -> "InhomLaw":
        if rate <= 0.0:
            raise ValueError("exponential rate must be positive")
        return InhomLaw("Exponential", rate=float(rate))

    @staticmethod
    def finite(points, probs) -> "InhomLaw":
        pts = tuple(float(x) for x in points)
        if any(x < 0.0 for x in pts):
            raise ValueError("inhomogeneous atoms must be >= 0")
        pr = _check_probs(probs)
        if len(pr) != len(pts):
            raise ValueError("points/probs length mismatch")
        return InhomLaw("FiniteSupport", points=pts, probs=pr)

    def moment(self, power: float) -> float:
        """E[B^power]."""
        if self.family == "Constant":
            return self.b**power if self.b > 0 else (1.0 if power == 0 else 0.0)
        if self.family == "Exponential":
            return math.gamma(power + 1.0) / self.rate**power
        return float(
            sum((x**power if x > 0 else (1.0 if power == 0 else 0.0)) * q
                for x, q in zip(self.points, self.probs))
        )

    def mean(self) -> float:
        return self.moment(1.0)


@dataclass(frozen=True)
class ModelSpec:
    """One branching step: offspring N, term B, i.i.d. weights A_i."""

    offspring: OffspringLaw
    weight: WeightLaw
    inhom: InhomLaw
    coupling: str = "IIDGivenN"
    label: str = ""

    def __post_init__(self):
        if self.coupling != "IIDGivenN":
            raise ValueError(f"unsupported coupling {self.coupling!r}")


@dataclass(frozen=True)
class BranchSample:
    """One realization (n, b, a_1..a_n)."""

    n: int
    b: float
    a: tuple


# ---------------------------------------------------------------------------
# constructors for the two families used throughout the experiments


def make_critical_lognormal(alpha: float, n: int, inhom: InhomLaw | None = None,
                            label: str = "") -> ModelSpec:
    """Lognormal-weight model tuned so that m(s) touches 1 at s = alpha.

    With n children and A lognormal(mu, sigma), m(s) = n*exp(mu s +
    sigma^2 s^2 / 2); requiring m(alpha) = 1 and m'(alpha) = 0 pins
    sigma^2 = 2 log(n) / alpha^2 and mu = -sigma^2 * alpha.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0,1)")
    if n < 2:
        raise ValueError("need at least 2 children for a critical model")
    sigma2 = 2.0 * math.log(n) / alpha**2
    mu = -sigma2 * alpha
    return ModelSpec(
        offspring=OffspringLaw.fixed(n),
        weight=WeightLaw.lognormal(mu, math.sqrt(sigma2)),
        inhom=inhom if inhom is not None else InhomLaw.constant(1.0),
        label=label or f"critical-lognormal(alpha={alpha:g},n={n})",
    )


def two_root_exponents(mu: float, sigma: float, n: int) -> tuple:
    """Roots of n*exp(mu s + sigma^2 s^2/2) = 1, raising NoTwoRoots."""
    disc = mu * mu - 2.0 * sigma**2 * math.log(n)
    if mu >= 0.0 or disc <= 0.0:
        raise NoTwoRoots(
            f"no real root pair for mu={mu:g}, sigma={sigma:g}, n={n}"
        )
    root = math.sqrt(disc)
    s2 = sigma**2
    return ((-mu - root) / s2, (-mu + root) / s2)


def make_two_root_lognormal(mu: float, sigma: float, n: int,
                            inhom: InhomLaw | None = None,
                            label: str = "") -> ModelSpec:
    """Lognormal-weight model whose Mellin function crosses 1 twice.

    Requires mu < 0 and mu^2 > 2 sigma^2 log(n); otherwise NoTwoRoots.
    """
    alpha, beta = two_root_exponents(mu, sigma, n)
    del alpha, beta  # existence check only
    return ModelSpec(
        offspring=OffspringLaw.fixed(n),
        weight=WeightLaw.lognormal(mu, sigma),
        inhom=inhom if inhom is not None else InhomLaw.constant(1.0),
        label=label or f"two-root-lognormal(mu={mu:g},sigma={sigma:g},n={n})",
    )


# ---------------------------------------------------------------------------
# closed-form Mellin function


def analytic_mellin(spec: ModelSpec, s: float, order: int = 0) -> float:
    """m(s) = E[sum_i A_i^s], or its s-derivative of the given order.

    Under IIDGivenN coupling this factorizes as E[N] * E[A^s (log A)^k].
    Returns +inf where the expectation diverges.
    """
    en = spec.offspring.mean()
    w = spec.weight.mellin(s, order)
    if math.isinf(w):
        return math.inf
    return en * w


# ---------------------------------------------------------------------------
# sampling

_WEIGHT_DRAWS = {"Lognormal": 2, "FiniteSupport": 1, "Deterministic": 0,
                 "Uniform01Power": 1}


def _offspring_counts(law: OffspringLaw, u: np.ndarray) -> np.ndarray:
    if law.family == "FiniteSupport":
        cum = np.cumsum(law.probs)
        idx = np.searchsorted(cum, u, side="right")
        idx = np.minimum(idx, len(law.values) - 1)
        return np.asarray(law.values, dtype=np.int64)[idx]
    # Geometric: floor(log u / log(1-p)) has P[N=k] = (1-p)^k p
    return np.floor(np.log(u) / math.log1p(-law.p)).astype(np.int64)


def _weights_from_uniform(law: WeightLaw, u: np.ndarray) -> np.ndarray:
    if law.family == "FiniteSupport":
        cum = np.cumsum(law.probs)
        idx = np.minimum(np.searchsorted(cum, u, side="right"), len(law.points) - 1)
        return np.asarray(law.points, dtype=np.float64)[idx]
    return u ** law.exponent


def sample_branch(spec: ModelSpec, stream: rng.CounterStream) -> BranchSample:
    """Draw one branching step from an explicit counter stream.

    Consumption order is N, then B, then the weights in child order;
    the per-draw counter costs are listed in :mod:`smoothtail.rng`.
    The numba tree kernel replicates this sequence exactly.
    """
    off = spec.offspring
    if off.family == "Fixed":
        n = off.n
    else:
        n = int(_offspring_counts(off, stream.uniforms(1))[0])

    inh = spec.inhom
    if inh.family == "Constant":
        b = inh.b
    elif inh.family == "Exponential":
        b = float(stream.exponentials(1, inh.rate)[0])
    else:
        cum = np.cumsum(inh.probs)
        idx = min(int(np.searchsorted(cum, stream.uniform(), side="right")),
                  len(inh.points) - 1)
        b = inh.points[idx]

    w = spec.weight
    if n == 0:
        a = ()
    elif w.family == "Lognormal":
        a = tuple(np.exp(w.mu + w.sigma * stream.normals(n)))
    elif w.family == "Deterministic":
        a = (w.value,) * n
    else:
        a = tuple(_weights_from_uniform(w, stream.uniforms(n)))
    return BranchSample(n=n, b=b, a=a)


def sample_branches(spec: ModelSpec, seed: int, n_samples: int,
                    start_stream: int = 0):
    """Vectorized i.i.d. branch samples, one stream per sample.

    Returns ``(counts, b, a_flat, offsets)`` where sample i owns weights
    ``a_flat[offsets[i]:offsets[i]+counts[i]]``.  Stream i+start_stream
    reproduces sample i exactly, matching ``sample_branch``.
    """
    keys = rng.stream_key(seed, np.arange(start_stream, start_stream + n_samples,
                                          dtype=np.uint64))
    off = spec.offspring
    ctr = np.zeros(n_samples, dtype=np.uint64)
    if off.family == "Fixed":
        counts = np.full(n_samples, off.n, dtype=np.int64)
    else:
        counts = _offspring_counts(off, rng.uniforms(keys, ctr))
        ctr += np.uint64(1)

    inh = spec.inhom
    if inh.family == "Constant":
        b = np.full(n_samples, inh.b)
    elif inh.family == "Exponential":
        b = -np.log(rng.uniforms(keys, ctr)) / inh.rate
        ctr += np.uint64(1)
    else:
        cum = np.cumsum(inh.probs)
        idx = np.minimum(np.searchsorted(cum, rng.uniforms(keys, ctr), side="right"),
                         len(inh.points) - 1)
        b = np.asarray(inh.points, dtype=np.float64)[idx]
        ctr += np.uint64(1)

    w = spec.weight
    offsets = np.concatenate(([0], np.cumsum(counts)))[:-1]
    total = int(counts.sum())
    if total == 0:
        return counts, b, np.empty(0), offsets
    owner = np.repeat(np.arange(n_samples), counts)
    child = np.arange(total, dtype=np.uint64) - offsets.astype(np.uint64)[owner]
    per = _WEIGHT_DRAWS[w.family]
    base = ctr[owner] + np.uint64(per) * child
    if w.family == "Lognormal":
        z = rng.normals(keys[owner], base)
        a_flat = np.exp(w.mu + w.sigma * z)
    elif w.family == "Deterministic":
        a_flat = np.full(total, w.value)
    else:
        a_flat = _weights_from_uniform(w, rng.uniforms(keys[owner], base))
    return counts, b, a_flat, offsets


# ---------------------------------------------------------------------------
# arithmetic-support heuristic


def weight_log_points(law: WeightLaw):
    """Support of log A for discrete families, None for continuous ones."""
    if law.family == "Lognormal" or law.family == "Uniform01Power":
        return None
    if law.family == "Deterministic":
        return (math.log(law.value),)
    return tuple(math.log(x) for x in law.points)


def is_nonarithmetic(law: WeightLaw, max_denominator: int = 10**6,
                     tol: float = 1e-9) -> bool:
    """Heuristic lattice test on the support of log A.

    Continuous families are nonarithmetic.  Discrete supports are
    flagged arithmetic-suspect (False) when every pairwise ratio of
    nonzero log-points is rational with denominator <= max_denominator;
    a proof either way is not attempted.
    """
    logs = weight_log_points(law)
    if logs is None:
        return True
    nz = [x for x in logs if abs(x) > tol]
    if len(nz) <= 1:
        return False
    base = nz[0]
    for x in nz[1:]:
        r = x / base
        frac = Fraction(r).limit_denominator(max_denominator)
        if abs(float(frac) - r) > tol:
            return True
    return False


# ---------------------------------------------------------------------------
# JSON serialization

_LAW_FIELDS = {
    "offspring": {"Fixed": ("n",), "FiniteSupport": ("values", "probs"),
                  "Geometric": ("p",)},
    "weight": {"Lognormal": ("mu", "sigma"), "FiniteSupport": ("points", "probs"),
               "Deterministic": ("value",), "Uniform01Power": ("exponent",)},
    "inhom": {"Constant": ("b",), "Exponential": ("rate",),
              "FiniteSupport": ("points", "probs")},
}

_LAW_TYPES = {"offspring": OffspringLaw, "weight": WeightLaw, "inhom": InhomLaw}

# validating constructors, so deserialized laws pass the same checks as
# ones built in code (parameter names match the serialized field names)
_LAW_CTORS = {
    "offspring": {"Fixed": OffspringLaw.fixed,
                  "FiniteSupport": OffspringLaw.finite,
                  "Geometric": OffspringLaw.geometric},
    "weight": {"Lognormal": WeightLaw.lognormal,
               "FiniteSupport": WeightLaw.finite,
               "Deterministic": WeightLaw.deterministic,
               "Uniform01Power": WeightLaw.uniform01_power},
    "inhom": {"Constant": InhomLaw.constant,
              "Exponential": InhomLaw.exponential,
              "FiniteSupport": InhomLaw.finite},
}


def _law_to_dict(role: str, law) -> dict:
    d = {"family": law.family}
    for f in _LAW_FIELDS[role][law.family]:
        v = getattr(law, f)
        d[f] = list(v) if isinstance(v, tuple) else v
    return d


def _law_from_dict(role: str, d: dict):
    if not isinstance(d, dict):
        raise ValueError(f"{role} block must be a JSON object")
    fields = dict(d)
    try:
        family = fields.pop("family")
    except KeyError:
        raise ValueError(f"{role} block is missing 'family'") from None
    if not isinstance(family, str) or family not in _LAW_FIELDS[role]:
        raise ValueError(f"unknown {role} family {family!r}")
    allowed = _LAW_FIELDS[role][family]
    if set(fields) != set(allowed):
        raise ValueError(f"fields {sorted(fields)} do not match {role}.{family}")
    try:
        return _LAW_CTORS[role][family](**fields)
    except TypeError as exc:
        raise ValueError(f"bad {role}.{family} parameters: {exc}") from None


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "label": spec.label,
        "coupling": spec.coupling,
        "offspring": _law_to_dict("offspring", spec.offspring),
        "weight": _law_to_dict("weight", spec.weight),
        "inhom": _law_to_dict("inhom", spec.inhom),
    }


def spec_from_dict(d: dict) -> ModelSpec:
    if not isinstance(d, dict):
        raise ValueError("model must be a JSON object")
    laws = {}
    for role in ("offspring", "weight", "inhom"):
        if role not in d:
            raise ValueError(f"model is missing the '{role}' block")
        laws[role] = _law_from_dict(role, d[role])
    return ModelSpec(
        offspring=laws["offspring"],
        weight=laws["weight"],
        inhom=laws["inhom"],
        coupling=d.get("coupling", "IIDGivenN"),
        label=d.get("label", ""),
    )


def spec_to_json(spec: ModelSpec) -> str:
    return json.dumps(spec_to_dict(spec), sort_keys=True)


def spec_from_json(text: str) -> ModelSpec:
    return spec_from_dict(json.loads(text))
