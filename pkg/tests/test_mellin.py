"""Mellin analysis: root finding, regime classification, assumptions."""

import math

import pytest

from smoothtail import (
    InhomLaw,
    MellinDiverged,
    ModelSpec,
    OffspringLaw,
    WeightLaw,
    default_delta,
    derivative,
    evaluate,
    find_roots,
)
from smoothtail.mellin import check_assumptions, mc_moment_diverges
from smoothtail.tails import pareto_samples

LN2 = math.log(2.0)


def _simple(weight_value: float, n: int = 2) -> ModelSpec:
    return ModelSpec(offspring=OffspringLaw.fixed(n),
                     weight=WeightLaw.deterministic(weight_value),
                     inhom=InhomLaw.constant(1.0))


# ---------------------------------------------------------------------------
# regimes


def test_critical_tangent(critical_spec):
    rep = find_roots(critical_spec)
    assert rep.regime == "CriticalTangent"
    assert len(rep.roots) == 1
    assert rep.roots[0].s == pytest.approx(0.5, abs=1e-6)
    assert abs(rep.roots[0].m_prime) <= 1e-9
    assert rep.window is None
    assert rep.stderr_at_min == 0.0
    assert rep.delta == pytest.approx(0.25)
    fl = rep.flags
    assert fl.EN_gt_1 and fl.nonarithmetic and fl.moments_finite


def test_two_root_regime(two_root_spec):
    rep = find_roots(two_root_spec)
    assert rep.regime == "TwoRoot"
    assert len(rep.roots) == 2
    assert rep.roots[0].s == pytest.approx(0.25226091692210967, abs=1e-9)
    assert rep.roots[1].s == pytest.approx(2.74773908307789, abs=1e-9)
    # convexity: descending then ascending crossing
    assert rep.roots[0].m_prime < 0.0 < rep.roots[1].m_prime
    assert rep.window is None
    assert rep.flags.EN_gt_1 and rep.flags.nonarithmetic


def test_single_crossing_never_tangent():
    # m(s) = 2 * 0.5^s crosses 1 exactly once, at s = 1, with slope
    # -log 2; tangency is impossible for the n * a^s form
    rep = find_roots(_simple(0.5))
    assert rep.regime == "StrictlySubcriticalWindow"
    assert len(rep.roots) == 1
    assert rep.roots[0].s == pytest.approx(1.0, abs=1e-9)
    assert rep.roots[0].m_prime == pytest.approx(-LN2, rel=1e-9)
    assert rep.window[0] == pytest.approx(1.0, abs=1e-9)
    assert rep.window[1] == pytest.approx(10.0)
    assert rep.flags.nonarithmetic is False  # single log-point lattice


def test_no_root_below_one():
    rep = find_roots(_simple(2.0))
    assert rep.regime == "NoRootBelowOne"
    assert rep.roots == ()
    assert rep.window is None
    assert rep.flags is None


def test_subcritical_from_zero(halving_spec):
    # E N = 1 and A = 1/2: m(s) < 1 on all of (0, s_max], no crossing
    rep = find_roots(halving_spec)
    assert rep.regime == "StrictlySubcriticalWindow"
    assert rep.roots == ()
    assert rep.window == (0.0, 10.0)
    assert rep.flags is None
    assert math.isnan(rep.delta)


def test_force_mc_critical(critical_spec):
    rep = find_roots(critical_spec, force_mc=True, budget=200_000, seed=0)
    assert rep.regime == "CriticalTangent"
    assert rep.roots[0].s == pytest.approx(0.5, abs=0.01)
    assert rep.stderr_at_min > 0.0


# ---------------------------------------------------------------------------
# evaluate / derivative


def test_evaluate_closed_vs_mc(critical_spec):
    v, se = evaluate(critical_spec, 0.5)
    assert (v, se) == (pytest.approx(1.0, abs=1e-12), 0.0)
    mc, mc_se = evaluate(critical_spec, 0.5, budget=100_000, seed=3,
                         force_mc=True)
    assert mc_se > 0.0
    assert abs(mc - 1.0) <= 3 * mc_se


def test_derivative_closed_vs_mc(critical_spec):
    d1, se1 = derivative(critical_spec, 0.5, 1)
    assert abs(d1) <= 1e-12 and se1 == 0.0
    d2, _ = derivative(critical_spec, 0.5, 2)
    assert d2 == pytest.approx(8 * LN2, rel=1e-12)
    mc, se = derivative(critical_spec, 0.5, 1, budget=100_000, seed=5,
                        force_mc=True)
    assert abs(mc) <= 3 * se


def test_derivative_order_validation(critical_spec):
    with pytest.raises(ValueError):
        derivative(critical_spec, 0.5, 3)


def test_evaluate_diverged():
    spec = ModelSpec(offspring=OffspringLaw.fixed(2),
                     weight=WeightLaw.uniform01_power(2.0),
                     inhom=InhomLaw.constant(1.0))
    # E[A^s] = 1/(2s + 1) diverges once 2s + 1 <= 0
    with pytest.raises(MellinDiverged):
        evaluate(spec, -0.6)
    v, _ = evaluate(spec, 1.0)
    assert v == pytest.approx(2.0 / 3.0, rel=1e-14)


# ---------------------------------------------------------------------------
# assumptions


def test_default_delta():
    assert default_delta(0.5) == pytest.approx(0.25)
    assert default_delta(0.7) == pytest.approx(0.15)
    assert default_delta(0.9) == pytest.approx(0.05)
    assert default_delta(-1.0) == pytest.approx(0.25)


def test_check_assumptions_critical(critical_spec):
    fl = check_assumptions(critical_spec, 0.5)
    assert fl.delta == pytest.approx(0.25)
    assert fl.EN_gt_1 and fl.nonarithmetic and fl.moments_finite
    keys = set(fl.moments)
    assert keys == {"E[N^(1+delta)]", "E[B^(alpha+delta)]",
                    "m(-delta)", "m(alpha+delta)"}
    assert fl.moments["E[N^(1+delta)]"] == pytest.approx(2.0**1.25, rel=1e-12)
    assert fl.moments["E[B^(alpha+delta)]"] == pytest.approx(1.0)


def test_check_assumptions_divergent_moment():
    # E[A^{-delta}] = 1/(1 - 8 delta) diverges at delta = 1/4
    spec = ModelSpec(offspring=OffspringLaw.fixed(2),
                     weight=WeightLaw.uniform01_power(8.0),
                     inhom=InhomLaw.constant(1.0))
    fl = check_assumptions(spec, 0.5)
    assert fl.moments_finite is False
    assert math.isinf(fl.moments["m(-delta)"])


def test_mc_moment_diverges_heuristic():
    def heavy(n, seed):
        return pareto_samples(0.5, n, seed=seed)  # infinite mean

    def light(n, seed):
        return pareto_samples(3.0, n, seed=seed)  # finite mean

    assert mc_moment_diverges(heavy, budgets=(10**3, 10**4, 10**5)) is True
    assert mc_moment_diverges(light, budgets=(10**3, 10**4, 10**5)) is False
