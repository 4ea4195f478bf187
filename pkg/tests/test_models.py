"""Model laws: constructors, Mellin closed forms, serialization, sampling."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothtail import (
    BranchSample,
    InhomLaw,
    ModelSpec,
    NoTwoRoots,
    OffspringLaw,
    WeightLaw,
    analytic_mellin,
    is_nonarithmetic,
    make_critical_lognormal,
    make_two_root_lognormal,
    rng,
    sample_branch,
    sample_branches,
    spec_from_dict,
    spec_from_json,
    spec_to_dict,
    spec_to_json,
    two_root_exponents,
)

FOUR_LN2 = 4.0 * math.log(2.0)
EIGHT_LN2 = 8.0 * math.log(2.0)


# ---------------------------------------------------------------------------
# reference constructors


def test_critical_lognormal_constants(critical_spec):
    w = critical_spec.weight
    assert w.mu == pytest.approx(-FOUR_LN2, abs=1e-15)
    assert w.sigma**2 == pytest.approx(EIGHT_LN2, rel=1e-15)
    assert critical_spec.offspring.n == 2
    assert critical_spec.inhom.b == 1.0


def test_critical_tangency_closed_form(critical_spec):
    assert abs(analytic_mellin(critical_spec, 0.5) - 1.0) <= 1e-12
    assert abs(analytic_mellin(critical_spec, 0.5, 1)) <= 1e-12


def test_critical_tangency_generic_parameters():
    spec = make_critical_lognormal(0.3, 3)
    assert abs(analytic_mellin(spec, 0.3) - 1.0) <= 1e-12
    assert abs(analytic_mellin(spec, 0.3, 1)) <= 1e-12


def test_critical_second_derivative_is_sigma2(critical_spec):
    # m''(alpha) = m(alpha) * sigma^2 at the tangency point
    assert analytic_mellin(critical_spec, 0.5, 2) == pytest.approx(
        EIGHT_LN2, rel=1e-12)


def test_critical_rejects_bad_parameters():
    with pytest.raises(ValueError):
        make_critical_lognormal(1.5, 2)
    with pytest.raises(ValueError):
        make_critical_lognormal(0.5, 1)


def test_two_root_exponents_frozen():
    lo, hi = two_root_exponents(-3.0, math.sqrt(2.0), 2)
    assert lo == pytest.approx(0.25226091692210967, rel=1e-14)
    assert hi == pytest.approx(2.74773908307789, rel=1e-14)
    spec = make_two_root_lognormal(-3.0, math.sqrt(2.0), 2)
    assert abs(analytic_mellin(spec, lo) - 1.0) <= 1e-12
    assert abs(analytic_mellin(spec, hi) - 1.0) <= 1e-12


def test_two_root_requires_real_pair():
    with pytest.raises(NoTwoRoots):
        two_root_exponents(-1.0, 1.0, 2)  # discriminant < 0
    with pytest.raises(NoTwoRoots):
        two_root_exponents(1.0, 0.1, 2)  # positive drift
    with pytest.raises(NoTwoRoots):
        make_two_root_lognormal(-1.0, 1.0, 2)


# ---------------------------------------------------------------------------
# Mellin closed forms


def test_mellin_fixed_deterministic_oracles():
    spec = ModelSpec(offspring=OffspringLaw.fixed(2),
                     weight=WeightLaw.deterministic(0.5),
                     inhom=InhomLaw.constant(1.0))
    assert analytic_mellin(spec, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert analytic_mellin(spec, 0.0) == pytest.approx(2.0, abs=1e-15)
    assert analytic_mellin(spec, 1.0, 1) == pytest.approx(
        -math.log(2.0), rel=1e-14)
    assert analytic_mellin(spec, 1.0, 2) == pytest.approx(
        math.log(2.0) ** 2, rel=1e-14)


def test_mellin_uniform_power_closed_form():
    e = 2.0
    law = WeightLaw.uniform01_power(e)
    for s in (0.25, 0.5, 1.0, 3.0):
        assert law.mellin(s) == pytest.approx(1.0 / (e * s + 1.0), rel=1e-14)
        assert law.mellin(s, 1) == pytest.approx(
            -e / (e * s + 1.0) ** 2, rel=1e-14)
        assert law.mellin(s, 2) == pytest.approx(
            2.0 * e**2 / (e * s + 1.0) ** 3, rel=1e-14)


@pytest.mark.parametrize("law", [
    WeightLaw.lognormal(-1.0, 0.8),
    WeightLaw.uniform01_power(1.5),
    WeightLaw.finite([0.3, 0.9, 2.0], [0.5, 0.3, 0.2]),
])
def test_mellin_derivatives_match_finite_differences(law):
    s, h = 0.7, 1e-5
    d1 = (law.mellin(s + h) - law.mellin(s - h)) / (2 * h)
    d2 = (law.mellin(s + h) - 2 * law.mellin(s) + law.mellin(s - h)) / h**2
    assert law.mellin(s, 1) == pytest.approx(d1, rel=1e-8)
    assert law.mellin(s, 2) == pytest.approx(d2, rel=1e-4)


def test_mellin_order_validation():
    with pytest.raises(ValueError):
        WeightLaw.deterministic(0.5).mellin(1.0, 3)


# ---------------------------------------------------------------------------
# law moments


def test_offspring_moments():
    fin = OffspringLaw.finite([0, 2, 5], [0.2, 0.5, 0.3])
    assert fin.mean() == pytest.approx(2.5, rel=1e-15)
    assert fin.moment(2) == pytest.approx(0.5 * 4 + 0.3 * 25, rel=1e-15)
    geo = OffspringLaw.geometric(0.25)
    assert geo.mean() == pytest.approx(3.0, rel=1e-12)
    assert geo.moment(1.0) == pytest.approx(geo.mean(), rel=1e-9)
    assert OffspringLaw.fixed(4).moment(2) == pytest.approx(16.0)
    assert OffspringLaw.fixed(4).max_children() == 4
    assert fin.max_children() == 5


def test_inhom_moments():
    exp = InhomLaw.exponential(2.0)
    assert exp.mean() == pytest.approx(0.5, rel=1e-12)
    assert exp.moment(2) == pytest.approx(2.0 / 4.0, rel=1e-9)
    fin = InhomLaw.finite([0.0, 3.0], [0.5, 0.5])
    assert fin.mean() == pytest.approx(1.5)
    assert fin.moment(2) == pytest.approx(4.5)
    assert InhomLaw.constant(2.0).moment(3) == pytest.approx(8.0)


# ---------------------------------------------------------------------------
# validation


@pytest.mark.parametrize("build", [
    lambda: OffspringLaw.fixed(-1),
    lambda: OffspringLaw.finite([1, 2], [0.5, 0.6]),
    lambda: OffspringLaw.finite([1, 1], [0.5, 0.5]),
    lambda: OffspringLaw.geometric(1.5),
    lambda: WeightLaw.lognormal(0.0, -1.0),
    lambda: WeightLaw.finite([0.5, -0.5], [0.5, 0.5]),
    lambda: WeightLaw.deterministic(0.0),
    lambda: WeightLaw.uniform01_power(-2.0),
    lambda: InhomLaw.exponential(-2.0),
    lambda: InhomLaw.finite([-1.0, 2.0], [0.5, 0.5]),
    lambda: InhomLaw.constant(-1.0),
])
def test_constructor_validation(build):
    with pytest.raises(ValueError):
        build()


def test_unsupported_coupling():
    with pytest.raises(ValueError, match="coupling"):
        ModelSpec(offspring=OffspringLaw.fixed(2),
                  weight=WeightLaw.deterministic(0.5),
                  inhom=InhomLaw.constant(1.0),
                  coupling="Exchangeable")


# ---------------------------------------------------------------------------
# serialization


def _all_specs():
    return [
        make_critical_lognormal(0.5, 2),
        make_two_root_lognormal(-3.0, math.sqrt(2.0), 2),
        ModelSpec(offspring=OffspringLaw.finite([0, 1, 3], [0.2, 0.3, 0.5]),
                  weight=WeightLaw.finite([0.5, 1.5], [0.6, 0.4]),
                  inhom=InhomLaw.exponential(1.5), label="mixed"),
        ModelSpec(offspring=OffspringLaw.geometric(0.4),
                  weight=WeightLaw.uniform01_power(2.0),
                  inhom=InhomLaw.finite([0.0, 1.0], [0.5, 0.5])),
    ]


@pytest.mark.parametrize("spec", _all_specs())
def test_json_round_trip(spec):
    text = spec_to_json(spec)
    back = spec_from_json(text)
    assert back == spec
    # and via plain dicts
    assert spec_from_dict(json.loads(text)) == spec
    assert spec_from_dict(spec_to_dict(spec)) == spec


def test_deserialization_rejects_bad_input():
    good = spec_to_dict(make_critical_lognormal(0.5, 2))

    with pytest.raises(ValueError, match="JSON object"):
        spec_from_dict([1, 2, 3])

    missing = dict(good)
    del missing["offspring"]
    with pytest.raises(ValueError, match="offspring"):
        spec_from_dict(missing)

    bad_family = json.loads(json.dumps(good))
    bad_family["weight"]["family"] = "Cauchy"
    with pytest.raises(ValueError, match="family"):
        spec_from_dict(bad_family)

    bad_param = json.loads(json.dumps(good))
    bad_param["weight"]["sigma"] = -1.0
    with pytest.raises(ValueError, match="sigma"):
        spec_from_dict(bad_param)

    extra_field = json.loads(json.dumps(good))
    extra_field["weight"]["scale"] = 2.0
    with pytest.raises(ValueError):
        spec_from_dict(extra_field)

    missing_field = json.loads(json.dumps(good))
    del missing_field["weight"]["sigma"]
    with pytest.raises(ValueError):
        spec_from_dict(missing_field)


_LAW_STRATEGY = st.builds(
    ModelSpec,
    offspring=st.one_of(
        st.integers(0, 6).map(OffspringLaw.fixed),
        st.floats(0.05, 0.95).map(OffspringLaw.geometric),
        st.just(OffspringLaw.finite([0, 2], [0.5, 0.5])),
    ),
    weight=st.one_of(
        st.builds(WeightLaw.lognormal,
                  st.floats(-5, 1), st.floats(0.1, 3)),
        st.floats(0.05, 4.0).map(WeightLaw.deterministic),
        st.floats(0.1, 5.0).map(WeightLaw.uniform01_power),
        st.just(WeightLaw.finite([0.25, 0.75, 1.25], [0.2, 0.5, 0.3])),
    ),
    inhom=st.one_of(
        st.floats(0.0, 5.0).map(InhomLaw.constant),
        st.floats(0.1, 5.0).map(InhomLaw.exponential),
        st.just(InhomLaw.finite([0.0, 2.0], [0.25, 0.75])),
    ),
    label=st.text(
        alphabet=st.characters(min_codepoint=32, max_codepoint=126),
        max_size=12),
)


@settings(max_examples=60, deadline=None)
@given(spec=_LAW_STRATEGY)
def test_json_round_trip_property(spec):
    assert spec_from_json(spec_to_json(spec)) == spec


# ---------------------------------------------------------------------------
# arithmetic-support heuristic


def test_is_nonarithmetic_cases():
    assert is_nonarithmetic(WeightLaw.lognormal(0.0, 1.0))
    assert is_nonarithmetic(WeightLaw.uniform01_power(2.0))
    assert not is_nonarithmetic(WeightLaw.deterministic(0.5))
    # exact lattice: log-points are integer multiples of log 2
    assert not is_nonarithmetic(WeightLaw.finite([0.5, 0.25], [0.5, 0.5]))
    # single nonzero log-point (1.0 contributes log 1 = 0)
    assert not is_nonarithmetic(WeightLaw.finite([1.0, 0.5], [0.5, 0.5]))
    # log-ratio 2 + 1e-7 needs a denominator beyond the search bound,
    # so the heuristic cannot certify a lattice
    law = WeightLaw.finite([0.5, 0.5 ** (2.0 + 1e-7)], [0.5, 0.5])
    assert is_nonarithmetic(law)
    assert not is_nonarithmetic(law, max_denominator=10**8)


# ---------------------------------------------------------------------------
# branch sampling


def test_sample_branch_trivial_model():
    spec = ModelSpec(offspring=OffspringLaw.fixed(2),
                     weight=WeightLaw.deterministic(0.5),
                     inhom=InhomLaw.constant(1.0))
    stream = rng.CounterStream(0, 0)
    br = sample_branch(spec, stream)
    assert br == BranchSample(n=2, b=1.0, a=(0.5, 0.5))
    assert stream.counter == 0  # every draw is deterministic


def test_sample_branch_counter_contract(critical_spec, finite_mix_spec):
    # lognormal weights: 2 counters each, Fixed offspring and Constant
    # inhomogeneous term cost nothing
    stream = rng.CounterStream(5, 3)
    br = sample_branch(critical_spec, stream)
    assert br.n == 2
    assert stream.counter == 4

    # finite offspring: 1, constant B: 0, finite weights: 1 each
    stream = rng.CounterStream(5, 4)
    br = sample_branch(finite_mix_spec, stream)
    assert stream.counter == 1 + br.n

    # exponential B costs one counter
    spec = ModelSpec(offspring=OffspringLaw.fixed(1),
                     weight=WeightLaw.deterministic(0.5),
                     inhom=InhomLaw.exponential(2.0))
    stream = rng.CounterStream(5, 5)
    sample_branch(spec, stream)
    assert stream.counter == 1


def test_sample_branch_deterministic(critical_spec):
    a = sample_branch(critical_spec, rng.CounterStream(9, 2))
    b = sample_branch(critical_spec, rng.CounterStream(9, 2))
    assert a == b
    c = sample_branch(critical_spec, rng.CounterStream(9, 3))
    assert a != c


@pytest.mark.parametrize("spec_name", [
    "critical", "mix", "geom-pow-exp", "finite-b"])
def test_sample_branches_matches_scalar_loop(spec_name, critical_spec,
                                             finite_mix_spec):
    specs = {
        "critical": critical_spec,
        "mix": finite_mix_spec,
        "geom-pow-exp": ModelSpec(offspring=OffspringLaw.geometric(0.35),
                                  weight=WeightLaw.uniform01_power(2.0),
                                  inhom=InhomLaw.exponential(1.5)),
        "finite-b": ModelSpec(offspring=OffspringLaw.finite([0, 3],
                                                            [0.4, 0.6]),
                              weight=WeightLaw.lognormal(-1.0, 0.7),
                              inhom=InhomLaw.finite([0.5, 2.0], [0.7, 0.3])),
    }
    spec = specs[spec_name]
    n_samples, seed, start = 200, 11, 17
    counts, b, a_flat, offsets = sample_branches(spec, seed, n_samples,
                                                 start_stream=start)
    for i in range(n_samples):
        br = sample_branch(spec, rng.CounterStream(seed, start + i))
        assert br.n == counts[i]
        assert br.b == b[i]
        lo = offsets[i]
        assert np.array_equal(np.asarray(br.a),
                              a_flat[lo:lo + counts[i]])


def test_sample_branches_lognormal_mean(critical_spec):
    counts, b, a_flat, offsets = sample_branches(critical_spec, 0, 50_000)
    # E A = exp(mu + sigma^2/2) = exp(-4 ln 2 + 4 ln 2) ... with
    # sigma^2 = 8 ln 2: E A = exp(-2.7726 + 2.7726) = 1
    ea = float(a_flat.mean())
    se = float(a_flat.std(ddof=1)) / math.sqrt(a_flat.size)
    assert abs(ea - 1.0) < 3 * se
