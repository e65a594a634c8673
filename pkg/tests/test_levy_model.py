import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levy_valley_lab.levy_model import (
    CompoundPoissonNegative,
    EnvironmentSpec,
    ExponentialMagnitude,
    FixedMagnitude,
    InvalidEnvironment,
    KappaNotAboveOne,
    NoRoot,
    find_kappa,
    laplace_exponent,
    load_environment,
    m_constant,
    preset,
    psi_derivative,
    spec_from_json,
    spec_to_json,
)


def test_brownian_root_and_m():
    spec = preset("bm-kappa:2")
    assert spec.kappa == pytest.approx(2.0, abs=1e-9)
    assert laplace_exponent(spec, 1.0) == pytest.approx(-0.5)
    assert m_constant(spec) == pytest.approx(4.0)


@pytest.mark.parametrize("rate,kappa", [(1.0, 1.0), (0.375, 0.5)])
def test_exponential_jump_roots(rate, kappa):
    spec = EnvironmentSpec(1.0, 0.0, CompoundPoissonNegative(rate, ExponentialMagnitude(1.0)))
    assert find_kappa(spec) == pytest.approx(kappa, abs=1e-9)


def test_psi_prime_at_half_for_three_eighths():
    spec = preset("bm-expjumps:3/8")
    assert spec.psi_prime_at_kappa == pytest.approx(1.0 / 3.0, rel=1e-8)


def test_jump_term_closed_forms():
    exp = CompoundPoissonNegative(2.0, ExponentialMagnitude(0.5))
    assert exp.laplace_term(1.0) == pytest.approx(2.0 * (1.0 / 1.5 - 1.0))
    fixed = CompoundPoissonNegative(1.0, FixedMagnitude(2.0))
    assert fixed.laplace_term(0.5) == pytest.approx(math.exp(-1.0) - 1.0)


def test_m_requires_kappa_above_one():
    with pytest.raises(KappaNotAboveOne):
        m_constant(preset("bm-kappa:0.5"))


def test_invalid_environments():
    with pytest.raises(InvalidEnvironment):
        EnvironmentSpec(0.0, 1.0)
    with pytest.raises(InvalidEnvironment):
        EnvironmentSpec(1.0, -1.0)
    with pytest.raises(KeyError):
        preset("nope")


def test_no_root_below_lambda_max():
    # kappa = 2*gamma/Q = 100 lies beyond the search bracket
    with pytest.raises(NoRoot):
        EnvironmentSpec(1.0, 50.0)


def test_json_round_trip(tmp_path):
    spec = preset("bm-expjumps:3/8")
    obj = spec_to_json(spec)
    back = spec_from_json(json.dumps(obj))
    assert back.kappa == pytest.approx(spec.kappa)
    f = tmp_path / "env.json"
    f.write_text(json.dumps(obj))
    assert load_environment(str(f)).kappa == pytest.approx(0.5, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    q=st.floats(0.2, 3.0),
    gamma=st.floats(0.0, 2.0),
    rate=st.floats(0.0, 3.0),
    mean=st.floats(0.1, 2.0),
)
def test_root_properties(q, gamma, rate, mean):
    jc = CompoundPoissonNegative(rate, ExponentialMagnitude(mean)) if rate > 0 else None
    if gamma + rate * mean < 1e-3:
        return
    spec = EnvironmentSpec(q, gamma, jc)
    k = spec.kappa
    if k > 60:
        return
    assert abs(laplace_exponent(spec, k)) < 1e-7 * max(1.0, k * k)
    assert psi_derivative(spec, k) > 0
    assert laplace_exponent(spec, 0.5 * k) < 0
