import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diswaps.payoffs import DiPayoff, combine, lv_payoff, moment_payoff, random_payoff, straddle_payoff
from diswaps.replication import black76, black76_chain, power_log_price
from diswaps.simulate import make_partition
from diswaps.swaps import (
    MarketState,
    StateError,
    SwapSpec,
    calendar_rate,
    fair_value,
    fair_value_terms,
    frequency_rate,
    moment_rate,
    moment_state,
    state_from_chain,
    state_from_model,
    straddle_rate,
)


@pytest.fixture(scope="module")
def chain_powers():
    ch = black76_chain(1.0, 0.2, 1.0)
    return [power_log_price(ch, n) for n in range(1, 7)]


def test_alpha_only_is_zero(gbm):
    p = DiPayoff(("F", "X"), [3.0, -1.0], np.zeros((2, 2)), [0, 0], [0, 0])
    assert fair_value(p, state_from_model(gbm, p.labels, 1.0)) == 0.0


def test_variance_of_single_component():
    s = MarketState(("F",), [100.0], [[10100.0]], [math.nan])
    p = DiPayoff(("F",), [0.0], [[1.0]], [0.0], [0.0])
    assert fair_value(p, s) == 100.0


def test_lv_from_chain():
    s = state_from_chain(black76_chain(1.0, 0.2, 1.0), ("F", "X"))
    assert fair_value(lv_payoff(), s) == pytest.approx(0.04, abs=1e-6)


def test_state_invariants():
    with pytest.raises(StateError):
        MarketState(("F",), [100.0], [[9000.0]], [0.0])  # negative variance
    with pytest.raises(StateError):
        MarketState(("a", "b"), [0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]], [0.0, 0.0])
    s = MarketState(("F",), [100.0], [[math.nan]], [math.nan])
    with pytest.raises(StateError):
        fair_value(DiPayoff(("F",), [0.0], [[1.0]], [0.0], [0.0]), s)
    with pytest.raises(StateError):
        fair_value(lv_payoff(("F", "Y")), state_from_model(_gbm(), ("F", "X"), 1.0))


def _gbm():
    from diswaps.simulate import ModelKind, ModelSpec

    return ModelSpec(ModelKind.GBM, 100.0, 0.2)


def test_moment_rates_match_normal_moments(chain_powers):
    X = chain_powers
    assert moment_rate(2, X[:2]) == pytest.approx(0.04, abs=1e-6)
    assert moment_rate(3, X[:3]) == pytest.approx(0.0, abs=1e-6)
    assert moment_rate(4, X[:4]) == pytest.approx(4.8e-3, abs=1e-6)
    with pytest.raises(ValueError):
        moment_rate(3, X[:2])


@pytest.mark.parametrize("n", [2, 3, 4])
def test_moment_rate_equals_fair_value(chain_powers, n):
    X = chain_powers
    fv = fair_value(moment_payoff(n, X[0]), moment_state(X, n))
    assert fv == pytest.approx(moment_rate(n, X[:n]), rel=1e-12, abs=1e-15)


def test_moment_state_needs_high_orders(chain_powers):
    with pytest.raises(StateError):
        moment_state(chain_powers[:3], 3)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_moment_rate_model_state(gbm, n):
    s = state_from_model(gbm, ("X", "X2", "X3"), 1.0)
    p = moment_payoff(n, s.F0[0])
    s = s.reorder(p.labels)
    oracle = {2: 0.04, 3: 0.0, 4: 3 * 0.04**2}[n]
    assert fair_value(p, s) == pytest.approx(oracle, abs=1e-12)


def test_straddle_rates():
    assert straddle_rate([5.0], [7.0], [[1.0]]) == -35.0
    assert straddle_rate([5.0, 1.0], [7.0, 2.0], np.zeros((2, 2))) == 0.0
    P = black76(100, 100, 0.2, 1.0, False)
    C = black76(100, 100, 0.2, 1.0, True)
    assert straddle_rate([P], [C], [[1.0]]) == pytest.approx(-63.45, abs=0.01)
    with pytest.raises(ValueError):
        straddle_rate([1.0, 2.0], [1.0], [[1.0]])


def test_straddle_fair_value_matches_rate(gbm):
    ks = [90.0, 100.0, 110.0]
    ot = np.tril(np.arange(1.0, 10.0).reshape(3, 3))
    p = straddle_payoff(ot, ks)
    s = state_from_model(gbm, p.labels, 1.0)
    P, C = s.F0[:3], s.F0[3:]
    assert fair_value(p, s) == pytest.approx(straddle_rate(P, C, ot), rel=1e-13)


def test_frequency_and_calendar():
    assert frequency_rate() == 0.0
    assert calendar_rate(0.3, 0.3) == 0.0
    long = fair_value(lv_payoff(), state_from_chain(black76_chain(1.0, 0.2, 0.5), ("F", "X")))
    short = fair_value(lv_payoff(), state_from_chain(black76_chain(1.0, 0.2, 0.25), ("F", "X")))
    assert calendar_rate(long, short) == pytest.approx(0.01, abs=1e-6)


@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_fair_value_linear(seed, a, b):
    r = np.random.default_rng(seed)
    s = state_from_model(_gbm(), ("F", "X", "X2"), 1.0)
    p1, p2 = random_payoff(r, s.labels), random_payoff(r, s.labels)
    lhs = fair_value(combine(a, p1, b, p2), s)
    rhs = a * fair_value(p1, s) + b * fair_value(p2, s)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@given(st.integers(0, 2**31))
def test_alpha_beta_do_not_matter(seed):
    r = np.random.default_rng(seed)
    s = state_from_model(_gbm(), ("F", "X"), 1.0)
    p = random_payoff(r, s.labels)
    q = DiPayoff(p.labels, r.normal(size=2), p.omega, r.normal(size=2) * [1, 0], p.gamma)
    assert fair_value(p, s) == fair_value(q, s)


def test_terms_split(gbm):
    s = state_from_model(gbm, ("F", "X"), 1.0)
    t = fair_value_terms(lv_payoff(), s)
    assert t["quadratic_term"] == 0.0
    assert t["log_term"] == pytest.approx(0.04)


def test_swap_spec():
    m = make_partition("regular", 252, 1.0)
    h = make_partition("regular", 12, 1.0)
    SwapSpec(lv_payoff(), 1.0, m, "frequency", hedge_partition=h)
    with pytest.raises(ValueError):
        SwapSpec(lv_payoff(), 2.0, m)
    with pytest.raises(ValueError):
        SwapSpec(lv_payoff(), 1.0, h, "frequency", hedge_partition=make_partition("regular", 7, 1.0))
    with pytest.raises(ValueError):
        SwapSpec(lv_payoff(), 1.0, m, "calendar", short_maturity=1.5)
