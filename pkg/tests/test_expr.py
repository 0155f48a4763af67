import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltvcert.expr import (
    EvaluationDomainError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
    differentiate,
    evaluate,
    parse,
)


@pytest.mark.parametrize(
    "src, t, want",
    [
        ("1.1*cos(t/2)+0.1*sin(t)-1", 0.0, 0.1),
        ("t", 3.5, 3.5),
        ("sin(t)^2+cos(t)^2", 0.7, 1.0),
        ("exp(t)", 0.0, 1.0),
        ("1.1*cos(t/2)", math.pi, 0.0),
        ("abs(cos(t))+abs(sin(t))", math.pi / 4, math.sqrt(2)),
        ("2**3 - t", 1.0, 7.0),
        ("t^(-2)", 2.0, 0.25),
        ("-t^2", 3.0, -9.0),
    ],
)
def test_evaluate_examples(src, t, want):
    assert evaluate(parse(src), t) == pytest.approx(want, abs=1e-12)


def test_derivative_examples():
    assert evaluate(differentiate(parse("cos(t/2)")), math.pi) == pytest.approx(-0.5, abs=1e-12)
    assert evaluate(differentiate(parse("1.1*cos(t/2)")), math.pi) == pytest.approx(-0.55, abs=1e-12)
    d = differentiate(parse("7"))
    assert np.all(evaluate(d, np.linspace(0, 5, 11)) == 0.0)


def test_array_evaluation_broadcasts_constants():
    ts = np.linspace(0, 1, 5)
    assert evaluate(parse("3"), ts).shape == (5,)
    np.testing.assert_allclose(evaluate(parse("t*2"), ts), 2 * ts)


def test_extra_variables():
    e = parse("x1*cos(t) - x2", ("t", "x1", "x2"))
    assert evaluate(e, 0.0, x1=2.0, x2=0.5) == pytest.approx(1.5)


@pytest.mark.parametrize("src", ["1/(t-1)", "sqrt(t-2)"])
def test_domain_errors(src):
    with pytest.raises(EvaluationDomainError):
        evaluate(parse(src), 1.0)


def test_syntax_error_reports_offset():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse("sin(t")
    assert info.value.offset == 5
    assert info.value.expected


@pytest.mark.parametrize("src", ["", "t +", "(t", "t)", "2^t", "2^1.5", "3 4"])
def test_syntax_errors(src):
    with pytest.raises(ExpressionSyntaxError):
        parse(src)


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError):
        parse("tan(t)")
    with pytest.raises(UnknownIdentifierError):
        parse("y + 1")


# random trees ----------------------------------------------------------

_leaf = st.one_of(
    st.just("t"),
    st.floats(min_value=-3, max_value=3, allow_nan=False).map(lambda v: f"({v!r})"),
)


def _extend(children):
    unary = st.tuples(st.sampled_from(["sin", "cos", "exp", "-"]), children).map(
        lambda p: f"-({p[1]})" if p[0] == "-" else f"{p[0]}(({p[1]})/4)"
    )
    binary = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda p: f"({p[0]}){p[1]}({p[2]})")
    power = st.tuples(children, st.integers(0, 3)).map(lambda p: f"({p[0]})^{p[1]}")
    return st.one_of(unary, binary, power)


trees = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=150, deadline=None)
@given(trees, st.floats(min_value=-2, max_value=2))
def test_derivative_matches_central_difference(src, t):
    e = parse(src)
    d = differentiate(e)
    h = 1e-6
    fd = (evaluate(e, t + h) - evaluate(e, t - h)) / (2 * h)
    exact = evaluate(d, t)
    scale = max(1.0, abs(evaluate(e, t)))
    assert abs(exact - fd) <= 1e-5 * (1 + abs(exact)) * scale


@settings(max_examples=150, deadline=None)
@given(trees)
def test_round_trip(src):
    e = parse(src)
    again = parse(str(e))
    ts = np.linspace(-2, 2, 17)
    np.testing.assert_array_equal(evaluate(e, ts), evaluate(again, ts))
