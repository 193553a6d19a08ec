import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphint.errors import ArityError, ExpressionSyntaxError, UnknownIdentifier
from morphint.expression import parse_expression


def test_phi_a_factor_parses():
    p = parse_expression("exp(-10*cos(2*x1 - 0.5*x2^3 + 3*x3))", 3)
    assert p.variables == (0, 1, 2)
    assert p.evaluate([0.0, 0.0, 0.0]) == pytest.approx(math.exp(-10.0), rel=1e-15)


@pytest.mark.parametrize(
    "src, offset",
    [("x1 +", 4), ("(x1", 3), ("x1 * * x2", 5), ("2 $ 3", 2), ("sin x1", 4), ("x1 x2", 3), (")", 0)],
)
def test_syntax_error_offsets(src, offset):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression(src, 3)
    assert info.value.offset == offset


def test_unicode_offset_is_in_bytes():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression("x1 + é", 1)
    assert info.value.offset == 5


@pytest.mark.parametrize("src", ["sin(x4)", "y + 1", "x0", "foo(x1)", "X1"])
def test_unknown_identifiers(src):
    with pytest.raises(UnknownIdentifier):
        parse_expression(src, 3)


@pytest.mark.parametrize("src", ["sin(x1, x2)", "pow(x1)", "exp()"])
def test_arity(src):
    with pytest.raises((ArityError, ExpressionSyntaxError)):
        parse_expression(src, 3)
    if src != "exp()":
        with pytest.raises(ArityError):
            parse_expression(src, 3)


def test_empty_source():
    with pytest.raises(ExpressionSyntaxError):
        parse_expression("   ", 1)


@pytest.mark.parametrize(
    "src, x, expected",
    [
        ("-x1^2", [3.0], -9.0),
        ("2^-1", [0.0], 0.5),
        ("2^3^2", [0.0], 512.0),
        ("1 - 2 - 3", [0.0], -4.0),
        ("8 / 4 / 2", [0.0], 1.0),
        ("--x1", [2.0], 2.0),
        ("+x1 * 3", [2.0], 6.0),
        ("pow(x1, 0.5) + abs(-x1)", [4.0], 6.0),
        ("sqrt(x1) * tan(0) + ln(exp(x1))", [4.0], 4.0),
        ("1.5e2 + .5", [0.0], 150.5),
    ],
)
def test_precedence_and_values(src, x, expected):
    p = parse_expression(src, len(x))
    assert p.evaluate(x) == pytest.approx(expected, rel=1e-15)
    assert p.compile()(np.array(x, dtype=float)) == pytest.approx(expected, rel=1e-15)


def test_domain_violations_are_flagged_not_raised():
    p = parse_expression("ln(x1) + 1/x2 + sqrt(x3)", 3)
    v = p.evaluate(np.array([[-1.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, -4.0]]))
    assert np.isnan(v[0]) and np.isinf(v[1]) and np.isnan(v[2])
    f = p.compile()
    assert math.isnan(f(np.array([-1.0, 1.0, 1.0])))
    assert math.isinf(f(np.array([1.0, 0.0, 1.0])))


def test_pretty_round_trip_examples():
    for src in ["-x1^2", "x1 - (x2 - x3)", "exp(-10*cos(2*x1 - 0.5*x2^3 + 3*x3))", "pow(x1, -x2) / 3"]:
        p = parse_expression(src, 3)
        q = parse_expression(p.pretty(), 3)
        assert q.plan == p.plan
        assert parse_expression(q.pretty(), 3).pretty() == q.pretty()


def test_parsing_is_deterministic():
    src = "sin(x1)*cos(x2) + x3^2"
    assert parse_expression(src, 3).plan == parse_expression(src, 3).plan


_atoms = st.one_of(
    st.sampled_from(["x1", "x2", "x3"]),
    st.floats(min_value=0, max_value=1e6, allow_nan=False).map(repr),
)


def _combine(children):
    bins = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda t: f"({t[0]}){t[1]}({t[2]})"
    )
    calls = st.tuples(st.sampled_from(["exp", "ln", "sin", "cos", "tan", "sqrt", "abs"]), children).map(
        lambda t: f"{t[0]}({t[1]})"
    )
    neg = children.map(lambda s: f"-{s}")
    pw = st.tuples(children, children).map(lambda t: f"pow({t[0]}, {t[1]})")
    return st.one_of(bins, calls, neg, pw)


@settings(max_examples=150, deadline=None)
@given(st.recursive(_atoms, _combine, max_leaves=12))
def test_pretty_round_trip_property(src):
    p = parse_expression(src, 3)
    q = parse_expression(p.pretty(), 3)
    assert q.plan == p.plan
    x = np.array([0.7, -1.3, 2.1])
    with np.errstate(all="ignore"):
        a, b = p.evaluate(x), q.evaluate(x)
    assert (np.isnan(a) and np.isnan(b)) or a == b
