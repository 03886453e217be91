import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sodeflow import expr
from sodeflow.errors import EvalDomainError, ExprSyntaxError


def b1(x, y):
    return expr.Binding.of([x], [y])


def b2(x, y):
    return expr.Binding.of(x, y)


class TestParse:
    def test_polynomial_with_function(self):
        e = expr.parse("y1^2 + sin(x1)")
        assert e.evaluate(b1(0.0, 2.0)) == pytest.approx(4.0, abs=1e-15)

    def test_rational(self):
        e = expr.parse("2*y1*y2/x2")
        assert e.evaluate(b2([0, 1], [3, 5])) == pytest.approx(30.0)

    def test_unary_minus_in_exponent_rejected(self):
        with pytest.raises(ExprSyntaxError):
            expr.parse("y1 ^ -1")
        # parenthesized is fine
        assert expr.parse("y1^(-1)").evaluate(b1(0, 2.0)) == pytest.approx(0.5)

    def test_power_right_associative(self):
        assert expr.parse("2^3^2").evaluate(b1(0, 0)) == 512.0

    def test_unary_minus_binds_below_power(self):
        assert expr.parse("-2^2").evaluate(b1(0, 0)) == -4.0

    def test_constants(self):
        assert expr.parse("pi").evaluate(b1(0, 0)) == math.pi
        assert expr.parse("e").evaluate(b1(0, 0)) == math.e

    def test_syntax_error_offset(self):
        with pytest.raises(ExprSyntaxError) as exc:
            expr.parse("y1 + @")
        assert exc.value.offset == 5

    def test_unknown_identifier(self):
        with pytest.raises(ExprSyntaxError):
            expr.parse("z1 + 1")

    def test_unknown_function(self):
        with pytest.raises(ExprSyntaxError):
            expr.parse("sinh(x1)")

    def test_dimension_check(self):
        with pytest.raises(ExprSyntaxError):
            expr.parse("y3 + x1", dim=2)
        expr.parse("y3 + x1", dim=3)

    def test_trailing_input(self):
        with pytest.raises(ExprSyntaxError):
            expr.parse("1 2")

    def test_scientific_notation(self):
        assert expr.parse("1e-3 + 2E2").evaluate(b1(0, 0)) == pytest.approx(200.001)


class TestEvaluate:
    def test_quotient(self):
        e = expr.parse("(y1^2+y2^2)/x2^2")
        assert e.evaluate(b2([0, 2], [2, 0])) == pytest.approx(1.0)

    def test_log_domain_error(self):
        with pytest.raises(EvalDomainError, match="log"):
            expr.parse("log(x1)").evaluate(b1(0.0, 0.0))

    def test_division_by_zero_reported(self):
        with pytest.raises(EvalDomainError, match="division"):
            expr.parse("y1/x1").evaluate(b1(0.0, 1.0))

    def test_sqrt_domain_error(self):
        with pytest.raises(EvalDomainError, match="sqrt"):
            expr.parse("sqrt(x1)").evaluate(b1(-1.0, 0.0))

    def test_blowup_coefficient_at_origin(self):
        e = expr.parse("pi*(1+y1^2)")
        assert e.evaluate(b1(0.0, 0.0)) == pytest.approx(math.pi, abs=1e-14)

    def test_negative_base_integer_power(self):
        assert expr.parse("y1^3").evaluate(b1(0.0, -2.0)) == -8.0

    def test_abs(self):
        assert expr.parse("abs(y1)").evaluate(b1(0.0, -2.5)) == 2.5


class TestPartial:
    def test_square(self):
        assert expr.parse("y1^2").partial("y1", b1(0, 3.0)) == pytest.approx(6.0)

    def test_product(self):
        e = expr.parse("2*y1*y2/x2")
        assert e.partial("y1", b2([0, 1], [0, 5])) == pytest.approx(10.0)

    def test_base_partial(self):
        e = expr.parse("(y1^2+y2^2)/x2^2")
        assert e.partial("x2", b2([0, 1], [1, 0])) == pytest.approx(-2.0)

    def test_abs_subgradient_zero_at_origin(self):
        assert expr.parse("abs(y1)").partial("y1", b1(0, 0.0)) == 0.0


class TestSecondPartial:
    def test_pure(self):
        e = expr.parse("(y1^2+y2^2)/x2^2")
        assert e.second_partial("y1", "y1", b2([0, 1], [1, 1])) == pytest.approx(2.0)

    def test_mixed(self):
        e = expr.parse("y1*y2")
        assert e.second_partial("y1", "y2", b2([0, 0], [7, -3])) == pytest.approx(1.0)

    def test_mixed_base_fiber(self):
        e = expr.parse("2*y1*y2/x2")
        assert e.second_partial("x2", "y1", b2([0, 1], [1, 1])) == pytest.approx(-2.0)


# --- property tests ---------------------------------------------------------

_FUNCS = ["sin", "cos", "exp", "tanh", "atan"]


def _random_expression(rng: np.random.Generator, depth: int = 0) -> str:
    roll = rng.random()
    if depth > 3 or roll < 0.25:
        choice = rng.integers(0, 3)
        if choice == 0:
            return f"{rng.uniform(-3, 3):.4f}"
        if choice == 1:
            return f"x{rng.integers(1, 3)}"
        return f"y{rng.integers(1, 3)}"
    a = _random_expression(rng, depth + 1)
    b = _random_expression(rng, depth + 1)
    if roll < 0.45:
        return f"({a} + {b})"
    if roll < 0.6:
        return f"({a} - {b})"
    if roll < 0.75:
        return f"({a} * {b})"
    if roll < 0.85:
        return f"{_FUNCS[rng.integers(0, len(_FUNCS))]}({a})"
    if roll < 0.95:
        return f"({a})/(2 + ({b})^2)"
    return f"({a})^{rng.integers(2, 4)}"


def test_partial_matches_central_differences_on_random_pairs():
    # fixed-seed generator, 1000 (expression, binding) pairs, step 1e-6,
    # relative tolerance 1e-6
    rng = np.random.default_rng(8675309)
    h = 1e-6
    checked = 0
    while checked < 1000:
        text = _random_expression(rng)
        e = expr.parse(text, dim=2)
        x = rng.uniform(-2, 2, size=2)
        y = rng.uniform(-2, 2, size=2)
        name = ("x" if rng.random() < 0.5 else "y") + str(rng.integers(1, 3))
        base = expr.Binding.of(x, y)
        slot = ("xy".index(name[0])) * 2 + int(name[1]) - 1
        xp, yp = x.copy(), y.copy()
        xm, ym = x.copy(), y.copy()
        if name[0] == "x":
            xp[int(name[1]) - 1] += h
            xm[int(name[1]) - 1] -= h
        else:
            yp[int(name[1]) - 1] += h
            ym[int(name[1]) - 1] -= h
        try:
            d = e.partial(name, base)
            fd = (
                e.evaluate(expr.Binding.of(xp, yp))
                - e.evaluate(expr.Binding.of(xm, ym))
            ) / (2 * h)
        except EvalDomainError:
            continue
        assert d == pytest.approx(fd, rel=1e-6, abs=2e-6), (text, name, x, y)
        checked += 1


def test_second_partial_symmetry_on_random_pairs():
    rng = np.random.default_rng(24601)
    checked = 0
    while checked < 300:
        e = expr.parse(_random_expression(rng), dim=2)
        b = expr.Binding.of(rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2))
        v1 = ("x" if rng.random() < 0.5 else "y") + str(rng.integers(1, 3))
        v2 = ("x" if rng.random() < 0.5 else "y") + str(rng.integers(1, 3))
        try:
            d12 = e.second_partial(v1, v2, b)
            d21 = e.second_partial(v2, v1, b)
        except EvalDomainError:
            continue
        assert d12 == pytest.approx(d21, abs=1e-12 * max(1.0, abs(d12)))
        checked += 1


@st.composite
def _ast_strings(draw, depth=0):
    if depth > 3 or draw(st.booleans()):
        kind = draw(st.sampled_from(["num", "var", "const"]))
        if kind == "num":
            v = draw(st.floats(min_value=0.0, max_value=100.0,
                               allow_nan=False, allow_infinity=False))
            return f"{v!r}"
        if kind == "const":
            return draw(st.sampled_from(["pi", "e"]))
        return draw(st.sampled_from(["x1", "x2", "y1", "y2"]))
    op = draw(st.sampled_from(["+", "-", "*", "/", "^", "neg", "call"]))
    a = draw(_ast_strings(depth=depth + 1))
    if op == "neg":
        return f"-({a})"
    if op == "call":
        fn = draw(st.sampled_from(list(expr.FUNCTIONS)))
        return f"{fn}({a})"
    b = draw(_ast_strings(depth=depth + 1))
    if op == "^":
        return f"({a})^({b})"
    return f"({a}) {op} ({b})"


@given(_ast_strings())
@settings(max_examples=300, deadline=None)
def test_print_parse_round_trip(text):
    tree = expr.parse(text)
    printed = str(tree)
    again = expr.parse(printed)
    assert tree.node == again.node
    assert str(again) == printed


def test_third_partial_internal():
    e = expr.parse("y1^4 + x1*y1^3")
    b = b1(2.0, 3.0)
    # d3/dy1^3 = 24 y1 + 6 x1
    assert e.third_partial("y1", "y1", "y1", b) == pytest.approx(24 * 3 + 6 * 2)
    # d3/dx1 dy1 dy1 = 6 y1
    assert e.third_partial("x1", "y1", "y1", b) == pytest.approx(18.0)
