import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from submaslov.errors import ConfigError
from submaslov.expr import format_number, parse_expression

X = sp.symbols("x0:3")
NAMES = {str(s): s for s in X}


def evaluate(text, point):
    return float(sp.lambdify(X, parse_expression(text, NAMES), "numpy")(*point))


def test_metric_entry_against_hand_evaluation():
    rng = np.random.default_rng(0)
    for p in rng.uniform(-3, 3, size=(10, 3)):
        assert math.isclose(evaluate("1 + 0.1*sin(x0)", p), 1 + 0.1 * math.sin(p[0]), rel_tol=1e-14)


def test_operators_constants_and_functions():
    p = (0.3, -1.2, 2.0)
    got = evaluate("-x0**2 / (1 + x2) + exp(x1)*cos(pi*x0) - sqrt(x2)*E + abs(x1)", p)
    want = -0.09 / 3 + math.exp(-1.2) * math.cos(math.pi * 0.3) - math.sqrt(2) * math.e + 1.2
    assert math.isclose(got, want, rel_tol=1e-13)


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3),
       st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3))
def test_polynomial_roundtrip(coeffs, point):
    text = " + ".join(f"{format_number(c)}*x{i}**{i + 1}" for i, c in enumerate(coeffs))
    want = sum(c * point[i] ** (i + 1) for i, c in enumerate(coeffs))
    assert math.isclose(evaluate(text, point), want, rel_tol=1e-12, abs_tol=1e-12)


def test_exact_derivatives_available():
    expr = parse_expression("x0**3 + sin(x1)", NAMES)
    assert sp.simplify(sp.diff(expr, X[0]) - 3 * X[0] ** 2) == 0


@pytest.mark.parametrize("text, column", [
    ("1 + foo", 5),
    ("1 + open(x0)", 5),
    ("x0.real", 1),
    ("sin(x0, x1)", 1),
    ("'a' + x0", 1),
    ("x0 if x1 else x2", 1),
])
def test_rejections_point_at_token(text, column):
    with pytest.raises(ConfigError) as info:
        parse_expression(text, NAMES, key="k")
    assert info.value.column == column
    assert info.value.key == "k"


def test_syntax_error():
    with pytest.raises(ConfigError) as info:
        parse_expression("1 + * x0", NAMES)
    assert info.value.column is not None


def test_format_number_roundtrips():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, np.pi):
        assert float(format_number(x)) == x
