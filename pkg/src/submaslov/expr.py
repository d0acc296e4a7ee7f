"""Arithmetic expressions over coordinates, parsed without ``eval``.

The grammar is Python's expression syntax restricted to numbers, coordinate
names, the constants ``pi`` and ``E``, the operators ``+ - * / **`` and calls
to a fixed set of elementary functions.  Parsed expressions become sympy
objects so metrics built from them get exact derivatives.
"""

from __future__ import annotations

import ast

import sympy as sp

from .errors import ConfigError

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "sinh": sp.sinh,
    "cosh": sp.cosh,
    "tanh": sp.tanh,
    "asin": sp.asin,
    "acos": sp.acos,
    "atan": sp.atan,
    "abs": sp.Abs,
}
CONSTANTS = {"pi": sp.pi, "E": sp.E}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a ** b,
}


def _number(value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError
    return sp.Integer(value) if isinstance(value, int) else sp.Float(repr(value))


def parse_expression(text: str, symbols: dict, key: str | None = None) -> sp.Expr:
    """Parse ``text`` into a sympy expression over ``symbols`` (name -> Symbol).

    Raises :class:`ConfigError` with the column of the offending token.
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}", key=key,
                          column=exc.offset) from None

    def fail(node, msg):
        raise ConfigError(f"{msg} in expression {text!r}", key=key,
                          column=getattr(node, "col_offset", 0) + 1)

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant):
            try:
                return _number(node.value)
            except TypeError:
                fail(node, f"unsupported literal {node.value!r}")
        if isinstance(node, ast.Name):
            if node.id in symbols:
                return symbols[node.id]
            if node.id in CONSTANTS:
                return CONSTANTS[node.id]
            fail(node, f"unknown name {node.id!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            val = walk(node.operand)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                fail(node, "unsupported function call")
            if node.keywords or len(node.args) != 1:
                fail(node, f"{node.func.id} takes exactly one positional argument")
            return FUNCTIONS[node.func.id](walk(node.args[0]))
        fail(node, f"unsupported syntax {type(node).__name__}")

    return sp.sympify(walk(tree))


def format_number(x: float) -> str:
    """Shortest round-tripping decimal form of ``x``."""
    return repr(float(x))
