"""Safe parsing of closed-form coefficient expressions.

Expressions use the coordinates ``x1, x2, ...`` and a fixed set of
elementary functions.  They are screened on the Python AST before sympy
sees them, so attribute access, calls to unknown names and similar
constructs are rejected outright.
"""
from __future__ import annotations

import ast
from typing import Callable

import numpy as np
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
    "atan": sp.atan,
    "abs": sp.Abs,
}
CONSTANTS = {"pi": sp.pi, "e": sp.E}

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


def coordinate_symbols(dim: int) -> list[sp.Symbol]:
    return [sp.Symbol(f"x{k + 1}", real=True) for k in range(dim)]


def parse_expression(text: str, dim: int, key: str | None = None) -> sp.Expr:
    """Parse one scalar expression in ``x1..x{dim}``."""
    text = text.strip().replace("^", "**")
    if not text:
        raise ConfigError("empty expression", key=key)
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}", key=key) from None
    symbols = {s.name: s for s in coordinate_symbols(dim)}
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"construct {type(node).__name__} not allowed in {text!r}", key=key)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
                raise ConfigError(f"unknown function in {text!r}", key=key)
            if len(node.args) != 1:
                raise ConfigError(f"functions take one argument in {text!r}", key=key)
        elif isinstance(node, ast.Name) and node.id not in symbols and node.id not in FUNCTIONS and node.id not in CONSTANTS:
            raise ConfigError(f"unknown name {node.id!r} in {text!r}; coordinates are x1..x{dim}", key=key)
        elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"only numeric literals allowed in {text!r}", key=key)
    return sp.sympify(text, locals={**symbols, **FUNCTIONS, **CONSTANTS})


def point_function(expr, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Numpy evaluator taking points ``(dim, ...)``; nested lists stay nested."""
    xs = coordinate_symbols(dim)
    fn = sp.lambdify(xs, expr, modules="numpy")
    return lambda x: fn(*[x[k] for k in range(dim)])


def axis_function(expr, dim: int, axis: int) -> Callable[[np.ndarray], np.ndarray]:
    """Evaluator of an expression depending only on coordinate ``axis``."""
    s = coordinate_symbols(dim)[axis]
    fn = sp.lambdify(s, expr, modules="numpy")
    return lambda v: np.broadcast_to(np.asarray(fn(v), dtype=float), np.shape(v))
