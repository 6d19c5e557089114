"""Tiny arithmetic grammar for scenario files.

Expression strings may use +, -, *, /, ^ (power), the functions sin, cos,
exp, min, max, numeric literals, and the variables t, x1, x2, v1..vm.  They
compile to vectorized numpy callables.  Parsing goes through ``ast`` with a
strict whitelist, so scenario files cannot execute arbitrary code.
"""

from __future__ import annotations

import ast

import numpy as np

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "min": np.minimum,
    "max": np.maximum,
}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


def _check(node, variables):
    if isinstance(node, ast.Expression):
        _check(node.body, variables)
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ExpressionError(f"operator {type(node.op).__name__} not in grammar")
        _check(node.left, variables)
        _check(node.right, variables)
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExpressionError("only unary +/- allowed")
        _check(node.operand, variables)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ExpressionError("only sin, cos, exp, min, max may be called")
        if node.keywords:
            raise ExpressionError("keyword arguments not in grammar")
        n_args = len(node.args)
        if node.func.id in ("min", "max"):
            if n_args < 2:
                raise ExpressionError(f"{node.func.id} needs at least two arguments")
        elif n_args != 1:
            raise ExpressionError(f"{node.func.id} takes exactly one argument")
        for a in node.args:
            _check(a, variables)
    elif isinstance(node, ast.Name):
        if node.id not in variables:
            raise ExpressionError(f"unknown variable {node.id!r}; allowed: {sorted(variables)}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ExpressionError("only numeric literals allowed")
    else:
        raise ExpressionError(f"construct {type(node).__name__} not in grammar")


def _evaluate(node, env):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, env)
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_evaluate(node.left, env), _evaluate(node.right, env))
    if isinstance(node, ast.UnaryOp):
        val = _evaluate(node.operand, env)
        return -val if isinstance(node.op, ast.USub) else +val
    if isinstance(node, ast.Call):
        fn = _FUNCTIONS[node.func.id]
        args = [_evaluate(a, env) for a in node.args]
        if node.func.id in ("min", "max"):
            out = args[0]
            for a in args[1:]:
                out = fn(out, a)
            return out
        return fn(args[0])
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.Constant):
        return float(node.value)
    raise AssertionError("unreachable: node survived _check")


def compile_expression(text, variables):
    """Compile an expression string to fn(env) with env a dict of arrays/scalars.

    ``variables`` is the set of names the expression may reference.
    """
    if not isinstance(text, str):
        raise ExpressionError(f"expression must be a string, got {type(text).__name__}")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as e:
        raise ExpressionError(f"cannot parse expression {text!r}: {e}") from e
    variables = set(variables)
    _check(tree, variables)

    def fn(env):
        return _evaluate(tree, env)

    fn.source = text
    return fn


def field_variables(dim, m):
    """Variable set for reaction/boundary expressions: t, x1[,x2], v1..vm."""
    names = {"t"}
    names.update(f"x{j + 1}" for j in range(dim))
    names.update(f"v{i + 1}" for i in range(m))
    return names


def space_variables(dim):
    names = {"t"}
    names.update(f"x{j + 1}" for j in range(dim))
    return names
