"""Tiny arithmetic expression language for scenario files.

Grammar: numbers, the variables ``t`` and ``s``, the constant ``pi``,
binary ``+ - * / ^`` (``**`` also accepted), unary minus, and the
functions ``sin``, ``cos``, ``exp``.  Expressions are compiled to numpy
callables that accept real or complex arrays, so a complex-step
derivative is available for free.
"""

from __future__ import annotations

import ast
import operator

import numpy as np

from .exceptions import ScenarioParseError

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_VARS = ("t", "s")


class Expression:
    """Compiled expression in the variables ``t`` and ``s``."""

    def __init__(self, source: str):
        if not isinstance(source, str) or not source.strip():
            raise ScenarioParseError(f"empty or non-string expression: {source!r}")
        self.source = source
        try:
            tree = ast.parse(source.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ScenarioParseError(f"cannot parse expression {source!r}: {exc.msg}") from exc
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ScenarioParseError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY:
                raise ScenarioParseError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ScenarioParseError(f"unknown function in {self.source!r}")
            if len(node.args) != 1 or node.keywords:
                raise ScenarioParseError(f"functions take exactly one argument: {self.source!r}")
            self._check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in _VARS and node.id != "pi":
                raise ScenarioParseError(f"unknown name {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ScenarioParseError(f"bad constant in {self.source!r}")
        else:
            raise ScenarioParseError(f"unsupported syntax in {self.source!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](self._eval(node.args[0], env))
        if isinstance(node, ast.Name):
            return np.pi if node.id == "pi" else env[node.id]
        return float(node.value)

    def __call__(self, t=0.0, s=0.0):
        t = np.asarray(t)
        s = np.asarray(s)
        out = np.asarray(self._eval(self._tree, {"t": t, "s": s}))
        # constant expressions must still return one value per sample
        return np.broadcast_to(out, np.broadcast_shapes(t.shape, s.shape)).copy()

    def __repr__(self):
        return f"Expression({self.source!r})"
