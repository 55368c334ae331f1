"""Closed-form periodic expressions for coefficients and boundary data.

Grammar: numbers, ``pi``, the coordinates ``y1 .. yd``, the operators
``+ - * /`` and integer powers, and ``sin``/``cos`` applied to arguments of the
form ``2*pi*(k . y) + c`` with integer ``k``.  Coordinates may only appear
inside trigonometric arguments, which makes every accepted expression exactly
1-periodic in each coordinate.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError

_FUNCS = {"sin": np.sin, "cos": np.cos}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def _coord_index(name: str, dim: int) -> int | None:
    if len(name) >= 2 and name[0] in "yx" and name[1:].isdigit():
        k = int(name[1:])
        if 1 <= k <= dim:
            return k - 1
    return None


def _uses_coords(node: ast.AST, dim: int) -> bool:
    return any(isinstance(n, ast.Name) and _coord_index(n.id, dim) is not None
               for n in ast.walk(node))


@dataclass(frozen=True)
class Expression:
    """A scalar periodic expression compiled from text."""

    text: str
    dim: int
    _tree: ast.AST = field(repr=False, compare=False)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """Evaluate at points ``y`` of shape ``(dim, ...)``."""
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.dim:
            raise DataError(f"expression '{self.text}' expects {self.dim} coordinates")
        out = _eval(self._tree, y)
        return np.broadcast_to(np.asarray(out, dtype=float), y.shape[1:]).copy()


def _eval(node: ast.AST, y: np.ndarray):
    if isinstance(node, ast.Expression):
        return _eval(node.body, y)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id == "pi":
            return math.pi
        return y[int(node.id[1:]) - 1]
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, y)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        a, b = _eval(node.left, y), _eval(node.right, y)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        if isinstance(node.op, ast.Div):
            return a / b
        return a ** b
    if isinstance(node, ast.Call):
        return _FUNCS[node.func.id](_eval(node.args[0], y))
    raise AssertionError("unvalidated node")


def _validate(node: ast.AST, dim: int, text: str, inside_trig: bool = False) -> None:
    def fail(msg: str) -> None:
        col = getattr(node, "col_offset", 0) + 1
        raise ConfigError(f"{msg} in expression '{text}'", column=col)

    if isinstance(node, ast.Expression):
        _validate(node.body, dim, text)
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
            fail("non-numeric constant")
    elif isinstance(node, ast.Name):
        if node.id == "pi":
            return
        if _coord_index(node.id, dim) is None:
            fail(f"unknown name '{node.id}'")
        if not inside_trig:
            fail(f"coordinate '{node.id}' outside a trigonometric argument")
    elif isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            fail("unsupported unary operator")
        _validate(node.operand, dim, text, inside_trig)
    elif isinstance(node, ast.BinOp):
        if not isinstance(node.op, _BINOPS):
            fail("unsupported operator")
        if isinstance(node.op, ast.Pow):
            exp = node.right
            if _uses_coords(exp, dim) or not _is_nonneg_int(exp):
                fail("powers must have constant non-negative integer exponents")
        _validate(node.left, dim, text, inside_trig)
        _validate(node.right, dim, text, inside_trig)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
            fail("only sin and cos are allowed")
        if len(node.args) != 1 or node.keywords:
            fail("trigonometric functions take one argument")
        if inside_trig:
            fail("nested trigonometric functions")
        _validate(node.args[0], dim, text, inside_trig=True)
        _check_integer_frequency(node.args[0], dim, text)
    else:
        fail(f"unsupported syntax {type(node).__name__}")


def _is_nonneg_int(node: ast.AST) -> bool:
    try:
        v = _eval(node, np.zeros((1, 1)))
    except Exception:
        return False
    return float(v) >= 0 and float(v) == int(v)


def _check_integer_frequency(arg: ast.AST, dim: int, text: str) -> None:
    rng = np.random.default_rng(0)
    base = float(np.asarray(_eval(arg, np.zeros((dim, 1)))).ravel()[0])
    slopes = np.empty(dim)
    for a in range(dim):
        e = np.zeros((dim, 1))
        e[a] = 1.0
        slopes[a] = float(np.asarray(_eval(arg, e)).ravel()[0]) - base
    pts = rng.uniform(-3, 3, size=(dim, 16))
    affine = base + slopes @ pts
    if not np.allclose(np.broadcast_to(_eval(arg, pts), (16,)), affine, rtol=1e-10, atol=1e-9):
        raise ConfigError(f"trigonometric argument is not affine in y in '{text}'")
    freq = slopes / (2 * math.pi)
    if not np.allclose(freq, np.round(freq), atol=1e-9):
        raise ConfigError(f"trigonometric argument has non-integer frequency in '{text}'")


def parse_expression(text: str, dim: int) -> Expression:
    """Compile a scalar expression; raises ConfigError on anything non-periodic."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"syntax error in expression '{text}'", column=exc.offset or 1) from None
    if isinstance(tree.body, ast.Tuple):
        raise ConfigError(f"expected a scalar expression, got a tuple: '{text}'")
    _validate(tree, dim, text)
    return Expression(text.strip(), dim, tree)


def parse_vector_expression(text: str, dim: int) -> list[Expression]:
    """Compile a comma-separated list of ``dim`` scalar expressions."""
    parts = _split_top_level(text)
    if len(parts) != dim:
        raise ConfigError(f"expected {dim} comma-separated components, got {len(parts)}: '{text}'")
    return [parse_expression(p, dim) for p in parts]


def _split_top_level(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip() for p in parts]
