"""Activation-function computation graphs: parsing, rendering, evaluation."""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .operators import ARITY, BASE_TABLE, OperatorTable


class ParseError(ValueError):
    """Raised for malformed canonical strings, unknown operators, or wrong arity."""


@dataclass(frozen=True)
class ActivationGraph:
    """A node of an activation graph.

    ``kind`` is ``"x"`` for the input leaf, otherwise one of ``unary``,
    ``binary`` or ``nary`` and ``op`` names the operator.
    """

    kind: str
    op: str = ""
    args: tuple["ActivationGraph", ...] = ()

    @cached_property
    def canonical(self) -> str:
        if self.kind == "x":
            return "x"
        return f"{self.kind}_{self.op}(" + ",".join(a.canonical for a in self.args) + ")"

    def __str__(self) -> str:
        return self.canonical

    @property
    def node_count(self) -> int:
        """Number of internal (operator) nodes."""
        if self.kind == "x":
            return 0
        return 1 + sum(a.node_count for a in self.args)

    @property
    def shape(self) -> str:
        """Graph shape with operator names erased, e.g. ``binary(unary(x),unary(x))``."""
        if self.kind == "x":
            return "x"
        return f"{self.kind}(" + ",".join(a.shape for a in self.args) + ")"

    @property
    def form(self) -> str | None:
        """Name of the enumerated form this graph belongs to, if any."""
        return FORM_BY_SHAPE.get(self.shape)


X = ActivationGraph("x")


def unary(name: str, arg: ActivationGraph = X) -> ActivationGraph:
    return ActivationGraph("unary", name, (arg,))


def binary(name: str, a: ActivationGraph, b: ActivationGraph) -> ActivationGraph:
    return ActivationGraph("binary", name, (a, b))


def nary(name: str, *args: ActivationGraph) -> ActivationGraph:
    return ActivationGraph("nary", name, tuple(args))


FORMS = {
    "three_node": "binary(unary(x),unary(x))",
    "binary_left_deep": "binary(unary(unary(x)),unary(x))",
    "binary_right_deep": "binary(unary(x),unary(unary(x)))",
    "nary": "nary(unary(x),unary(x),unary(x))",
    "unary_of_binary": "unary(binary(unary(x),unary(x)))",
    "unary_chain": "unary(unary(unary(unary(x))))",
}
FORM_BY_SHAPE = {v: k for k, v in FORMS.items()}

_TOKEN = re.compile(r"\s*(?:(unary|binary|nary)_([a-z0-9_]+)\(|(x)|(,)|(\)))")


def parse(text: str, table: OperatorTable = BASE_TABLE) -> ActivationGraph:
    """Parse a canonical string such as ``binary_mul(unary_sigmoid(x),unary_identity(x))``."""
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected input at position {pos}: {text[pos:pos + 20]!r}")
        tokens.append(m.groups())
        pos = m.end()

    idx = 0

    def node() -> ActivationGraph:
        nonlocal idx
        if idx >= len(tokens):
            raise ParseError("unexpected end of input")
        kind, name, leaf, comma, close = tokens[idx]
        idx += 1
        if leaf:
            return X
        if kind is None:
            raise ParseError(f"expected an operator or 'x' in {text!r}")
        try:
            table.lookup(kind, name)
        except KeyError:
            raise ParseError(f"unknown operator {kind}_{name}") from None
        args = [node()]
        while idx < len(tokens) and tokens[idx][3]:
            idx += 1
            args.append(node())
        if idx >= len(tokens) or not tokens[idx][4]:
            raise ParseError(f"missing ')' after arguments of {kind}_{name}")
        idx += 1
        if len(args) != ARITY[kind]:
            raise ParseError(f"{kind}_{name} takes {ARITY[kind]} argument(s), got {len(args)}")
        return ActivationGraph(kind, name, tuple(args))

    g = node()
    if idx != len(tokens):
        raise ParseError(f"trailing input in {text!r}")
    return g


def render(graph: ActivationGraph) -> str:
    return graph.canonical


def evaluate(graph: ActivationGraph, inputs, table: OperatorTable = BASE_TABLE) -> np.ndarray:
    """Apply ``graph`` element-wise to ``inputs``; non-finite results are returned as is."""
    x = np.asarray(inputs, dtype=np.float64)
    with np.errstate(all="ignore"):
        return _eval(graph, x, table)


def _eval(g: ActivationGraph, x: np.ndarray, table: OperatorTable) -> np.ndarray:
    if g.kind == "x":
        return x
    vals = [_eval(a, x, table) for a in g.args]
    return table.lookup(g.kind, g.op).fn(*vals)


def _chain(partial: np.ndarray, dchild: np.ndarray) -> np.ndarray:
    # a constant child contributes exactly zero, even where the partial is inf/nan
    return np.where(dchild == 0, 0.0, partial * dchild)


def evaluate_dual(
    graph: ActivationGraph, inputs, table: OperatorTable = BASE_TABLE
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-mode evaluation returning ``(values, d values / d x)``."""
    x = np.asarray(inputs, dtype=np.float64)
    with np.errstate(all="ignore"):
        return _dual(graph, x, table)


def _dual(g: ActivationGraph, x: np.ndarray, table: OperatorTable):
    if g.kind == "x":
        return x, np.ones_like(x)
    pairs = [_dual(a, x, table) for a in g.args]
    vals = [p[0] for p in pairs]
    op = table.lookup(g.kind, g.op)
    y = op.fn(*vals)
    if g.kind == "unary":
        return y, _chain(op.grad(vals[0], y), pairs[0][1])
    partials = op.grad(*vals, y)
    d = np.zeros_like(y)
    for p, (_, dc) in zip(partials, pairs):
        d = d + _chain(p, dc)
    return y, d


def compile_graph(graph: ActivationGraph, table: OperatorTable = BASE_TABLE):
    """Return ``(f, f_dual)`` closures over ``graph`` for repeated use on arrays."""

    def f(x):
        return evaluate(graph, x, table)

    def f_dual(x):
        return evaluate_dual(graph, x, table)

    return f, f_dual


def negate(graph: ActivationGraph) -> ActivationGraph:
    """The graph computing ``-graph(x)``."""
    return unary("neg", graph)


# Named existing activation functions used as search baselines.
BASELINES = {
    "elu": unary("elu"),
    "relu": unary("relu"),
    "selu": unary("selu"),
    "sigmoid": unary("sigmoid"),
    "softplus": unary("softplus"),
    "softsign": unary("softsign"),
    "swish": unary("swish"),
    "tanh": unary("tanh"),
}
