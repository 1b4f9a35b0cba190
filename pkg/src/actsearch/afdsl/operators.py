"""Operator table for activation-function computation graphs.

Every operator works on float64 numpy arrays, never raises on bad values and
may return inf/nan.  Each operator carries a derivative rule used by the
forward-mode dual evaluation in :mod:`actsearch.afdsl.graph`.

At kinks the right-hand branch is used: ``relu'(0) = abs'(0) = 1`` and
``max``/``min`` ties differentiate through the first argument.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import special

Array = np.ndarray

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


@dataclass(frozen=True)
class UnaryOp:
    name: str
    fn: Callable[[Array], Array]
    # derivative given the input and the already computed output
    grad: Callable[[Array, Array], Array]


@dataclass(frozen=True)
class BinaryOp:
    name: str
    fn: Callable[[Array, Array], Array]
    # partial derivatives (d/da, d/db) given inputs and output
    grad: Callable[[Array, Array, Array], tuple[Array, Array]]


@dataclass(frozen=True)
class NaryOp:
    name: str
    arity: int
    fn: Callable[..., Array]
    grad: Callable[..., tuple[Array, ...]]


def _sigmoid(x):
    return special.expit(x)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _hard_sigmoid(x):
    return np.clip(0.2 * x + 0.5, 0.0, 1.0)


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _selu(x):
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def _i1e_grad(x, y):
    i0 = special.i0e(x)
    safe = np.where(x == 0, 1.0, x)
    g = i0 - y / safe - np.sign(x) * y
    return np.where(x == 0, 0.5, g)


def _ones(x):
    return np.ones_like(x)


def _zeros(x):
    return np.zeros_like(x)


_UNARY = [
    UnaryOp("zero", _zeros, lambda x, y: _zeros(x)),
    UnaryOp("one", _ones, lambda x, y: _zeros(x)),
    UnaryOp("identity", lambda x: x.copy(), lambda x, y: _ones(x)),
    UnaryOp("neg", np.negative, lambda x, y: -_ones(x)),
    UnaryOp("abs", np.abs, lambda x, y: np.where(x >= 0, 1.0, -1.0)),
    UnaryOp("reciprocal", lambda x: 1.0 / x, lambda x, y: -(y * y)),
    UnaryOp("square", np.square, lambda x, y: 2.0 * x),
    UnaryOp("exp", np.exp, lambda x, y: y),
    UnaryOp("sigmoid", _sigmoid, lambda x, y: y * (1.0 - y)),
    UnaryOp("erf", special.erf, lambda x, y: (2.0 / np.sqrt(np.pi)) * np.exp(-x * x)),
    UnaryOp("erfc", special.erfc, lambda x, y: (-2.0 / np.sqrt(np.pi)) * np.exp(-x * x)),
    UnaryOp("sinh", np.sinh, lambda x, y: np.cosh(x)),
    UnaryOp("cosh", np.cosh, lambda x, y: np.sinh(x)),
    UnaryOp("tanh", np.tanh, lambda x, y: 1.0 - y * y),
    UnaryOp("arcsinh", np.arcsinh, lambda x, y: 1.0 / np.sqrt(x * x + 1.0)),
    UnaryOp("arctan", np.arctan, lambda x, y: 1.0 / (x * x + 1.0)),
    UnaryOp("expm1", np.expm1, lambda x, y: np.exp(x)),
    UnaryOp("log_sigmoid", lambda x: -_softplus(-x), lambda x, y: _sigmoid(-x)),
    UnaryOp("relu", lambda x: np.maximum(x, 0.0), lambda x, y: np.where(x >= 0, 1.0, 0.0)),
    UnaryOp("elu", _elu, lambda x, y: np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))),
    UnaryOp(
        "selu",
        _selu,
        lambda x, y: SELU_SCALE * np.where(x >= 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0))),
    ),
    UnaryOp(
        "swish",
        lambda x: x * _sigmoid(x),
        lambda x, y: _sigmoid(x) * (1.0 + x * (1.0 - _sigmoid(x))),
    ),
    UnaryOp("softplus", _softplus, lambda x, y: _sigmoid(x)),
    UnaryOp("softsign", lambda x: x / (1.0 + np.abs(x)), lambda x, y: 1.0 / np.square(1.0 + np.abs(x))),
    UnaryOp(
        "hard_sigmoid",
        _hard_sigmoid,
        lambda x, y: np.where((x >= -2.5) & (x < 2.5), 0.2, 0.0),
    ),
    UnaryOp("bessel_i0e", special.i0e, lambda x, y: special.i1e(x) - np.sign(x) * y),
    UnaryOp("bessel_i1e", special.i1e, _i1e_grad),
]


def _pow_grad(a, b, y):
    da = b * np.power(a, b - 1.0)
    db = y * np.log(a)
    return da, db


_BINARY = [
    BinaryOp("add", np.add, lambda a, b, y: (_ones(a), _ones(b))),
    BinaryOp("sub", np.subtract, lambda a, b, y: (_ones(a), -_ones(b))),
    BinaryOp("mul", np.multiply, lambda a, b, y: (b, a)),
    BinaryOp("div", np.divide, lambda a, b, y: (1.0 / b, -y / b)),
    BinaryOp("pow", np.power, _pow_grad),
    BinaryOp(
        "max",
        np.maximum,
        lambda a, b, y: (np.where(a >= b, 1.0, 0.0), np.where(a >= b, 0.0, 1.0)),
    ),
    BinaryOp(
        "min",
        np.minimum,
        lambda a, b, y: (np.where(a <= b, 1.0, 0.0), np.where(a <= b, 0.0, 1.0)),
    ),
]


def _nary_max_grad(*args):
    y = args[-1]
    xs = args[:-1]
    taken = np.zeros_like(y, dtype=bool)
    grads = []
    for x in xs:
        hit = (x == y) & ~taken
        taken |= hit
        grads.append(hit.astype(np.float64))
    return tuple(grads)


def _nary_product_grad(*args):
    xs = args[:-1]
    grads = []
    for i in range(len(xs)):
        g = np.ones_like(xs[0])
        for j, x in enumerate(xs):
            if j != i:
                g = g * x
        grads.append(g)
    return tuple(grads)


def _fold(ufunc):
    def fn(*xs):
        out = xs[0]
        for x in xs[1:]:
            out = ufunc(out, x)
        return out

    return fn


_NARY = [
    NaryOp("sum", 3, _fold(np.add), lambda *a: tuple(_ones(a[0]) for _ in a[:-1])),
    NaryOp("product", 3, _fold(np.multiply), _nary_product_grad),
    NaryOp("max", 3, _fold(np.maximum), _nary_max_grad),
    NaryOp("min", 3, _fold(np.minimum), _nary_max_grad),
]


@dataclass(frozen=True)
class OperatorTable:
    unary: tuple[UnaryOp, ...]
    binary: tuple[BinaryOp, ...]
    nary: tuple[NaryOp, ...]

    @cached_property
    def _index(self) -> dict:
        index = {}
        for kind, ops in (("unary", self.unary), ("binary", self.binary), ("nary", self.nary)):
            for op in ops:
                index[kind, op.name] = op
        return index

    def lookup(self, kind: str, name: str):
        try:
            return self._index[kind, name]
        except KeyError:
            raise KeyError(f"{kind}_{name}") from None

    @property
    def unary_names(self) -> list[str]:
        return [op.name for op in self.unary]

    @property
    def binary_names(self) -> list[str]:
        return [op.name for op in self.binary]

    @property
    def nary_names(self) -> list[str]:
        return [op.name for op in self.nary]


BASE_TABLE = OperatorTable(tuple(_UNARY), tuple(_BINARY), tuple(_NARY))

ARITY = {"unary": 1, "binary": 2, "nary": 3}
