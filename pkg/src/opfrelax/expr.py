"""Affine expressions over named scalar variables and the constraint shapes built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

Number = Union[int, float]


class Affine:
    """``sum(coef * var) + const`` with string variable names."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping[str, float] | None = None, const: float = 0.0):
        self.terms: dict[str, float] = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def of(x: "Affine | str | Number") -> "Affine":
        if isinstance(x, Affine):
            return x
        if isinstance(x, str):
            return Affine({x: 1.0})
        return Affine(const=float(x))

    def copy(self) -> "Affine":
        return Affine(self.terms, self.const)

    def __add__(self, other):
        other = Affine.of(other)
        out = self.copy()
        for k, v in other.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        out.const += other.const
        return out

    __radd__ = __add__

    def __neg__(self):
        return Affine({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-Affine.of(other))

    def __rsub__(self, other):
        return Affine.of(other) - self

    def __mul__(self, s: Number):
        s = float(s)
        return Affine({k: v * s for k, v in self.terms.items()}, self.const * s)

    __rmul__ = __mul__

    def __truediv__(self, s: Number):
        return self * (1.0 / s)

    def value(self, point: Mapping[str, float]) -> float:
        return self.const + sum(v * point[k] for k, v in self.terms.items())

    def variables(self) -> set[str]:
        return {k for k, v in self.terms.items() if v != 0}

    def __repr__(self):
        body = " + ".join(f"{v:g}*{k}" for k, v in self.terms.items())
        return f"Affine({body or '0'} + {self.const:g})"


def lin(*pairs: tuple[float, str], const: float = 0.0) -> Affine:
    out = Affine(const=const)
    for c, name in pairs:
        out.terms[name] = out.terms.get(name, 0.0) + float(c)
    return out


@dataclass
class Linear:
    """``expr <= 0``, ``expr == 0`` or ``expr >= 0``."""

    expr: Affine
    sense: str  # "<=", "==", ">="
    tag: str = ""

    def violation(self, point: Mapping[str, float]) -> float:
        v = self.expr.value(point)
        if self.sense == "<=":
            return max(v, 0.0)
        if self.sense == ">=":
            return max(-v, 0.0)
        return abs(v)


@dataclass
class SOC:
    """``||args|| <= head``."""

    head: Affine
    args: list[Affine]
    tag: str = ""

    def violation(self, point: Mapping[str, float]) -> float:
        norm = math.sqrt(sum(a.value(point) ** 2 for a in self.args))
        return max(norm - self.head.value(point), 0.0)


@dataclass
class RSOC:
    """``2*u*v >= ||args||**2`` with ``u, v >= 0``."""

    u: Affine
    v: Affine
    args: list[Affine]
    tag: str = ""

    def violation(self, point: Mapping[str, float]) -> float:
        u, v = self.u.value(point), self.v.value(point)
        sq = sum(a.value(point) ** 2 for a in self.args)
        return max(sq - 2 * u * v, -u, -v, 0.0)


@dataclass
class PSD:
    """Symmetric matrix of affine entries constrained positive semidefinite.

    Only the upper triangle is stored: ``entries[(i, j)]`` for ``i <= j``.
    """

    dim: int
    entries: dict[tuple[int, int], Affine]
    tag: str = ""

    def matrix(self, point: Mapping[str, float]):
        import numpy as np

        m = np.zeros((self.dim, self.dim))
        for (i, j), e in self.entries.items():
            m[i, j] = m[j, i] = e.value(point)
        return m

    def violation(self, point: Mapping[str, float]) -> float:
        import numpy as np

        return max(-float(np.linalg.eigvalsh(self.matrix(point))[0]), 0.0)


Constraint = Union[Linear, SOC, RSOC, PSD]


def constraint_variables(c: Constraint) -> set[str]:
    if isinstance(c, Linear):
        return c.expr.variables()
    if isinstance(c, SOC):
        out = c.head.variables()
        for a in c.args:
            out |= a.variables()
        return out
    if isinstance(c, RSOC):
        out = c.u.variables() | c.v.variables()
        for a in c.args:
            out |= a.variables()
        return out
    out: set[str] = set()
    for e in c.entries.values():
        out |= e.variables()
    return out


def square_le(lhs: Affine, hat: Affine, tag: str = "") -> RSOC:
    """``lhs**2 <= hat`` as a rotated cone."""
    return RSOC(hat, Affine(const=0.5), [lhs], tag)


@dataclass
class AffineCutSet:
    """A bag of constraints produced by one envelope or cut generator."""

    cuts: list[Constraint] = field(default_factory=list)
    declared: set[str] = field(default_factory=set)

    def add(self, c: Constraint) -> None:
        self.cuts.append(c)

    def extend(self, cs: Iterable[Constraint]) -> None:
        self.cuts.extend(cs)

    def variables(self) -> set[str]:
        out: set[str] = set()
        for c in self.cuts:
            out |= constraint_variables(c)
        return out

    def max_violation(self, point: Mapping[str, float]) -> float:
        return max((c.violation(point) for c in self.cuts), default=0.0)

    def __len__(self) -> int:
        return len(self.cuts)

    def __iter__(self):
        return iter(self.cuts)
