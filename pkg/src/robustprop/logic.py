"""Constraint formulas over network inputs ``x`` and outputs ``y``.

Formulas are built from real-valued terms and comparisons joined with And/Or.
Each node can be evaluated to a boolean, and translated into a non-negative
loss that is zero exactly when the formula holds:

    t <= t'  ->  max(t - t', 0)
    t <  t'  ->  max(t - t', 0)
    A and B  ->  loss(A) + loss(B)
    A or B   ->  loss(A) * loss(B)

All evaluation is batched: ``x`` has shape ``(B, n)`` and ``y`` shape
``(B, m)``; values come back with shape ``(B,)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Term:
    def value(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of ``value`` w.r.t. ``x`` and ``y``, row by row."""
        raise NotImplementedError

    def __sub__(self, other: Term) -> Term:
        return Sum([self, Scale(-1.0, other)])


@dataclass(frozen=True, eq=False)
class Linear(Term):
    """``x_coef . x + y_coef . y + const``; either coefficient vector may be None.

    Coefficients may also be per-row matrices and ``const`` a per-row vector,
    so one formula can describe a batch of different centers.
    """

    x_coef: np.ndarray | None = None
    y_coef: np.ndarray | None = None
    const: float | np.ndarray = 0.0

    @staticmethod
    def _dot(v, coef):
        coef = np.asarray(coef)
        return v @ coef if coef.ndim == 1 else (v * coef).sum(axis=1)

    def value(self, x, y):
        out = np.zeros(x.shape[0]) + self.const
        if self.x_coef is not None:
            out = out + self._dot(x, self.x_coef)
        if self.y_coef is not None:
            out = out + self._dot(y, self.y_coef)
        return out

    def grad(self, x, y):
        gx = np.zeros_like(x) if self.x_coef is None else np.broadcast_to(self.x_coef, x.shape).copy()
        gy = np.zeros_like(y) if self.y_coef is None else np.broadcast_to(self.y_coef, y.shape).copy()
        return gx, gy

    def coefficients(self, n: int, m: int) -> tuple[np.ndarray, np.ndarray, float]:
        ax = np.zeros(n) if self.x_coef is None else np.asarray(self.x_coef, dtype=float)
        ay = np.zeros(m) if self.y_coef is None else np.asarray(self.y_coef, dtype=float)
        if ax.ndim != 1 or ay.ndim != 1 or np.ndim(self.const) != 0:
            raise TypeError("row form needs a single (unbatched) linear term")
        return ax, ay, float(self.const)


def const(c: float) -> Linear:
    return Linear(const=float(c))


def input_var(i: int, n: int, scale: float = 1.0, offset=0.0) -> Linear:
    coef = np.zeros(n)
    coef[i] = scale
    return Linear(x_coef=coef, const=offset)


def output_var(j, m: int, scale: float = 1.0, offset=0.0) -> Linear:
    """Output coordinate ``j``; ``j`` may be an array of per-row indices."""
    if np.ndim(j) == 0:
        coef = np.zeros(m)
        coef[int(j)] = scale
    else:
        j = np.asarray(j, dtype=np.int64)
        coef = np.zeros((j.shape[0], m))
        coef[np.arange(j.shape[0]), j] = scale
    return Linear(y_coef=coef, const=offset)


@dataclass(frozen=True, eq=False)
class AbsDiff(Term):
    a: Term
    b: Term

    def value(self, x, y):
        return np.abs(self.a.value(x, y) - self.b.value(x, y))

    def grad(self, x, y):
        s = np.sign(self.a.value(x, y) - self.b.value(x, y))[:, None]
        ax, ay = self.a.grad(x, y)
        bx, by = self.b.grad(x, y)
        return s * (ax - bx), s * (ay - by)


@dataclass(frozen=True, eq=False)
class Max(Term):
    terms: tuple

    def value(self, x, y):
        return np.max([t.value(x, y) for t in self.terms], axis=0)

    def grad(self, x, y):
        pick = np.argmax([t.value(x, y) for t in self.terms], axis=0)
        gx, gy = np.zeros_like(x), np.zeros_like(y)
        for k, t in enumerate(self.terms):
            rows = pick == k
            if rows.any():
                tx, ty = t.grad(x, y)
                gx[rows], gy[rows] = tx[rows], ty[rows]
        return gx, gy


@dataclass(frozen=True, eq=False)
class Sum(Term):
    terms: tuple

    def value(self, x, y):
        return np.sum([t.value(x, y) for t in self.terms], axis=0)

    def grad(self, x, y):
        gx, gy = np.zeros_like(x), np.zeros_like(y)
        for t in self.terms:
            tx, ty = t.grad(x, y)
            gx += tx
            gy += ty
        return gx, gy


@dataclass(frozen=True, eq=False)
class Scale(Term):
    k: float
    term: Term

    def value(self, x, y):
        return self.k * self.term.value(x, y)

    def grad(self, x, y):
        gx, gy = self.term.grad(x, y)
        return self.k * gx, self.k * gy


@dataclass(frozen=True, eq=False)
class EuclideanNorm(Term):
    terms: tuple

    def value(self, x, y):
        return np.sqrt(np.sum([t.value(x, y) ** 2 for t in self.terms], axis=0))

    def grad(self, x, y):
        norm = self.value(x, y)
        safe = np.where(norm > 0, norm, 1.0)[:, None]
        gx, gy = np.zeros_like(x), np.zeros_like(y)
        for t in self.terms:
            v = t.value(x, y)[:, None]
            tx, ty = t.grad(x, y)
            gx += v * tx
            gy += v * ty
        return gx / safe, gy / safe


# -- formulas ---------------------------------------------------------------

_SMALLEST = np.nextafter(0.0, 1.0)


class Formula:
    def holds(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def loss(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def loss_grad(self, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(loss, d loss/dx, d loss/dy)`` for every row."""
        raise NotImplementedError

    def negate(self) -> Formula:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Comparison(Formula):
    """``lhs <= rhs``, or ``lhs < rhs`` when ``strict``."""

    lhs: Term
    rhs: Term
    strict: bool = False

    def margin(self, x, y):
        return self.lhs.value(x, y) - self.rhs.value(x, y)

    def holds(self, x, y):
        d = self.margin(x, y)
        return d < 0 if self.strict else d <= 0

    def loss(self, x, y):
        return np.maximum(self.margin(x, y), 0.0)

    def loss_grad(self, x, y):
        d = self.margin(x, y)
        active = (d > 0)[:, None]
        lx, ly = self.lhs.grad(x, y)
        rx, ry = self.rhs.grad(x, y)
        return np.maximum(d, 0.0), active * (lx - rx), active * (ly - ry)

    def negate(self):
        return Comparison(self.rhs, self.lhs, strict=not self.strict)

    def as_row(self, n: int, m: int) -> tuple[np.ndarray, np.ndarray, float]:
        """Coefficients ``(ax, ay, c)`` with the comparison meaning ``ax.x + ay.y + c <= 0``
        (``< 0`` when strict). Only defined for linear sides."""
        if not (isinstance(self.lhs, Linear) and isinstance(self.rhs, Linear)):
            raise TypeError("only comparisons between linear terms have a row form")
        lx, ly, lc = self.lhs.coefficients(n, m)
        rx, ry, rc = self.rhs.coefficients(n, m)
        return lx - rx, ly - ry, lc - rc


def Leq(lhs: Term, rhs: Term) -> Comparison:
    return Comparison(lhs, rhs, strict=False)


def Lt(lhs: Term, rhs: Term) -> Comparison:
    return Comparison(lhs, rhs, strict=True)


@dataclass(frozen=True, eq=False)
class And(Formula):
    children: tuple

    def holds(self, x, y):
        out = np.ones(x.shape[0], dtype=bool)
        for c in self.children:
            out &= c.holds(x, y)
        return out

    def loss(self, x, y):
        return np.sum([c.loss(x, y) for c in self.children], axis=0)

    def loss_grad(self, x, y):
        total = np.zeros(x.shape[0])
        gx, gy = np.zeros_like(x), np.zeros_like(y)
        for c in self.children:
            l, cx, cy = c.loss_grad(x, y)
            total += l
            gx += cx
            gy += cy
        return total, gx, gy

    def negate(self):
        return Or(tuple(c.negate() for c in self.children))


@dataclass(frozen=True, eq=False)
class Or(Formula):
    children: tuple

    def holds(self, x, y):
        out = np.zeros(x.shape[0], dtype=bool)
        for c in self.children:
            out |= c.holds(x, y)
        return out

    @staticmethod
    def _product(losses):
        # keep loss > 0 whenever every disjunct fails, even if the product underflows
        total = np.prod(losses, axis=0)
        return np.where((losses > 0).all(axis=0), np.maximum(total, _SMALLEST), total)

    def loss(self, x, y):
        return self._product(np.array([c.loss(x, y) for c in self.children]))

    def loss_grad(self, x, y):
        parts = [c.loss_grad(x, y) for c in self.children]
        losses = np.array([p[0] for p in parts])
        total = self._product(losses)
        gx, gy = np.zeros_like(x), np.zeros_like(y)
        for k, (_, cx, cy) in enumerate(parts):
            others = np.prod(np.delete(losses, k, axis=0), axis=0)[:, None]
            gx += others * cx
            gy += others * cy
        return total, gx, gy

    def negate(self):
        return And(tuple(c.negate() for c in self.children))


@dataclass(frozen=True, eq=False)
class Not(Formula):
    child: Formula

    def holds(self, x, y):
        return ~self.child.holds(x, y)

    def loss(self, x, y):
        return self.child.negate().loss(x, y)

    def loss_grad(self, x, y):
        return self.child.negate().loss_grad(x, y)

    def negate(self):
        return self.child


def distance_term(var: str, ref, metric: str, dim: int) -> Term:
    """Distance between the input (``var='x'``) or output (``'y'``) vector and ``ref``.

    ``ref`` is one vector, or a ``(B, dim)`` batch of per-row references.
    """
    ref = np.asarray(ref, dtype=float)
    make = input_var if var == "x" else output_var
    diffs = [make(i, dim, offset=-ref[..., i]) for i in range(dim)]
    if metric == "linf":
        return Max(tuple(AbsDiff(d, const(0.0)) for d in diffs))
    if metric == "l1":
        return Sum(tuple(AbsDiff(d, const(0.0)) for d in diffs))
    if metric == "l2":
        return EuclideanNorm(tuple(diffs))
    raise ValueError(f"unknown metric {metric!r}")
