"""Second-order forward-mode differentiation of chart expressions.

Jets carry value, gradient and Hessian with respect to all 4n chart
coordinates in the fixed ordering x1..x{2n}, y1..y{2n}.  Propagation rules
are exact (no truncation error); the Hessian is symmetric to the bit by
construction.  Evaluation is vectorised over batches of points and memoises
shared subtrees, so large derived DAGs cost one visit per unique node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import BinOp, Call, Neg, Node, Num, Pow, Var, children, to_source

__all__ = ["ChartPoint", "Jet2", "EvaluationDomainError",
           "eval_jet2", "eval_scalar", "delta_derivative"]

MIN_FIBER_NORM = 1e-6


class EvaluationDomainError(ValueError):
    """An expression left its domain (log/sqrt/division) at some point."""


@dataclass(frozen=True)
class ChartPoint:
    """A point (x, y) of the slit tangent chart; y stays off the zero section."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.x.ndim != 1 or self.x.shape != self.y.shape:
            raise ValueError("x and y must be 1-d arrays of equal length")
        ynorm = float(np.linalg.norm(self.y))
        if ynorm < MIN_FIBER_NORM:
            raise ValueError(
                f"fiber coordinates too close to the zero section (|y|={ynorm:.2e})")

    @property
    def m(self) -> int:
        """Number of base coordinates (2n)."""
        return self.x.shape[0]

    @property
    def coords(self) -> np.ndarray:
        """All 4n coordinates, x block then y block."""
        return np.concatenate([self.x, self.y])


@dataclass(frozen=True)
class Jet2:
    """Value, gradient (4n,) and symmetric Hessian (4n, 4n) at one point."""

    value: float
    grad: np.ndarray
    hess: np.ndarray


def _postorder(roots: Sequence[Node]) -> list[Node]:
    seen: set[int] = set()
    order: list[Node] = []
    stack: list[tuple[Node, bool]] = [(r, False) for r in roots]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in children(node):
            stack.append((child, False))
    return order


def _var_slot(node: Var, dim: int) -> int:
    m = dim // 2
    return node.index - 1 if node.kind == "x" else m + node.index - 1


def _domain(node: Node, mask: np.ndarray, what: str) -> None:
    if mask.any():
        raise EvaluationDomainError(f"{what} in subexpression '{to_source(node)}'")


def eval_jets(roots: Sequence[Node], coords: np.ndarray, order: int = 2):
    """Evaluate several expressions over a batch of points in one pass.

    ``coords`` has shape (P, 4n).  Returns a list of (value, grad, hess)
    triples with shapes (P,), (P, 4n), (P, 4n, 4n); grad/hess are None for
    lower ``order``.  Shared subtrees across ``roots`` are evaluated once.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2:
        raise ValueError("coords must have shape (P, 4n)")
    P, dim = coords.shape
    zero_g = np.zeros((P, dim))
    zero_h = np.zeros((P, dim, dim))
    zero_g.setflags(write=False)
    zero_h.setflags(write=False)

    memo: dict[int, tuple] = {}
    for nd in _postorder(roots):
        if isinstance(nd, Num):
            res = (np.full(P, nd.value), zero_g, zero_h)
        elif isinstance(nd, Var):
            slot = _var_slot(nd, dim)
            g = zero_g
            if order >= 1:
                g = np.zeros((P, dim))
                g[:, slot] = 1.0
            res = (coords[:, slot].copy(), g, zero_h)
        elif isinstance(nd, Neg):
            av, ag, ah = memo[id(nd.arg)]
            res = (-av,
                   -ag if order >= 1 else None,
                   -ah if order >= 2 else None)
        elif isinstance(nd, BinOp):
            av, ag, ah = memo[id(nd.left)]
            bv, bg, bh = memo[id(nd.right)]
            if nd.op == "+":
                res = (av + bv,
                       ag + bg if order >= 1 else None,
                       ah + bh if order >= 2 else None)
            elif nd.op == "-":
                res = (av - bv,
                       ag - bg if order >= 1 else None,
                       ah - bh if order >= 2 else None)
            elif nd.op == "*":
                val = av * bv
                g = h = None
                if order >= 1:
                    g = av[:, None] * bg + bv[:, None] * ag
                if order >= 2:
                    cross = np.einsum("pi,pj->pij", ag, bg)
                    h = (av[:, None, None] * bh + bv[:, None, None] * ah
                         + cross + cross.swapaxes(1, 2))
                res = (val, g, h)
            else:  # "/"
                _domain(nd, bv == 0.0, "division by zero")
                val = av / bv
                g = h = None
                if order >= 1:
                    g = (ag - val[:, None] * bg) / bv[:, None]
                if order >= 2:
                    cross = np.einsum("pi,pj->pij", g, bg)
                    h = (ah - val[:, None, None] * bh
                         - cross - cross.swapaxes(1, 2)) / bv[:, None, None]
                res = (val, g, h)
        elif isinstance(nd, Pow):
            av, ag, ah = memo[id(nd.base)]
            k = nd.exponent
            if k == 0:
                res = (np.ones(P), zero_g, zero_h)
            elif k == 1:
                res = (av.copy(), ag, ah)
            else:
                if k < 0:
                    _domain(nd, av == 0.0, "zero base with negative exponent")
                # av**(k-2) is safe: k >= 2 keeps it polynomial, k < 0 is guarded
                p2 = av ** (k - 2)
                p1 = p2 * av
                val = p1 * av
                g = h = None
                if order >= 1:
                    g = (k * p1)[:, None] * ag
                if order >= 2:
                    cross = np.einsum("pi,pj->pij", ag, ag)
                    h = ((k * p1)[:, None, None] * ah
                         + (k * (k - 1) * p2)[:, None, None] * cross)
                res = (val, g, h)
        elif isinstance(nd, Call):
            av, ag, ah = memo[id(nd.arg)]
            g = h = None
            if nd.func == "sin":
                val, d1, d2 = np.sin(av), np.cos(av), -np.sin(av)
            elif nd.func == "cos":
                val, d1, d2 = np.cos(av), -np.sin(av), -np.cos(av)
            elif nd.func == "exp":
                val = np.exp(av)
                d1 = d2 = val
            elif nd.func == "log":
                _domain(nd, av <= 0.0, "log of a non-positive value")
                val = np.log(av)
                d1 = 1.0 / av
                d2 = -d1 * d1
            else:  # sqrt
                _domain(nd, av < 0.0, "sqrt of a negative value")
                if order >= 1:
                    _domain(nd, av == 0.0, "sqrt derivative at zero")
                val = np.sqrt(av)
                if order >= 1:
                    d1 = 0.5 / val
                    d2 = -0.5 * d1 / av
                else:
                    d1 = d2 = None
            if order >= 1:
                g = d1[:, None] * ag
            if order >= 2:
                cross = np.einsum("pi,pj->pij", ag, ag)
                h = d1[:, None, None] * ah + d2[:, None, None] * cross
            res = (val, g, h)
        else:
            raise TypeError(f"not an expression node: {nd!r}")
        memo[id(nd)] = res

    return [memo[id(r)] for r in roots]


def eval_values(roots: Sequence[Node], coords: np.ndarray) -> list[np.ndarray]:
    """Plain batched evaluation: one (P,) array per expression."""
    return [v for v, _, _ in eval_jets(roots, coords, order=0)]


def eval_jet2(f: Node, p: ChartPoint) -> Jet2:
    """Full second-order jet of ``f`` at one chart point."""
    (val, grad, hess), = eval_jets([f], p.coords[None, :], order=2)
    return Jet2(float(val[0]), grad[0], hess[0])


def eval_scalar(f: Node, p: ChartPoint) -> float:
    (val, _, _), = eval_jets([f], p.coords[None, :], order=0)
    return float(val[0])


def delta_derivative(f: Node, N: np.ndarray, i: int, p: ChartPoint) -> float:
    """Derivative of ``f`` along the i-th adapted horizontal frame field,
    the x{i} partial minus the nonlinear-connection combination of fiber
    partials.  ``N[j, k]`` holds the coefficient with upper index j and
    lower index k, evaluated at ``p``; ``i`` is 1-based.
    """
    m = p.m
    if not 1 <= i <= m:
        raise IndexError(f"frame index {i} out of range 1..{m}")
    N = np.asarray(N, dtype=float)
    (val, grad, _), = eval_jets([f], p.coords[None, :], order=1)
    dx = grad[0, i - 1]
    dy = grad[0, m:]
    return float(dx - N[:, i - 1] @ dy)
