"""Nonlinear connections, adapted frames and their Lie brackets.

The horizontal distribution is encoded by coefficients with one upper
(fiber) and one lower (base) index.  The canonical choice is the geodesic
spray connection generated by the metric; user tables from a config file
are accepted as-is.  Either way the coefficients are expression trees, so
their own derivatives (needed for the frame bracket curvature) come out of
the same exact differentiation machinery as everything else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr
from .calculus import ChartPoint, eval_jets
from .expr import FieldSet, Node, ast_sum, differentiate

__all__ = ["NonlinearConnection", "FrameBrackets", "CANONICAL_SPRAY",
           "USER_SUPPLIED", "canonical_connection", "user_connection",
           "connection_for", "frame_brackets", "project"]

CANONICAL_SPRAY = "canonical_spray"
USER_SUPPLIED = "user_supplied"


@dataclass(eq=False)
class NonlinearConnection:
    """Coefficient table of a horizontal distribution.

    ``coeff_asts[j][i]`` is the expression for the coefficient with upper
    (fiber) index j+1 and lower (base) index i+1.
    """

    source: str
    n: int
    coeff_asts: list[list[Node]]
    _flat: list[Node] = field(init=False, repr=False)

    def __post_init__(self):
        m = 2 * self.n
        if len(self.coeff_asts) != m or any(len(r) != m for r in self.coeff_asts):
            raise ValueError(f"expected a {m}x{m} coefficient table")
        self._flat = [self.coeff_asts[j][i] for j in range(m) for i in range(m)]

    @property
    def m(self) -> int:
        return 2 * self.n

    def is_zero(self) -> bool:
        return all(isinstance(nd, expr.Num) and nd.value == 0.0 for nd in self._flat)

    def evaluate(self, coords: np.ndarray):
        """Coefficients and their first partials over points (P, 4n).

        Returns N (P, m, m) with N[p, j, i] the coefficient value, plus
        dN_dx and dN_dy of shape (P, m, m, m) with the derivative index
        first: dN_dx[p, k, j, i] is the x{k+1}-partial of N[j, i].
        """
        coords = np.asarray(coords, dtype=float)
        m = self.m
        P = coords.shape[0]
        N = np.empty((P, m, m))
        dNdx = np.empty((P, m, m, m))
        dNdy = np.empty((P, m, m, m))
        jets = eval_jets(self._flat, coords, order=1)
        pos = 0
        for j in range(m):
            for i in range(m):
                val, grad, _ = jets[pos]
                pos += 1
                N[:, j, i] = val
                dNdx[:, :, j, i] = grad[:, :m]
                dNdy[:, :, j, i] = grad[:, m:]
        return N, dNdx, dNdy


@dataclass
class FrameBrackets:
    """Lie brackets of the adapted frame at one point.

    ``R[k, i, j]`` gives the bracket of the i-th and j-th horizontal frame
    fields as minus R along the k-th fiber frame field; it is skew in
    (i, j).  ``dN[k, i, j]`` gives the bracket of the i-th horizontal with
    the j-th fiber frame field along the k-th fiber frame field.  Brackets
    of two fiber frame fields vanish identically.
    """

    R: np.ndarray
    dN: np.ndarray


# ---------------------------------------------------------------------------
# Canonical (geodesic spray) connection
# ---------------------------------------------------------------------------

def _minor_det(gm, rows: tuple[int, ...], cols: tuple[int, ...], memo) -> Node:
    """Determinant of the submatrix gm[rows][cols] as an expression DAG.

    First-row expansion with memoised sub-minors keeps the DAG compact for
    the small matrix sizes used here.
    """
    key = (rows, cols)
    hit = memo.get(key)
    if hit is not None:
        return hit
    if len(rows) == 1:
        out = gm[rows[0]][cols[0]]
    else:
        r0 = rows[0]
        rest = rows[1:]
        terms = []
        for pos, c in enumerate(cols):
            sub_cols = cols[:pos] + cols[pos + 1:]
            minor = _minor_det(gm, rest, sub_cols, memo)
            term = expr._mul(gm[r0][c], minor)
            terms.append(term if pos % 2 == 0 else expr._neg(term))
        out = ast_sum(terms)
    memo[key] = out
    return out


def _adjugate_and_det(gm: list[list[Node]]):
    """Adjugate matrix and determinant of a symmetric expression matrix."""
    m = len(gm)
    memo: dict = {}
    full = tuple(range(m))
    det = _minor_det(gm, full, full, memo)
    adj = [[None] * m for _ in range(m)]
    for i in range(m):
        rows = full[:i] + full[i + 1:]
        for j in range(m):
            cols = full[:j] + full[j + 1:]
            minor = _minor_det(gm, rows, cols, memo) if m > 1 else expr.ONE
            signed = minor if (i + j) % 2 == 0 else expr._neg(minor)
            adj[j][i] = signed     # adjugate transposes the cofactor matrix
    return adj, det


def spray_coefficients(fs: FieldSet) -> list[Node]:
    """Geodesic spray coefficients as expression DAGs.

    Component i is a quarter of the inverse-metric contraction of
    y^j d2F*/dy^i dx^j - dF*/dx^i, with the inverse realised as
    adjugate over determinant so the result stays inside the expression
    language.
    """
    m = fs.m
    gm = fs.metric_asts()
    adj, det = _adjugate_and_det(gm)
    dfdx = [differentiate(fs.fstar, "x", k + 1) for k in range(m)]
    dfdy = [differentiate(fs.fstar, "y", k + 1) for k in range(m)]
    b = []
    for k in range(m):
        terms = [expr._mul(expr.Var("y", j + 1), differentiate(dfdy[k], "x", j + 1))
                 for j in range(m)]
        b.append(expr._sub(ast_sum(terms), dfdx[k]))
    sprays = []
    for i in range(m):
        contraction = ast_sum([expr._mul(adj[i][k], b[k]) for k in range(m)])
        sprays.append(expr._mul(expr.Num(0.25), expr._div(contraction, det)))
    return sprays


def canonical_connection(fs: FieldSet) -> NonlinearConnection:
    """Connection coefficients of the geodesic spray: the fiber derivative
    of each spray component.  Degeneracy of the metric surfaces when the
    coefficients are evaluated, via the metric pipeline."""
    cached = fs._derived.get("canonical_nlconn")
    if cached is not None:
        return cached
    m = fs.m
    sprays = fs._derived.get("spray_asts")
    if sprays is None:
        sprays = spray_coefficients(fs)
        fs._derived["spray_asts"] = sprays
    coeffs = [[differentiate(sprays[i], "y", j + 1) for j in range(m)]
              for i in range(m)]
    nc = NonlinearConnection(source=CANONICAL_SPRAY, n=fs.n, coeff_asts=coeffs)
    fs._derived["canonical_nlconn"] = nc
    return nc


def user_connection(fs: FieldSet) -> NonlinearConnection:
    if fs.n_coeffs is None:
        raise ValueError("field set has no user connection table")
    return NonlinearConnection(source=USER_SUPPLIED, n=fs.n, coeff_asts=fs.n_coeffs)


def connection_for(fs: FieldSet) -> NonlinearConnection:
    """User table when the field set has one, canonical spray otherwise."""
    return user_connection(fs) if fs.n_coeffs is not None else canonical_connection(fs)


# ---------------------------------------------------------------------------
# Frame brackets and projectors
# ---------------------------------------------------------------------------

def brackets_from_values(N: np.ndarray, dNdx: np.ndarray, dNdy: np.ndarray) -> FrameBrackets:
    """Assemble bracket data from coefficient values and partials at one point."""
    # horizontal derivative of the coefficients: x-partial minus the
    # connection contraction of y-partials
    deltaN = dNdx - np.einsum("li,lkj->ikj", N, dNdy)   # [i, k, j]
    R = deltaN.transpose(1, 0, 2) - deltaN.transpose(1, 2, 0)
    # dNdy[k, j_up, i_low] holds the y{k}-partial of coefficient (j_up, i_low);
    # the bracket of the i-th horizontal with the j-th fiber frame field
    # needs it reindexed as [up, i, j].
    dN = dNdy.transpose(1, 2, 0)
    return FrameBrackets(R=R, dN=dN)


def frame_brackets(nc: NonlinearConnection, p: ChartPoint) -> FrameBrackets:
    """Adapted-frame Lie brackets at ``p``, from exact coefficient jets."""
    N, dNdx, dNdy = nc.evaluate(p.coords[None, :])
    return brackets_from_values(N[0], dNdx[0], dNdy[0])


def project(v: np.ndarray, which: str) -> np.ndarray:
    """Zero out the complementary block of an adapted-frame component vector.

    ``which`` is "h" (keep the first, horizontal half) or "v" (keep the
    second, fiber half); works on any array whose last axis has length 4n.
    """
    v = np.asarray(v, dtype=float)
    dim = v.shape[-1]
    if dim % 2 != 0:
        raise ValueError("component vectors must have even length 4n")
    half = dim // 2
    out = v.copy()
    if which == "h":
        out[..., half:] = 0.0
    elif which == "v":
        out[..., :half] = 0.0
    else:
        raise ValueError("which must be 'h' or 'v'")
    return out
