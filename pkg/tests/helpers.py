"""Shared builders and finite-difference oracles for the test suite."""

from __future__ import annotations

import numpy as np

from finslerchart import FieldSet, parse_expression, validate_fieldset
from finslerchart.calculus import eval_jets, eval_values
from finslerchart.cli import random_skew_table, sample_points
from finslerchart.expr import BinOp, Num, Var
from finslerchart.nlconn import USER_SUPPLIED, NonlinearConnection


def metric_source(name: str, n: int) -> str:
    m = 2 * n
    quad = " + ".join(f"y{i}^2" for i in range(1, m + 1))
    quart = " + ".join(f"y{i}^4" for i in range(1, m + 1))
    signed = "".join(f"{' - ' if i % 2 == 0 else (' + ' if i > 1 else '')}y{i}^2"
                     for i in range(1, m + 1))
    sources = {
        "flat": quad,
        "riemann_exp": f"exp(x1) * ({quad})",
        "pseudo_exp": f"exp(x1) * ({signed})",
        "quartic": f"({quart}) / ({quad})",
        "finsler_mix": f"exp(x1) * ({quad} + 0.3*({quart})/({quad}))",
        "nonhomogeneous": f"{quad} + y1",
    }
    return sources[name]


def make_fieldset(name: str, n: int, s_coeffs=None, t_coeffs=None,
                  n_coeffs=None) -> FieldSet:
    fs = FieldSet(n=n, fstar=parse_expression(metric_source(name, n), n),
                  n_coeffs=n_coeffs, s_coeffs=s_coeffs or {}, t_coeffs=t_coeffs or {})
    return validate_fieldset(fs)


def sample_coords(n: int, count: int, seed: int) -> np.ndarray:
    return sample_points(n, count, np.random.default_rng(seed))


def random_skew(n: int, seed: int):
    return random_skew_table(n, np.random.default_rng(seed))


def random_linear_connection(n: int, seed: int) -> NonlinearConnection:
    """Random user connection, affine in all chart coordinates so that the
    frame brackets are nontrivial but tame."""
    rng = np.random.default_rng(seed)
    m = 2 * n

    def entry():
        node = Num(float(rng.uniform(-0.2, 0.2)))
        for kind in ("x", "y"):
            idx = int(rng.integers(1, m + 1))
            coeff = Num(float(rng.uniform(-0.3, 0.3)))
            node = BinOp("+", node, BinOp("*", coeff, Var(kind, idx)))
        return node

    table = [[entry() for _ in range(m)] for _ in range(m)]
    return NonlinearConnection(source=USER_SUPPLIED, n=n, coeff_asts=table)


def zero_connection(n: int) -> NonlinearConnection:
    m = 2 * n
    return NonlinearConnection(
        source=USER_SUPPLIED, n=n,
        coeff_asts=[[Num(0.0)] * m for _ in range(m)])


# ---------------------------------------------------------------------------
# Finite-difference oracles
# ---------------------------------------------------------------------------

def fd_gradient(ast, coords: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of plain values; error O(h^2)."""
    dim = coords.shape[0]
    shifted = []
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        shifted.append(coords + e)
        shifted.append(coords - e)
    vals, = eval_values([ast], np.asarray(shifted))
    return (vals[0::2] - vals[1::2]) / (2.0 * h)


def fd_hessian(ast, coords: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the first-order jet gradient; validates the
    second order against the (independently FD-checked) first order."""
    dim = coords.shape[0]
    shifted = []
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        shifted.append(coords + e)
        shifted.append(coords - e)
    (_, grads, _), = eval_jets([ast], np.asarray(shifted), order=1)
    hess = (grads[0::2] - grads[1::2]) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def random_field_source(n: int, rng: np.random.Generator) -> str:
    """Random polynomial / exponential / trigonometric scalar field."""
    m = 2 * n
    names = [f"x{i}" for i in range(1, m + 1)] + [f"y{i}" for i in range(1, m + 1)]

    def monomial():
        factors = []
        for _ in range(int(rng.integers(1, 4))):
            var = names[int(rng.integers(0, len(names)))]
            power = int(rng.integers(1, 4))
            factors.append(var if power == 1 else f"{var}^{power}")
        return f"{rng.uniform(-2, 2):.4f}*" + "*".join(factors)

    def wrapped():
        var = names[int(rng.integers(0, len(names)))]
        fn = ("sin", "cos", "exp")[int(rng.integers(0, 3))]
        scale = f"{rng.uniform(-0.8, 0.8):.4f}"
        inner = f"{scale}*{var}"
        return f"{rng.uniform(-2, 2):.4f}*{fn}({inner})"

    terms = [monomial() for _ in range(int(rng.integers(2, 5)))]
    if rng.random() < 0.6:
        terms.append(wrapped())
    return " + ".join(terms).replace("+ -", "- ")
