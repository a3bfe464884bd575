"""The adapted-frame almost hypercomplex structure.

On a chart of the slit tangent bundle with adapted frame ordered as the 2n
horizontal fields followed by the 2n fiber fields, three almost complex
structures J1, J2, J3 are defined by a fixed signed-permutation table.  The
matrices are integer valued and frame-constant, so every identity they
satisfy is checked exactly, with no floating-point tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["HypercomplexTriple", "build_triple", "horizontal_projector",
           "vertical_projector", "quaternion_identities_hold",
           "check_projection_identities", "preserves_splitting"]


@dataclass(frozen=True)
class HypercomplexTriple:
    """Integer matrices of J1, J2, J3 acting on adapted-frame components.

    Component vectors are ordered (delta_1..delta_2n, dot_1..dot_2n) where
    delta_i are the horizontal and dot_i the fiber frame fields.
    """

    n: int
    J1: np.ndarray
    J2: np.ndarray
    J3: np.ndarray

    @property
    def dim(self) -> int:
        return 4 * self.n

    def matrix(self, a: int) -> np.ndarray:
        if a == 1:
            return self.J1
        if a == 2:
            return self.J2
        if a == 3:
            return self.J3
        raise ValueError(f"structure index must be 1, 2 or 3, got {a}")


def build_triple(n: int) -> HypercomplexTriple:
    """Construct the triple for half-dimension ``n`` (chart dimension 4n).

    Writing d(i) for the i-th horizontal and v(i) for the i-th fiber slot
    (0-based, i in 0..2n-1, with the second half of each block shifted by n):

        J1: d(a) -> v(a),    d(n+a) -> -v(n+a),  v(a) -> -d(a),   v(n+a) -> d(n+a)
        J2: d(a) -> d(n+a),  d(n+a) -> -d(a),    v(a) -> v(n+a),  v(n+a) -> -v(a)
        J3: d(a) -> -v(n+a), d(n+a) -> -v(a),    v(a) -> d(n+a),  v(n+a) -> d(a)
    """
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    m = 2 * n
    J1 = np.zeros((2 * m, 2 * m), dtype=np.int64)
    J2 = np.zeros_like(J1)
    J3 = np.zeros_like(J1)

    def d(i: int) -> int:
        return i

    def v(i: int) -> int:
        return m + i

    for a in range(n):
        J1[v(a), d(a)] = 1
        J1[v(n + a), d(n + a)] = -1
        J1[d(a), v(a)] = -1
        J1[d(n + a), v(n + a)] = 1

        J2[d(n + a), d(a)] = 1
        J2[d(a), d(n + a)] = -1
        J2[v(n + a), v(a)] = 1
        J2[v(a), v(n + a)] = -1

        J3[v(n + a), d(a)] = -1
        J3[v(a), d(n + a)] = -1
        J3[d(n + a), v(a)] = 1
        J3[d(a), v(n + a)] = 1

    for J in (J1, J2, J3):
        J.setflags(write=False)
    return HypercomplexTriple(n=n, J1=J1, J2=J2, J3=J3)


def horizontal_projector(n: int) -> np.ndarray:
    m = 2 * n
    P = np.zeros((2 * m, 2 * m), dtype=np.int64)
    P[:m, :m] = np.eye(m, dtype=np.int64)
    return P


def vertical_projector(n: int) -> np.ndarray:
    m = 2 * n
    P = np.zeros((2 * m, 2 * m), dtype=np.int64)
    P[m:, m:] = np.eye(m, dtype=np.int64)
    return P


def quaternion_identities_hold(t: HypercomplexTriple) -> bool:
    """Exact integer check of the squares and the product relations."""
    I = np.eye(t.dim, dtype=np.int64)
    squares = all(np.array_equal(J @ J, -I) for J in (t.J1, t.J2, t.J3))
    products = (np.array_equal(t.J1 @ t.J2, t.J3)
                and np.array_equal(-(t.J2 @ t.J1), t.J3))
    return squares and products


def check_projection_identities(t: HypercomplexTriple, a: int) -> bool:
    """For a in {1, 3}: the structure swaps the splitting, i.e. composing
    with the vertical projector on one side equals composing with the
    horizontal projector on the other, exactly."""
    if a not in (1, 3):
        raise ValueError(f"projection identity applies to a in {{1, 3}}, got {a}")
    J = t.matrix(a)
    Ph = horizontal_projector(t.n)
    Pv = vertical_projector(t.n)
    return (np.array_equal(J @ Pv, Ph @ J)
            and np.array_equal(Pv @ J, J @ Ph))


def preserves_splitting(t: HypercomplexTriple) -> bool:
    """J2 commutes with both projectors: it never mixes horizontal and
    fiber directions, which is why it cannot generate a connection the way
    J1 and J3 do."""
    Ph = horizontal_projector(t.n)
    Pv = vertical_projector(t.n)
    return (np.array_equal(t.J2 @ Pv, Pv @ t.J2)
            and np.array_equal(t.J2 @ Ph, Ph @ t.J2))
