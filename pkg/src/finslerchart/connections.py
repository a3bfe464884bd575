"""Vertical connections from the hypercomplex structure, two ways.

For a in {1, 3} a unique metric connection on the fiber bundle is pinned
down by prescribed skew torsion data (S on fiber pairs, T twisted through
J_a on horizontal pairs).  This module constructs its coefficients along
two fully independent routes:

* ``coeffs_closed_form`` evaluates the explicit closed-form coefficient
  blocks (one per combination of index halves);
* ``koszul_solve`` evaluates the defining Koszul-type equations on adapted
  frame fields mechanically, using the J matrices, and solves the resulting
  linear systems.

These conditions pin the connection down uniquely, so agreement of the two
routes is one of the headline checks run by :func:`verify_all`.  On top of
the vertical connection the module assembles the derived full connections
(one per a, plus the averaged one that makes all three structures
parallel), their torsion tensors, and every residual the verification
report cares about.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .calculus import ChartPoint, eval_values
from .expr import FieldSet
from .hypercomplex import HypercomplexTriple, build_triple, \
    check_projection_identities, preserves_splitting, quaternion_identities_hold
from .metric import DEGENERACY_FACTOR, DegenerateMetricError, VerticalMetric, \
    check_homogeneity, metric_arrays
from .nlconn import FrameBrackets, NonlinearConnection, brackets_from_values

__all__ = [
    "VerticalConnectionCoeffs", "FullConnectionCoeffs", "TorsionTensor",
    "PointData", "point_data",
    "coeffs_closed_form", "koszul_solve", "metricity_residual",
    "build_Da", "torsion_Da", "build_D",
    "CheckResult", "VerificationReport", "DEFAULT_TOLERANCES",
    "verify_all", "verify_points",
]


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------

@dataclass
class VerticalConnectionCoeffs:
    """Coefficients of a linear connection on the fiber bundle.

    ``horizontal[k, i, j]`` covariantly differentiates the i-th fiber frame
    field along the j-th horizontal frame field, ``vertical[k, i, j]``
    along the j-th fiber frame field; k labels the output component.  The
    vertical block is shared between a = 1 and a = 3 by construction.
    """

    a: int
    horizontal: np.ndarray
    vertical: np.ndarray

    @property
    def m(self) -> int:
        return self.horizontal.shape[0]


@dataclass
class FullConnectionCoeffs:
    """Connection on the whole chart tangent space in the adapted frame.

    ``coeffs[K, I, J]`` differentiates frame field I along frame field J;
    indices run over the 4n slots, horizontal block first.
    """

    coeffs: np.ndarray

    @property
    def m(self) -> int:
        return self.coeffs.shape[0] // 2


@dataclass
class TorsionTensor:
    """``components[K, I, J]`` of the torsion on frame pair (I, J); exactly
    skew in (I, J) by construction."""

    components: np.ndarray

    @property
    def m(self) -> int:
        return self.components.shape[0] // 2


@dataclass
class PointData:
    """Every numeric input the coefficient formulas need at one point."""

    n: int
    coords: np.ndarray                 # (4n,)
    g: np.ndarray
    ginv: np.ndarray
    signature: tuple[int, int]
    dgdx: np.ndarray                   # [k, i, j] derivative index first
    dgdy: np.ndarray
    deltag: np.ndarray                 # horizontal frame derivatives of g
    N: np.ndarray                      # [upper, lower]
    brackets: FrameBrackets
    S: np.ndarray                      # prescribed fiber torsion, [k, i, j]
    T: np.ndarray

    @property
    def m(self) -> int:
        return 2 * self.n

    @property
    def point(self) -> ChartPoint:
        m = self.m
        return ChartPoint(x=self.coords[:m], y=self.coords[m:])


def _skew_values(table, m: int, coords: np.ndarray) -> np.ndarray:
    """Evaluate a sparse skew (1,2)-tensor table to dense (P, m, m, m)."""
    P = coords.shape[0]
    out = np.zeros((P, m, m, m))
    if table:
        keys = list(table.keys())
        vals = eval_values([table[k] for k in keys], coords)
        for (k, i, j), v in zip(keys, vals):
            out[:, k - 1, i - 1, j - 1] = v
            out[:, k - 1, j - 1, i - 1] = -v
    return out


def point_data(fs: FieldSet, nc: NonlinearConnection, coords: np.ndarray) -> list[PointData]:
    """Batched evaluation of metric, connection, bracket and torsion data.

    ``coords`` is (P, 4n).  Raises :class:`DegenerateMetricError` naming the
    first offending point when the metric degenerates.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[None, :]
    P = coords.shape[0]
    m = fs.m

    g, dgdx, dgdy = metric_arrays(fs, coords)
    dets = np.linalg.det(g)
    scales = np.abs(g).reshape(P, -1).max(axis=1)
    bad = np.abs(dets) < DEGENERACY_FACTOR * np.maximum(scales, 1e-300) ** m
    if bad.any():
        idx = int(np.argmax(bad))
        raise DegenerateMetricError(
            f"vertical metric degenerate at point {idx} "
            f"(coords {coords[idx].tolist()}, det={dets[idx]:.3e})")
    ginv = np.linalg.inv(g)
    eigs = np.linalg.eigvalsh(g)
    ties = np.abs(eigs) <= DEGENERACY_FACTOR * np.maximum(scales, 1.0)[:, None]
    if ties.any():
        idx = int(np.argmax(ties.any(axis=1)))
        raise DegenerateMetricError(
            f"metric eigenvalue tied at zero at point {idx}")
    q_negs = (eigs < 0.0).sum(axis=1)

    N, dNdx, dNdy = nc.evaluate(coords)
    deltag = dgdx - np.einsum("plk,plij->pkij", N, dgdy)
    S = _skew_values(fs.s_coeffs, m, coords)
    T = _skew_values(fs.t_coeffs, m, coords)

    out = []
    for p in range(P):
        out.append(PointData(
            n=fs.n,
            coords=coords[p],
            g=g[p], ginv=ginv[p],
            signature=(int(q_negs[p]), m - int(q_negs[p])),
            dgdx=dgdx[p], dgdy=dgdy[p], deltag=deltag[p],
            N=N[p],
            brackets=brackets_from_values(N[p], dNdx[p], dNdy[p]),
            S=S[p], T=T[p]))
    return out


def _vm_to_data(fs: FieldSet, nc: NonlinearConnection, vm: VerticalMetric,
                p: ChartPoint) -> PointData:
    """PointData built around an existing VerticalMetric (its g blocks win)."""
    coords = p.coords[None, :]
    m = fs.m
    N, dNdx, dNdy = nc.evaluate(coords)
    deltag = vm.deltag
    if deltag is None:
        deltag = vm.with_deltag(N[0]).deltag
    S = _skew_values(fs.s_coeffs, m, coords)
    T = _skew_values(fs.t_coeffs, m, coords)
    return PointData(
        n=fs.n, coords=p.coords,
        g=vm.g, ginv=vm.ginv, signature=vm.signature,
        dgdx=vm.dg_dx, dgdy=vm.dg_dy, deltag=deltag,
        N=N[0], brackets=brackets_from_values(N[0], dNdx[0], dNdy[0]),
        S=S[0], T=T[0])


# ---------------------------------------------------------------------------
# Route 1: closed-form coefficient blocks
# ---------------------------------------------------------------------------

def _closed_form_vertical(pd: PointData) -> np.ndarray:
    """Fiber-direction coefficients.  Shared between a = 1 and a = 3:
    half the inverse-metric contraction of the cyclic fiber-derivative
    combination of g plus the S-tensor terms."""
    g, ginv, dgdy, S = pd.g, pd.ginv, pd.dgdy, pd.S
    main = (np.einsum("jil->lij", dgdy)        # y_j-partial of g_il
            + np.einsum("ilj->lij", dgdy)      # y_i-partial of g_lj
            - np.einsum("lji->lij", dgdy)      # y_l-partial of g_ji
            + np.einsum("hjl,ih->lij", S, g)
            + np.einsum("hij,lh->lij", S, g)
            - np.einsum("hli,jh->lij", S, g))
    return 0.5 * np.einsum("lk,lij->kij", ginv, main)


def _closed_form_horizontal_1(pd: PointData) -> np.ndarray:
    """Horizontal-direction coefficients for a = 1, assembled block by
    block over the two halves of each index range."""
    n, m = pd.n, pd.m
    g, ginv, deltag, T = pd.g, pd.ginv, pd.deltag, pd.T
    A, B = slice(0, n), slice(n, m)

    D1 = np.einsum("jil->lij", deltag)
    D2 = np.einsum("ilj->lij", deltag)
    T1 = np.einsum("hjl,ih->lij", T, g)
    T2 = np.einsum("hij,lh->lij", T, g)
    T3 = np.einsum("hli,jh->lij", T, g)
    # tail: signed Greek-range contraction applied to g_{ji}; the first
    # half of the summation index enters with +, the second half with -
    sig = np.concatenate([np.ones(n), -np.ones(n)])
    tail = np.einsum("l,kl,lji->kij", sig, ginv, deltag)

    def contract(main):
        return 0.5 * np.einsum("kl,lij->kij", ginv, main)

    F = np.empty((m, m, m))
    F[:, A, A] = contract(D1 + D2 + T1 + T2 - T3)[:, A, A] - 0.5 * tail[:, A, A]
    F[:, A, B] = contract(D1 - D2 - T1 - T2 + T3)[:, A, B] + 0.5 * tail[:, A, B]
    F[:, B, A] = contract(D1 - D2 + T1 + T2 - T3)[:, B, A] - 0.5 * tail[:, B, A]
    F[:, B, B] = contract(D1 + D2 - T1 - T2 + T3)[:, B, B] + 0.5 * tail[:, B, B]
    return F


def _closed_form_horizontal_3(pd: PointData) -> np.ndarray:
    """Horizontal-direction coefficients for a = 3.

    The four coefficient blocks collapse into a single formula once the
    half-swapped index sw(i) = i +- n enters: with q the fiber argument and
    j the horizontal direction,

        half g^{kl} { delta_j g_{ql} + delta_{sw(q)} g_{l sw(j)}
                      - T^h_{sw(j) l} g_{qh} - T^h_{q sw(j)} g_{lh}
                      + T^h_{lq} g_{sw(j) h} }
        - half sum_l g^{kl} delta_{sw(l)} g_{sw(j) q}
    """
    n, m = pd.n, pd.m
    g, ginv, deltag, T = pd.g, pd.ginv, pd.deltag, pd.T

    D1 = np.einsum("jil->lij", deltag)
    D2 = np.einsum("ilj->lij", deltag)
    T1 = np.einsum("hjl,ih->lij", T, g)
    T2 = np.einsum("hij,lh->lij", T, g)
    T3 = np.einsum("hli,jh->lij", T, g)

    D2s = np.roll(np.roll(D2, n, axis=1), n, axis=2)
    T1s = np.roll(T1, n, axis=2)
    T2s = np.roll(T2, n, axis=2)
    T3s = np.roll(T3, n, axis=2)
    main = D1 + D2s - T1s - T2s + T3s

    swapped = np.roll(np.roll(deltag, n, axis=0), n, axis=1)
    tail = np.einsum("kl,ljq->kqj", ginv, swapped)
    return 0.5 * np.einsum("kl,lqj->kqj", ginv, main) - 0.5 * tail


def _closed_form(pd: PointData, a: int) -> VerticalConnectionCoeffs:
    if a not in (1, 3):
        raise ValueError(f"connection family index must be 1 or 3, got {a}")
    vertical = _closed_form_vertical(pd)
    horizontal = _closed_form_horizontal_1(pd) if a == 1 else _closed_form_horizontal_3(pd)
    return VerticalConnectionCoeffs(a=a, horizontal=horizontal, vertical=vertical)


def coeffs_closed_form(fs: FieldSet, nc: NonlinearConnection, vm: VerticalMetric,
                       p: ChartPoint, a: int) -> VerticalConnectionCoeffs:
    """Connection coefficients at ``p`` from the explicit blockwise formulas."""
    return _closed_form(_vm_to_data(fs, nc, vm, p), a)


# ---------------------------------------------------------------------------
# Route 2: Koszul-type equations on frame fields, solved linearly
# ---------------------------------------------------------------------------

def _koszul(pd: PointData, a: int, triple: HypercomplexTriple) -> VerticalConnectionCoeffs:
    """Evaluate the defining equations on adapted frame triples and solve.

    The fiber equation is evaluated on triples of fiber frame fields; the
    horizontal one on triples of horizontal frame fields, with every J_a
    image computed mechanically from the structure matrix.  Brackets of
    frame fields in the same block are fiber-valued, so the bracket terms
    of both equations vanish identically on these triples and are omitted;
    they matter only for variable-coefficient arguments.
    """
    if a not in (1, 3):
        raise ValueError(f"connection family index must be 1 or 3, got {a}")
    m = pd.m
    g, dgdy, deltag = pd.g, pd.dgdy, pd.deltag
    S, T = pd.S, pd.T

    try:
        # fiber directions: rhs[x, y, z] of the polarisation identity for
        # 2 g(nabla_{dot x} dot y, dot z)
        t1 = np.einsum("ky,kxz->xyz", g, S)     # g(Y, S(Z, X))
        t2 = np.einsum("kz,kyx->xyz", g, S)     # g(Z, S(X, Y))
        t3 = np.einsum("kx,kzy->xyz", g, S)     # g(X, S(Y, Z))
        rhs_v = (dgdy
                 + np.einsum("yzx->xyz", dgdy)
                 - np.einsum("zxy->xyz", dgdy)
                 + t1 + t2 - t3)
        C = np.empty((m, m, m))
        for x in range(m):
            C[:, :, x] = 0.5 * np.linalg.solve(g, rhs_v[x].T)

        # horizontal directions: rhs[x, y, z] of the identity for
        # 2 g(nabla_{delta x} J_a delta y, J_a delta z)
        J = triple.matrix(a).astype(float)
        U = J[m:, :m]                           # fiber components of J(delta_z)
        gU = g @ U
        X1 = np.einsum("xab,ay,bz->xyz", deltag, U, U)
        TU = np.einsum("kqp,pz,qx->kzx", T, U, U)   # T(J delta_z, J delta_x)
        rhs_h = (X1
                 + np.einsum("yzx->xyz", X1)
                 - np.einsum("zxy->xyz", X1)
                 + np.einsum("ky,kzx->xyz", gU, TU)
                 + np.einsum("kz,kxy->xyz", gU, TU)
                 - np.einsum("kx,kyz->xyz", gU, TU))
        A = 2.0 * U.T @ g
        F = np.empty((m, m, m))
        for x in range(m):
            mapped = np.linalg.solve(A, rhs_h[x].T)   # columns: image of J delta_y
            F[:, :, x] = np.linalg.solve(U.T, mapped.T).T
    except np.linalg.LinAlgError as exc:
        raise DegenerateMetricError(f"Koszul system singular: {exc}") from exc

    return VerticalConnectionCoeffs(a=a, horizontal=F, vertical=C)


def koszul_solve(fs: FieldSet, nc: NonlinearConnection, vm: VerticalMetric,
                 brackets: FrameBrackets, p: ChartPoint, a: int) -> VerticalConnectionCoeffs:
    """Connection coefficients at ``p`` solved from the defining equations.

    Independent of :func:`coeffs_closed_form`; the two must agree to solver
    precision, which is exactly the uniqueness statement.  ``brackets`` is
    accepted for interface symmetry; frame brackets drop out of the frame
    evaluations (see :func:`_koszul`).
    """
    del brackets
    pd = _vm_to_data(fs, nc, vm, p)
    return _koszul(pd, a, build_triple(fs.n))


# ---------------------------------------------------------------------------
# Metric compatibility
# ---------------------------------------------------------------------------

def _metricity(pd: PointData, cc: VerticalConnectionCoeffs) -> tuple[float, float]:
    """(max residual, scale) of metric compatibility over all frame
    directions and fiber pairs."""
    g = pd.g
    F, C = cc.horizontal, cc.vertical
    lhs_h = pd.deltag
    rhs_h = (np.einsum("lik,lj->kij", F, g) + np.einsum("ljk,li->kij", F, g))
    lhs_v = pd.dgdy
    rhs_v = (np.einsum("lik,lj->kij", C, g) + np.einsum("ljk,li->kij", C, g))
    residual = max(float(np.abs(lhs_h - rhs_h).max()),
                   float(np.abs(lhs_v - rhs_v).max()))
    scale = max(1.0, float(np.abs(lhs_h).max()), float(np.abs(rhs_h).max()),
                float(np.abs(lhs_v).max()), float(np.abs(rhs_v).max()))
    return residual, scale


def metricity_residual(cc: VerticalConnectionCoeffs, vm: VerticalMetric,
                       nc: NonlinearConnection, p: ChartPoint) -> float:
    """Max absolute failure of metric compatibility of ``cc`` at ``p``."""
    deltag = vm.deltag
    if deltag is None:
        N, _, _ = nc.evaluate(p.coords[None, :])
        deltag = vm.with_deltag(N[0]).deltag
    g = vm.g
    F, C = cc.horizontal, cc.vertical
    rhs_h = (np.einsum("lik,lj->kij", F, g) + np.einsum("ljk,li->kij", F, g))
    rhs_v = (np.einsum("lik,lj->kij", C, g) + np.einsum("ljk,li->kij", C, g))
    return max(float(np.abs(deltag - rhs_h).max()),
               float(np.abs(vm.dg_dy - rhs_v).max()))


# ---------------------------------------------------------------------------
# Derived full connections and torsion
# ---------------------------------------------------------------------------

def build_Da(input_nabla: VerticalConnectionCoeffs, t: HypercomplexTriple,
             a: int) -> FullConnectionCoeffs:
    """Full-frame connection induced by J_a: acts as the vertical connection
    on fiber arguments and as its minus-J-conjugate on horizontal ones."""
    if a not in (1, 3):
        raise ValueError(f"derived connection exists for a in {{1, 3}}, got {a}")
    m = input_nabla.m
    J = t.matrix(a).astype(float)
    Jhv, Jvh = J[:m, m:], J[m:, :m]
    coeffs = np.zeros((2 * m, 2 * m, 2 * m))
    for phi, dirs in ((input_nabla.horizontal, slice(0, m)),
                      (input_nabla.vertical, slice(m, 2 * m))):
        coeffs[m:, m:, dirs] = phi
        coeffs[:m, :m, dirs] = -np.einsum("rk,kqj,qi->rij", Jhv, phi, Jvh)
    return FullConnectionCoeffs(coeffs=coeffs)


def build_D(input_nabla: VerticalConnectionCoeffs,
            t: HypercomplexTriple) -> FullConnectionCoeffs:
    """The averaged connection: half the sum of the vertical connection with
    its J2-conjugate on fiber arguments and of the two J-conjugates on
    horizontal arguments.  All three structures are parallel for it."""
    m = input_nabla.m
    J1 = t.J1.astype(float)
    J3 = t.J3.astype(float)
    J2vv = t.J2[m:, m:].astype(float)
    coeffs = np.zeros((2 * m, 2 * m, 2 * m))
    for phi, dirs in ((input_nabla.horizontal, slice(0, m)),
                      (input_nabla.vertical, slice(m, 2 * m))):
        twist = np.einsum("rk,kqj,qi->rij", J2vv, phi, J2vv)
        coeffs[m:, m:, dirs] = 0.5 * (phi - twist)
        hor1 = -np.einsum("rk,kqj,qi->rij", J1[:m, m:], phi, J1[m:, :m])
        hor3 = -np.einsum("rk,kqj,qi->rij", J3[:m, m:], phi, J3[m:, :m])
        coeffs[:m, :m, dirs] = 0.5 * (hor1 + hor3)
    return FullConnectionCoeffs(coeffs=coeffs)


def _bracket_components(brackets: FrameBrackets, m: int) -> np.ndarray:
    """Frame bracket table Br[K, I, J]: components of the bracket of frame
    fields I and J.  All brackets are fiber-valued."""
    Br = np.zeros((2 * m, 2 * m, 2 * m))
    Br[m:, :m, :m] = -brackets.R
    Br[m:, :m, m:] = brackets.dN
    Br[m:, m:, :m] = -np.einsum("kij->kji", brackets.dN)
    return Br


def torsion_Da(da: FullConnectionCoeffs, brackets: FrameBrackets,
               p: ChartPoint) -> TorsionTensor:
    """Torsion of a derived connection on all frame pairs."""
    del p   # torsion is pointwise in the already-evaluated data
    m = da.m
    gamma = da.coeffs
    Br = _bracket_components(brackets, m)
    components = np.einsum("kji->kij", gamma) - gamma - Br
    return TorsionTensor(components=components)


# ---------------------------------------------------------------------------
# Residuals for the verification report
# ---------------------------------------------------------------------------

def _rel(dev: float, scale: float) -> float:
    return dev / max(1.0, scale)


def coefficient_deviation(one: VerticalConnectionCoeffs,
                          other: VerticalConnectionCoeffs) -> float:
    """Scale-normalised max deviation across both coefficient blocks."""
    dh = float(np.abs(one.horizontal - other.horizontal).max())
    dv = float(np.abs(one.vertical - other.vertical).max())
    sh = float(np.abs(other.horizontal).max())
    sv = float(np.abs(other.vertical).max())
    return max(_rel(dh, sh), _rel(dv, sv))


def vertical_torsion_residual(tors: TorsionTensor, pd: PointData) -> tuple[float, float]:
    """How far the torsion on fiber pairs sits from the prescribed S."""
    m = tors.m
    lhs = tors.components[m:, m:, m:]
    rhs = np.einsum("kji->kij", pd.S)    # S applied to (dot_i, dot_j)
    dev = float(np.abs(lhs - rhs).max())
    scale = max(1.0, float(np.abs(rhs).max()), float(np.abs(lhs).max()))
    return dev, scale


def horizontal_torsion_residual(tors: TorsionTensor, pd: PointData,
                                t: HypercomplexTriple, a: int) -> tuple[float, float]:
    """How far the horizontal part of the torsion on horizontal pairs sits
    from the J_a-twisted prescription by T."""
    m = tors.m
    J = t.matrix(a).astype(float)
    U = J[m:, :m]
    lhs = tors.components[:m, :m, :m]
    inner = np.einsum("kqp,pj,qi->kij", pd.T, U, U)   # T(J delta_j, J delta_i)
    rhs = np.einsum("rk,kij->rij", J[:m, m:], inner)
    dev = float(np.abs(lhs - rhs).max())
    scale = max(1.0, float(np.abs(rhs).max()), float(np.abs(lhs).max()))
    return dev, scale


def parallelism_residual(full: FullConnectionCoeffs, J: np.ndarray) -> tuple[float, float]:
    """Max component of the covariant derivative of the structure J."""
    gamma = full.coeffs
    Jf = J.astype(float)
    dev = (np.einsum("qi,kqj->kij", Jf, gamma)
           - np.einsum("kq,qij->kij", Jf, gamma))
    return float(np.abs(dev).max()), max(1.0, float(np.abs(gamma).max()))


def torsion_formula_consistency(tors: TorsionTensor, cc: VerticalConnectionCoeffs,
                                t: HypercomplexTriple, a: int) -> float:
    """Cross-check of the general torsion formula against its specialised
    fiber-pair and horizontal-pair forms.  Zero up to rounding on frame
    fields; reported rather than asserted because the two forms place the
    bracket projections differently for variable-coefficient arguments.
    """
    m = tors.m
    C, F = cc.vertical, cc.horizontal
    # fiber pairs: plain antisymmetrisation of the vertical coefficients
    vform = np.einsum("kji->kij", C) - C
    dev_v = float(np.abs(tors.components[m:, m:, m:] - vform).max())
    # horizontal pairs: J_a applied to the antisymmetrised conjugated
    # horizontal coefficients (frame brackets project to zero here)
    J = t.matrix(a).astype(float)
    U = J[m:, :m]
    V = np.einsum("qi,kqj->kij", U, F)       # nabla along j of (J delta_i)
    inner = V - np.einsum("kij->kji", V)     # minus nabla along i of (J delta_j)
    hform = np.einsum("rk,kij->rij", J[:m, m:], inner)
    dev_h = float(np.abs(tors.components[:m, :m, :m] - hform).max())
    return max(dev_v, dev_h)


def mixed_torsion_norm(tors: TorsionTensor) -> float:
    """Largest torsion component on mixed (horizontal, fiber) frame pairs.
    Nothing is asserted about these; they are reported for inspection."""
    m = tors.m
    return float(np.abs(tors.components[:, :m, m:]).max())


def cartan_reduction_residual(cc: VerticalConnectionCoeffs, pd: PointData) -> float:
    """With no prescribed S, the fiber coefficients reduce to the classical
    half-inverse-metric contraction of the fiber derivative of g."""
    expected = 0.5 * np.einsum("kl,lij->kij", pd.ginv, pd.dgdy)
    dev = float(np.abs(cc.vertical - expected).max())
    return _rel(dev, float(np.abs(expected).max()))


# ---------------------------------------------------------------------------
# Verification report
# ---------------------------------------------------------------------------

DEFAULT_TOLERANCES: dict[str, float] = {
    "homogeneity_euler": 1e-9,
    "homogeneity_scaling": 1e-9,
    "signature": 0.0,
    "quaternion": 0.0,
    "projection_identities": 0.0,
    "koszul_vs_closed_a1": 1e-8,
    "koszul_vs_closed_a3": 1e-8,
    "metricity_a1": 1e-8,
    "metricity_a3": 1e-8,
    "torsion_vertical_a1": 1e-8,
    "torsion_vertical_a3": 1e-8,
    "torsion_horizontal_a1": 1e-8,
    "torsion_horizontal_a3": 1e-8,
    "parallel_Da_a1": 1e-10,
    "parallel_Da_a3": 1e-10,
    "parallel_D_J1": 1e-10,
    "parallel_D_J2": 1e-10,
    "parallel_D_J3": 1e-10,
    "cartan_reduction": 1e-9,
    "torsion_formula_consistency": math.inf,
    "torsion_mixed_norm": math.inf,
}


@dataclass
class CheckResult:
    check: str
    point: int          # -1 for point-independent checks
    residual: float
    tol: float
    passed: bool


@dataclass
class VerificationReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failed(self) -> list[CheckResult]:
        return [r for r in self.results if not r.passed]

    def extend(self, other: "VerificationReport") -> None:
        self.results.extend(other.results)

    def sorted_results(self) -> list[CheckResult]:
        return sorted(self.results, key=lambda r: (r.point, r.check))

    def render_machine(self) -> str:
        lines = [
            f"check={r.check} point={r.point} residual={r.residual:.16e} "
            f"tol={r.tol:.3e} pass={'true' if r.passed else 'false'}"
            for r in self.sorted_results()
        ]
        total = len(self.results)
        failed = len(self.failed())
        lines.append(f"summary checks={total} failed={failed} "
                     f"pass={'true' if failed == 0 else 'false'}")
        return "\n".join(lines)

    def render_human(self) -> str:
        rows = self.sorted_results()
        width = max((len(r.check) for r in rows), default=5)
        lines = [f"{'check':<{width}}  point  residual      tol        result"]
        for r in rows:
            tol = "-" if math.isinf(r.tol) else f"{r.tol:.1e}"
            lines.append(
                f"{r.check:<{width}}  {r.point:>5}  {r.residual:.4e}  {tol:>9}  "
                f"{'ok' if r.passed else 'FAIL'}")
        failed = len(self.failed())
        lines.append("")
        lines.append(f"{len(self.results)} checks, {failed} failed")
        return "\n".join(lines)


def _tols(overrides) -> dict[str, float]:
    tols = dict(DEFAULT_TOLERANCES)
    if overrides:
        for name, value in overrides.items():
            if name not in tols:
                raise ValueError(f"unknown check name in tolerance override: {name!r}")
            tols[name] = float(value)
    return tols


def _global_checks(n: int, tols: dict[str, float]) -> list[CheckResult]:
    triple = build_triple(n)
    quat = 0.0 if quaternion_identities_hold(triple) else 1.0
    proj_ok = (check_projection_identities(triple, 1)
               and check_projection_identities(triple, 3)
               and preserves_splitting(triple))
    proj = 0.0 if proj_ok else 1.0
    return [
        CheckResult("quaternion", -1, quat, tols["quaternion"],
                    quat <= tols["quaternion"]),
        CheckResult("projection_identities", -1, proj, tols["projection_identities"],
                    proj <= tols["projection_identities"]),
    ]


def _point_checks(fs: FieldSet, pd: PointData, triple: HypercomplexTriple,
                  a_values, tols: dict[str, float], ks,
                  expected_q: int | None, perturb: float,
                  point_index: int) -> list[CheckResult]:
    out: list[CheckResult] = []

    def record(name: str, residual: float) -> None:
        tol = tols[name]
        out.append(CheckResult(name, point_index, residual, tol, residual <= tol))

    hom = check_homogeneity(fs, pd.point, ks)
    fscale = abs(float(pd.point.y @ pd.g @ pd.point.y))   # equals |F*| when homogeneous
    record("homogeneity_euler", _rel(hom.euler_residual, 2.0 * fscale))
    record("homogeneity_scaling",
           max(_rel(r, 2.0 * fscale) for r in hom.scaling_residuals))

    sig_ok = pd.signature[0] == expected_q if expected_q is not None else True
    record("signature", 0.0 if sig_ok else 1.0)

    closed = {a: _closed_form(pd, a) for a in a_values}
    solved = {a: _koszul(pd, a, triple) for a in a_values}
    for a in a_values:
        record(f"koszul_vs_closed_a{a}", coefficient_deviation(solved[a], closed[a]))

    # Negative-control mode: corrupt one off-diagonal coefficient of the
    # vertical connection (breaks metricity and both torsion conditions)
    # and of each assembled full connection (breaks parallelism, which is
    # an algebraic identity in the assembled coefficients and therefore
    # insensitive to corruption of the input connection alone).
    working = closed
    if perturb:
        working = {
            a: replace(cc, horizontal=cc.horizontal.copy(),
                       vertical=cc.vertical.copy())
            for a, cc in closed.items()
        }
        for cc in working.values():
            cc.horizontal[0, 0, 1] += perturb
            cc.vertical[0, 0, 1] += perturb

    for a in a_values:
        cc = working[a]
        residual, scale = _metricity(pd, cc)
        record(f"metricity_a{a}", _rel(residual, scale))
        da = build_Da(cc, triple, a)
        if perturb:
            da.coeffs[0, 0, 1] += perturb
        tors = torsion_Da(da, pd.brackets, pd.point)
        dev, scale = vertical_torsion_residual(tors, pd)
        record(f"torsion_vertical_a{a}", _rel(dev, scale))
        dev, scale = horizontal_torsion_residual(tors, pd, triple, a)
        record(f"torsion_horizontal_a{a}", _rel(dev, scale))
        dev, scale = parallelism_residual(da, triple.matrix(a))
        record(f"parallel_Da_a{a}", _rel(dev, scale))
        if a == a_values[0] and not perturb:
            record("torsion_formula_consistency",
                   torsion_formula_consistency(tors, cc, triple, a))
            record("torsion_mixed_norm", mixed_torsion_norm(tors))

    base = working.get(1) or next(iter(working.values()))
    D = build_D(base, triple)
    if perturb:
        D.coeffs[0, 0, 1] += perturb
    for b in (1, 2, 3):
        dev, scale = parallelism_residual(D, triple.matrix(b))
        record(f"parallel_D_J{b}", _rel(dev, scale))

    if not fs.s_coeffs and not perturb:
        record("cartan_reduction", cartan_reduction_residual(closed[a_values[0]], pd))

    return out


def verify_points(fs: FieldSet, nc: NonlinearConnection, points: np.ndarray,
                  a_values=(1, 3), tolerances=None, ks=(0.5, 2.0, 3.0),
                  expected_q: int | None = None, perturb: float = 0.0,
                  point_offset: int = 0, include_global: bool = True,
                  chunk_size: int = 16) -> VerificationReport:
    """Run the full check battery over many points, batching evaluation.

    Any upstream error (degenerate metric, expression domain) is captured
    as a failed record for the affected points rather than aborting the
    whole report.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    tols = _tols(tolerances)
    a_values = tuple(a_values)
    triple = build_triple(fs.n)
    report = VerificationReport()
    if include_global:
        report.results.extend(_global_checks(fs.n, tols))

    for start in range(0, points.shape[0], chunk_size):
        chunk = points[start:start + chunk_size]
        try:
            data = point_data(fs, nc, chunk)
        except (DegenerateMetricError, ValueError) as exc:
            for off in range(chunk.shape[0]):
                report.results.append(CheckResult(
                    f"evaluation_error[{exc}]", point_offset + start + off,
                    math.inf, 0.0, False))
            continue
        for off, pd in enumerate(data):
            report.results.extend(_point_checks(
                fs, pd, triple, a_values, tols, ks, expected_q, perturb,
                point_offset + start + off))
    return report


def verify_all(fs: FieldSet, nc: NonlinearConnection, p: ChartPoint,
               a_values=(1, 3), tolerances=None, **kwargs) -> VerificationReport:
    """Single-point verification: every identity and residual at ``p``."""
    return verify_points(fs, nc, p.coords[None, :], a_values=a_values,
                         tolerances=tolerances, **kwargs)
