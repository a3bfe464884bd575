"""Both construction routes, their agreement, and every connection identity."""

import numpy as np
import pytest

from finslerchart import ChartPoint, DegenerateMetricError, build_D, build_Da, \
    build_triple, coeffs_closed_form, frame_brackets, fundamental_tensor, \
    koszul_solve, metricity_residual, point_data, torsion_Da, verify_all, \
    verify_points
from finslerchart.connections import VerticalConnectionCoeffs, _closed_form, \
    _koszul, cartan_reduction_residual, coefficient_deviation, \
    horizontal_torsion_residual, mixed_torsion_norm, parallelism_residual, \
    torsion_formula_consistency, vertical_torsion_residual
from finslerchart.nlconn import canonical_connection, connection_for

from helpers import make_fieldset, random_linear_connection, random_skew, \
    sample_coords, zero_connection


def _point(coords):
    coords = np.asarray(coords, dtype=float)
    m = coords.size // 2
    return ChartPoint(x=coords[:m], y=coords[m:])


def _dense_skew(table, m):
    out = np.zeros((m, m, m))
    for (k, i, j), node in table.items():
        out[k - 1, i - 1, j - 1] = node.value
        out[k - 1, j - 1, i - 1] = -node.value
    return out


@pytest.fixture(scope="module")
def finsler_setup():
    """Non-Riemannian metric, canonical connection, random prescribed torsions."""
    fs = make_fieldset("finsler_mix", 1,
                       s_coeffs=random_skew(1, seed=21),
                       t_coeffs=random_skew(1, seed=22))
    nc = canonical_connection(fs)
    pd = point_data(fs, nc, sample_coords(1, 4, seed=23))
    return fs, nc, pd


class TestFlatCase:
    def test_all_coefficients_vanish(self):
        fs = make_fieldset("flat", 1)
        nc = canonical_connection(fs)
        p = _point([0.0, 0.0, 1.0, 0.5])
        vm = fundamental_tensor(fs, p)
        for a in (1, 3):
            cf = coeffs_closed_form(fs, nc, vm, p, a)
            ks = koszul_solve(fs, nc, vm, frame_brackets(nc, p), p, a)
            assert np.abs(cf.horizontal).max() == 0.0
            assert np.abs(cf.vertical).max() == 0.0
            assert np.abs(ks.horizontal).max() == 0.0
            assert np.abs(ks.vertical).max() == 0.0

    def test_constant_skew_fiber_coefficients(self):
        """On the identity metric the fiber coefficients reduce to a pure
        index shuffle of the prescribed skew tensor; the formula below is
        derived by hand from the polarisation identity."""
        s = random_skew(1, seed=31)
        fs = make_fieldset("flat", 1, s_coeffs=s)
        pd, = point_data(fs, zero_connection(1), np.array([[0, 0, 1.0, 0.5]]))
        S = _dense_skew(s, 2)
        expected = np.empty((2, 2, 2))
        for k in range(2):
            for i in range(2):
                for j in range(2):
                    expected[k, i, j] = 0.5 * (S[i, j, k] + S[k, i, j] - S[j, k, i])
        got = _closed_form(pd, 1).vertical
        assert np.abs(got - expected).max() < 1e-15

    def test_derived_connections_vanish(self):
        fs = make_fieldset("flat", 1)
        nc = canonical_connection(fs)
        p = _point([0.0, 0.0, 1.0, 0.5])
        vm = fundamental_tensor(fs, p)
        t = build_triple(1)
        cc = coeffs_closed_form(fs, nc, vm, p, 1)
        assert np.abs(build_Da(cc, t, 1).coeffs).max() == 0.0
        assert np.abs(build_D(cc, t).coeffs).max() == 0.0


class TestUniqueness:
    """The two routes are independent implementations; agreement at solver
    precision is the uniqueness statement made numerical."""

    @pytest.mark.parametrize("n", [1, 2])
    @pytest.mark.parametrize("metric", ["riemann_exp", "pseudo_exp", "finsler_mix"])
    @pytest.mark.parametrize("connection", ["canonical", "random"])
    def test_koszul_equals_closed_form(self, n, metric, connection):
        fs = make_fieldset(metric, n,
                           s_coeffs=random_skew(n, seed=41),
                           t_coeffs=random_skew(n, seed=42))
        nc = (canonical_connection(fs) if connection == "canonical"
              else random_linear_connection(n, seed=43))
        triple = build_triple(n)
        for pd in point_data(fs, nc, sample_coords(n, 5, seed=44)):
            for a in (1, 3):
                dev = coefficient_deviation(_koszul(pd, a, triple),
                                            _closed_form(pd, a))
                assert dev < 1e-8

    def test_public_surface(self, finsler_setup):
        fs, nc, data = finsler_setup
        p = data[0].point
        vm = fundamental_tensor(fs, p).with_deltag(data[0].N)
        br = frame_brackets(nc, p)
        for a in (1, 3):
            dev = coefficient_deviation(koszul_solve(fs, nc, vm, br, p, a),
                                        coeffs_closed_form(fs, nc, vm, p, a))
            assert dev < 1e-8

    def test_fiber_block_shared_between_families(self, finsler_setup):
        _, _, data = finsler_setup
        triple = build_triple(1)
        for pd in data:
            assert np.array_equal(_closed_form(pd, 1).vertical,
                                  _closed_form(pd, 3).vertical)
            assert np.array_equal(_koszul(pd, 1, triple).vertical,
                                  _koszul(pd, 3, triple).vertical)


class TestMetricity:
    def test_compatible_on_finsler_metric(self, finsler_setup):
        fs, nc, data = finsler_setup
        for pd in data:
            p = pd.point
            vm = fundamental_tensor(fs, p).with_deltag(pd.N)
            for a in (1, 3):
                cc = coeffs_closed_form(fs, nc, vm, p, a)
                scale = max(1.0, np.abs(vm.g).max(), np.abs(vm.deltag).max(),
                            np.abs(vm.dg_dy).max())
                assert metricity_residual(cc, vm, nc, p) < 1e-8 * scale

    def test_sensitive_to_corruption(self, finsler_setup):
        fs, nc, data = finsler_setup
        pd = data[0]
        p = pd.point
        vm = fundamental_tensor(fs, p).with_deltag(pd.N)
        cc = coeffs_closed_form(fs, nc, vm, p, 1)
        cc.horizontal[0, 0, 1] += 0.1
        scale = max(1.0, np.abs(vm.g).max())
        assert metricity_residual(cc, vm, nc, p) >= 0.01 * scale


class TestDerivedConnections:
    def test_fiber_arguments_pass_through(self, finsler_setup):
        _, _, data = finsler_setup
        t = build_triple(1)
        pd = data[0]
        cc = _closed_form(pd, 1)
        da = build_Da(cc, t, 1)
        m = pd.m
        assert np.array_equal(da.coeffs[m:, m:, :m], cc.horizontal)
        assert np.array_equal(da.coeffs[m:, m:, m:], cc.vertical)

    def test_block_structure(self, finsler_setup):
        # fiber arguments give fiber values, horizontal give horizontal
        _, _, data = finsler_setup
        t = build_triple(1)
        m = data[0].m
        for a in (1, 3):
            da = build_Da(_closed_form(data[0], a), t, a)
            assert np.count_nonzero(da.coeffs[:m, m:, :]) == 0
            assert np.count_nonzero(da.coeffs[m:, :m, :]) == 0

    def test_rejects_middle_index(self, finsler_setup):
        _, _, data = finsler_setup
        with pytest.raises(ValueError):
            build_Da(_closed_form(data[0], 1), build_triple(1), 2)

    @pytest.mark.parametrize("a", [1, 3])
    def test_structure_parallel_for_own_connection(self, finsler_setup, a):
        _, _, data = finsler_setup
        t = build_triple(1)
        for pd in data:
            da = build_Da(_closed_form(pd, a), t, a)
            dev, scale = parallelism_residual(da, t.matrix(a))
            assert dev / scale < 1e-10

    def test_all_structures_parallel_for_average(self, finsler_setup):
        _, _, data = finsler_setup
        t = build_triple(1)
        for pd in data:
            D = build_D(_closed_form(pd, 1), t)
            for b in (1, 2, 3):
                dev, scale = parallelism_residual(D, t.matrix(b))
                assert dev / scale < 1e-10

    def test_average_from_other_family_input(self, finsler_setup):
        # the averaged construction accepts any vertical connection as input
        _, _, data = finsler_setup
        t = build_triple(1)
        D = build_D(_closed_form(data[0], 3), t)
        for b in (1, 2, 3):
            dev, scale = parallelism_residual(D, t.matrix(b))
            assert dev / scale < 1e-10

    def test_well_defined_under_frame_splitting(self, finsler_setup):
        # applying the assembled connection along a direction vector agrees
        # with the sum of its horizontal- and vertical-part applications
        _, _, data = finsler_setup
        t = build_triple(1)
        D = build_D(_closed_form(data[0], 1), t)
        rng = np.random.default_rng(6)
        X = rng.uniform(-1, 1, size=4)
        Xh, Xv = X.copy(), X.copy()
        Xh[2:] = 0.0
        Xv[:2] = 0.0
        full = np.einsum("kij,j->ki", D.coeffs, X)
        split = (np.einsum("kij,j->ki", D.coeffs, Xh)
                 + np.einsum("kij,j->ki", D.coeffs, Xv))
        assert np.allclose(full, split, rtol=1e-14, atol=1e-15)


class TestTorsion:
    def test_skew_exactly(self, finsler_setup):
        _, nc, data = finsler_setup
        t = build_triple(1)
        for pd in data:
            da = build_Da(_closed_form(pd, 1), t, 1)
            tors = torsion_Da(da, pd.brackets, pd.point)
            assert np.array_equal(tors.components,
                                  -tors.components.transpose(0, 2, 1))

    @pytest.mark.parametrize("a", [1, 3])
    def test_fiber_pairs_reproduce_prescription(self, finsler_setup, a):
        fs, _, data = finsler_setup
        t = build_triple(1)
        for pd in data:
            da = build_Da(_closed_form(pd, a), t, a)
            tors = torsion_Da(da, pd.brackets, pd.point)
            m = pd.m
            lhs = tors.components[m:, m:, m:]
            rhs = np.einsum("kji->kij", pd.S)
            assert np.abs(lhs - rhs).max() < 1e-8 * max(1.0, np.abs(pd.S).max())
            dev, scale = vertical_torsion_residual(tors, pd)
            assert dev / scale < 1e-8

    @pytest.mark.parametrize("a", [1, 3])
    def test_horizontal_pairs_reproduce_twisted_prescription(self, finsler_setup, a):
        _, _, data = finsler_setup
        t = build_triple(1)
        for pd in data:
            da = build_Da(_closed_form(pd, a), t, a)
            tors = torsion_Da(da, pd.brackets, pd.point)
            dev, scale = horizontal_torsion_residual(tors, pd, t, a)
            assert dev / scale < 1e-8

    def test_mixed_pairs_computed_without_assertion(self, finsler_setup):
        # mixed components are reported for inspection only
        _, _, data = finsler_setup
        t = build_triple(1)
        da = build_Da(_closed_form(data[0], 1), t, 1)
        tors = torsion_Da(da, data[0].brackets, data[0].point)
        assert np.isfinite(mixed_torsion_norm(tors))

    def test_specialised_forms_agree_on_frame_fields(self, finsler_setup):
        _, _, data = finsler_setup
        t = build_triple(1)
        for pd in data:
            for a in (1, 3):
                cc = _closed_form(pd, a)
                tors = torsion_Da(build_Da(cc, t, a), pd.brackets, pd.point)
                assert torsion_formula_consistency(tors, cc, t, a) < 1e-12


def test_cartan_reduction_without_prescribed_torsion():
    fs = make_fieldset("finsler_mix", 1)
    nc = canonical_connection(fs)
    for pd in point_data(fs, nc, sample_coords(1, 6, seed=51)):
        cc = _closed_form(pd, 1)
        # independent contraction oracle
        expected = 0.5 * np.einsum("kl,lij->kij", pd.ginv, pd.dgdy)
        assert np.abs(cc.vertical - expected).max() < 1e-9
        assert cartan_reduction_residual(cc, pd) < 1e-9


class TestVerification:
    def test_full_pipeline_on_finsler_config(self):
        fs = make_fieldset("finsler_mix", 1,
                           s_coeffs=random_skew(1, seed=61),
                           t_coeffs=random_skew(1, seed=62))
        report = verify_points(fs, connection_for(fs), sample_coords(1, 5, seed=63))
        assert report.all_passed

    def test_non_homogeneous_fails_only_homogeneity(self):
        fs = make_fieldset("nonhomogeneous", 1)
        report = verify_all(fs, canonical_connection(fs), _point([0, 0, 1.0, 1.0]))
        failed = {r.check for r in report.failed()}
        assert failed == {"homogeneity_euler", "homogeneity_scaling"}
        # the remaining checks were still run and reported
        assert any(r.check == "metricity_a1" and r.passed for r in report.results)

    def test_perturbation_fails_compatibility_checks(self):
        fs = make_fieldset("finsler_mix", 1,
                           s_coeffs=random_skew(1, seed=71),
                           t_coeffs=random_skew(1, seed=72))
        report = verify_points(fs, connection_for(fs),
                               sample_coords(1, 2, seed=73), perturb=0.1)
        failed = {r.check for r in report.failed()}
        for name in ("metricity_a1", "metricity_a3",
                     "torsion_vertical_a1", "torsion_horizontal_a3",
                     "parallel_Da_a1", "parallel_D_J2"):
            assert name in failed
        assert "koszul_vs_closed_a1" not in failed

    def test_expected_signature_mismatch_fails(self):
        fs = make_fieldset("flat", 1)
        report = verify_all(fs, canonical_connection(fs),
                            _point([0, 0, 1.0, 0.5]), expected_q=1)
        assert {r.check for r in report.failed()} == {"signature"}

    def test_unknown_tolerance_name(self):
        fs = make_fieldset("flat", 1)
        with pytest.raises(ValueError, match="unknown check"):
            verify_all(fs, canonical_connection(fs), _point([0, 0, 1.0, 0.5]),
                       tolerances={"bogus": 1.0})

    def test_degenerate_point_captured_in_report(self):
        from finslerchart import FieldSet, parse_expression, validate_fieldset
        fs = validate_fieldset(FieldSet(n=1, fstar=parse_expression("y1^2")))
        report = verify_points(fs, zero_connection(1),
                               np.array([[0.0, 0.0, 1.0, 1.0]]))
        assert not report.all_passed
        assert any(r.check.startswith("evaluation_error") for r in report.results)

    def test_machine_rendering_is_sorted_and_stable(self):
        fs = make_fieldset("flat", 1)
        report = verify_points(fs, canonical_connection(fs),
                               sample_coords(1, 2, seed=81))
        text = report.render_machine()
        assert text == report.render_machine()
        lines = [l for l in text.splitlines() if l.startswith("check=")]
        keys = [(int(l.split("point=")[1].split()[0]), l.split()[0]) for l in lines]
        assert keys == sorted(keys)
        assert text.splitlines()[-1].startswith("summary ")


def test_point_data_raises_on_degenerate_metric():
    from finslerchart import FieldSet, parse_expression, validate_fieldset
    fs = validate_fieldset(FieldSet(n=1, fstar=parse_expression("y1^2")))
    with pytest.raises(DegenerateMetricError, match="point 0"):
        point_data(fs, zero_connection(1), np.array([[0.0, 0.0, 1.0, 1.0]]))


def test_coefficient_container_shape():
    cc = VerticalConnectionCoeffs(a=1, horizontal=np.zeros((2, 2, 2)),
                                  vertical=np.zeros((2, 2, 2)))
    assert cc.m == 2
