"""Tests for randomization draws, moments, expected information, contamination."""

import numpy as np
import pytest

from multilevel_design import (
    ContaminationSpec,
    DegenerateContaminationError,
    DesignKind,
    NonEstimableError,
    ParityError,
    StudentVarianceComponents,
    StudyLayout,
    TeacherVarianceComponents,
    contaminated_expected_moment_matrix,
    design_matrices,
    draw_contamination,
    draw_randomization,
    expected_contamination,
    expected_student_information_given_D,
    expected_teacher_information,
    randomization_moments,
    student_information,
    teacher_information,
    teacher_precision,
)

from oracles import (
    contaminated_moment_matrix_numeric,
    contaminated_treatment_entry_numeric,
    dense_expected_student_info,
    enumerate_randomizations,
    student_cov,
    subset_uniform_assignment,
    teacher_cov,
)

PILOT_TEACHER = TeacherVarianceComponents(1.6, 14.4)
PILOT_STUDENT = StudentVarianceComponents(1.6, 14.4, 14.4)

D1 = DesignKind.RANDOMIZE_SCHOOLS
D2 = DesignKind.RANDOMIZE_WITHIN_SCHOOLS
D3 = DesignKind.COMPLETELY_RANDOMIZED


class TestDrawRandomization:
    def test_design1_two_schools(self):
        rng = np.random.default_rng(0)
        layout = StudyLayout(a=2, m=(3, 3), n=1)
        for _ in range(10):
            draw = draw_randomization(D1, layout, rng)
            sums = sorted(r.sum() for r in draw.r)
            assert sums == [-3.0, 3.0]
            for r in draw.r:
                assert len(set(r)) == 1

    def test_design2_balance_within_schools(self):
        rng = np.random.default_rng(1)
        layout = StudyLayout(a=3, m=2, n=1)
        for _ in range(10):
            draw = draw_randomization(D2, layout, rng)
            assert all(r.sum() == 0.0 for r in draw.r)

    def test_design2_odd_m_parity_error(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ParityError, match="even teacher count"):
            draw_randomization(D2, StudyLayout(a=2, m=3, n=1), rng)

    def test_design1_odd_a_parity_error(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ParityError, match="even school count"):
            draw_randomization(D1, StudyLayout(a=3, m=2, n=1), rng)

    def test_design3_global_balance(self):
        rng = np.random.default_rng(4)
        layout = StudyLayout(a=3, m=(2, 4, 2), n=1)
        for _ in range(10):
            draw = draw_randomization(D3, layout, rng)
            assert sum(r.sum() for r in draw.r) == 0.0

    def test_design3_odd_total_parity_error(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ParityError, match="even total"):
            draw_randomization(D3, StudyLayout(a=3, m=(2, 1, 2), n=1), rng)

    @pytest.mark.parametrize("kind,m,a", [(D1, 2, 2), (D2, 2, 2), (D3, 2, 2)])
    def test_empirical_moments(self, kind, m, a):
        # mean within 3 standard errors of 0, covariance coefficients
        # within 2 percent of their closed forms
        rng = np.random.default_rng(20090101)
        layout = StudyLayout(a=a, m=m, n=1)
        draws = 100_000
        total = m * a
        acc = np.zeros(total)
        acc2 = np.zeros((total, total))
        for _ in range(draws):
            pooled = np.concatenate(draw_randomization(kind, layout, rng).r)
            acc += pooled
            acc2 += np.outer(pooled, pooled)
        mean = acc / draws
        cov = acc2 / draws - np.outer(mean, mean)
        assert np.abs(mean).max() <= 3.0 / np.sqrt(draws)
        moments = randomization_moments(kind, layout)
        expected_block = moments.cov(0)
        for i in range(a):
            block = cov[i * m : (i + 1) * m, i * m : (i + 1) * m]
            np.testing.assert_allclose(
                block, expected_block, atol=0.02 * np.abs(expected_block).max()
            )


class TestRandomizationMoments:
    def test_design1_cov_is_ones(self):
        moments = randomization_moments(D1, StudyLayout(a=2, m=8, n=1))
        np.testing.assert_allclose(moments.cov(0), np.ones((8, 8)))
        assert all(np.all(mu == 0.0) for mu in moments.mean)

    def test_design2_coefficients(self):
        moments = randomization_moments(D2, StudyLayout(a=2, m=4, n=1))
        np.testing.assert_allclose(
            moments.cov(0), (4 * np.eye(4) - np.ones((4, 4))) / 3.0
        )

    def test_design3_coefficients(self):
        moments = randomization_moments(D3, StudyLayout(a=3, m=2, n=1))
        np.testing.assert_allclose(
            moments.cov(0), (6 * np.eye(2) - np.ones((2, 2))) / 5.0
        )

    def test_cov_is_psd(self):
        for kind in DesignKind:
            moments = randomization_moments(kind, StudyLayout(a=2, m=4, n=1))
            eigs = np.linalg.eigvalsh(moments.cov(0))
            assert eigs.min() >= -1e-12

    def test_heterogeneous_design2_per_school(self):
        moments = randomization_moments(D2, StudyLayout(a=2, m=(2, 4), n=1))
        assert moments.coeff_identity == (2.0, 4.0 / 3.0)

    @pytest.mark.parametrize("kind", [D1, D3])
    def test_heterogeneous_unsupported(self, kind):
        with pytest.raises(ValueError, match="differ across schools"):
            randomization_moments(kind, StudyLayout(a=2, m=(2, 4), n=1))


class TestExpectedTeacherInformation:
    LAYOUT = StudyLayout(a=16, m=8, n=200)

    def test_design1_value(self):
        assert expected_teacher_information(D1, self.LAYOUT, PILOT_TEACHER) == pytest.approx(
            4.705882352941176, rel=1e-12
        )

    def test_design2_value(self):
        assert expected_teacher_information(D2, self.LAYOUT, PILOT_TEACHER) == pytest.approx(
            8.88888888888889, rel=1e-12
        )

    def test_design3_value(self):
        assert expected_teacher_information(D3, self.LAYOUT, PILOT_TEACHER) == pytest.approx(
            8.394832998816323, rel=1e-12
        )

    def test_zero_school_variance_collapses_designs(self):
        vc = TeacherVarianceComponents(0.0, 14.4)
        values = {
            kind: expected_teacher_information(kind, self.LAYOUT, vc)
            for kind in DesignKind
        }
        for value in values.values():
            assert value == pytest.approx(128 / 14.4, rel=1e-12)

    def test_design3_enumeration_oracle(self):
        # exhaustive average of the realized treatment information over all
        # C(6, 3) pooled assignments, via the dense precision matrix
        m, a = 2, 3
        vc = TeacherVarianceComponents(0.7, 1.3)
        vinv = np.linalg.inv(teacher_cov(m, 0.7, 1.3))
        values = []
        for realization in enumerate_randomizations("crd", m, a):
            values.append(sum(r @ vinv @ r for r in realization))
        layout = StudyLayout(a=a, m=m, n=1)
        assert np.mean(values) == pytest.approx(
            expected_teacher_information(D3, layout, vc), rel=1e-12
        )

    def test_design1_every_realization_attains_expectation(self):
        rng = np.random.default_rng(8)
        layout = StudyLayout(a=4, m=4, n=1)
        expected = expected_teacher_information(D1, layout, PILOT_TEACHER)
        for _ in range(20):
            xs = design_matrices(draw_randomization(D1, layout, rng))
            info = teacher_information(xs, PILOT_TEACHER)
            assert info.entries[1, 1] == pytest.approx(expected, rel=1e-12)

    def test_ordering_design2_above_design3_above_design1(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            layout = StudyLayout(
                a=2 * int(rng.integers(1, 9)), m=2 * int(rng.integers(1, 7)), n=1
            )
            vc = TeacherVarianceComponents(
                float(rng.uniform(0.05, 8.0)), float(rng.uniform(0.2, 8.0))
            )
            v1 = expected_teacher_information(D1, layout, vc)
            v2 = expected_teacher_information(D2, layout, vc)
            v3 = expected_teacher_information(D3, layout, vc)
            assert v2 > v3 > v1

    def test_parity_and_homogeneity_errors(self):
        with pytest.raises(ParityError):
            expected_teacher_information(D1, StudyLayout(a=3, m=2, n=1), PILOT_TEACHER)
        with pytest.raises(ValueError, match="differ across schools"):
            expected_teacher_information(D3, StudyLayout(a=2, m=(2, 4), n=1), PILOT_TEACHER)


class TestExpectedStudentInformationGivenD:
    def test_balanced_anchors_exact_instance(self):
        # subset-uniform construction at n = 7 * C(8, 2) is exactly balanced
        a, m, c, n = 16, 8, 2, 196
        ds = [subset_uniform_assignment(m, c, n)] * a
        trace_j = m * n * c**2 / (m * n * 1.6 + n * c**2 * 14.4 + m * 14.4)
        assert expected_student_information_given_D(D1, ds, PILOT_STUDENT) == pytest.approx(
            a * trace_j, rel=1e-9
        )

    def test_pilot_anchors_near_balanced_instance(self):
        # n=200 cannot be exactly pairwise-balanced for m=8, c=2; the
        # construction deviates from the closed forms by ~1e-5 relative
        a, m, c, n = 16, 8, 2, 200
        ds = [subset_uniform_assignment(m, c, n)] * a
        assert expected_student_information_given_D(D1, ds, PILOT_STUDENT) == pytest.approx(
            7.2137, abs=1e-3
        )
        assert expected_student_information_given_D(D2, ds, PILOT_STUDENT) == pytest.approx(
            8.6862, rel=1e-4
        )

    def test_matches_dense_trace_oracle(self):
        rng = np.random.default_rng(31)
        a, m, n = 2, 4, 5
        comps = (0.8, 2.5, 1.2)
        ds = [rng.integers(0, 3, size=(n, m)).astype(float) for _ in range(a)]
        covs = [student_cov(d, *comps) for d in ds]
        vc = StudentVarianceComponents(*comps)
        for kind, name in ((D1, "randomize_schools"), (D2, "within_schools"), (D3, "crd")):
            assert expected_student_information_given_D(kind, ds, vc) == pytest.approx(
                dense_expected_student_info(name, ds, covs), rel=1e-9
            )

    def test_c_equals_m_design2_is_zero(self):
        ds = [np.ones((6, 4))] * 2
        value = expected_student_information_given_D(D2, ds, PILOT_STUDENT)
        assert abs(value) < 1e-12

    def test_heterogeneous_m_rejected(self):
        ds = [np.ones((4, 2)), np.ones((4, 4))]
        with pytest.raises(ValueError, match="differ across schools"):
            expected_student_information_given_D(D2, ds, PILOT_STUDENT)

    @pytest.mark.parametrize(
        "kind,name", [(D1, "randomize_schools"), (D2, "within_schools"), (D3, "crd")]
    )
    def test_enumeration_consistency(self, kind, name):
        # averaging the realized information over every admissible
        # randomization reproduces the trace formula for arbitrary D
        rng = np.random.default_rng(77)
        a, m, n = 2, 2, 4
        ds = [rng.integers(0, 3, size=(n, m)).astype(float) for _ in range(a)]
        vc = StudentVarianceComponents(0.6, 1.7, 0.9)
        values = []
        for realization in enumerate_randomizations(name, m, a):
            xs = [np.column_stack([np.ones(m), r]) for r in realization]
            values.append(student_information(xs, ds, vc).entries[1, 1])
        assert np.mean(values) == pytest.approx(
            expected_student_information_given_D(kind, ds, vc), rel=1e-9
        )


class TestContaminationSpec:
    def test_design3_upper_bound(self):
        ContaminationSpec(D3, 0.5)
        with pytest.raises(ValueError, match="outside"):
            ContaminationSpec(D3, 0.6)

    def test_design2_full_range(self):
        ContaminationSpec(D2, 1.0)

    def test_design1_effective_zero(self):
        assert ContaminationSpec(D1, 0.7).effective_q == 0.0
        assert ContaminationSpec(D2, 0.7).effective_q == 0.7


class TestDrawContamination:
    def _design2_draw(self, rng, m=4, a=3):
        layout = StudyLayout(a=a, m=m, n=1)
        return draw_randomization(D2, layout, rng)

    def test_q_zero_all_clear(self):
        rng = np.random.default_rng(41)
        draw = self._design2_draw(rng)
        out = draw_contamination(draw, 0.0, rng, kind=D2)
        assert all(np.all(ci == 0.0) for ci in out.c)

    def test_design1_never_contaminates(self):
        rng = np.random.default_rng(42)
        layout = StudyLayout(a=4, m=3, n=1)
        for _ in range(10):
            draw = draw_randomization(D1, layout, rng)
            out = draw_contamination(draw, 0.9, rng, kind=D1)
            assert all(np.all(ci == 0.0) for ci in out.c)

    def test_design2_q_one_saturates_controls(self):
        rng = np.random.default_rng(43)
        draw = self._design2_draw(rng)
        out = draw_contamination(draw, 1.0, rng, kind=D2)
        for ri, ci in zip(out.r, out.c):
            np.testing.assert_allclose(ci, (1.0 - ri) / 2.0)

    def test_never_contaminates_treated(self):
        rng = np.random.default_rng(44)
        layout = StudyLayout(a=3, m=4, n=1)
        for _ in range(50):
            draw = draw_randomization(D3, layout, rng)
            out = draw_contamination(draw, 0.5, rng, kind=D3)
            for ri, ci in zip(out.r, out.c):
                assert np.all(ci * (1.0 + ri) == 0.0)

    def test_out_of_range_q(self):
        rng = np.random.default_rng(45)
        draw = self._design2_draw(rng)
        with pytest.raises(ValueError, match="outside"):
            draw_contamination(draw, 0.6, rng, kind=D3)


class TestExpectedContamination:
    def test_design2_level(self):
        layout = StudyLayout(a=3, m=4, n=1)
        means = expected_contamination(D2, layout, 0.5)
        for mu in means:
            np.testing.assert_allclose(mu, 0.25)

    def test_design3_level(self):
        layout = StudyLayout(a=16, m=8, n=1)
        means = expected_contamination(D3, layout, 0.5)
        np.testing.assert_allclose(means[0], 0.2204724409448819, rtol=1e-12)

    def test_design1_zero(self):
        layout = StudyLayout(a=4, m=3, n=1)
        for mu in expected_contamination(D1, layout, 0.8):
            np.testing.assert_allclose(mu, 0.0)

    def test_q_zero(self):
        layout = StudyLayout(a=4, m=4, n=1)
        for kind in DesignKind:
            for mu in expected_contamination(kind, layout, 0.0):
                np.testing.assert_allclose(mu, 0.0)

    def test_design3_monte_carlo(self):
        rng = np.random.default_rng(20090202)
        layout = StudyLayout(a=16, m=8, n=1)
        draws = 20_000
        acc = np.zeros(8)
        for _ in range(draws):
            draw = draw_randomization(D3, layout, rng)
            out = draw_contamination(draw, 0.5, rng, kind=D3)
            acc += out.c[0]
        np.testing.assert_allclose(acc / draws, 0.2204724409448819, rtol=0.01 * 3)


class TestContaminatedMomentMatrix:
    def test_q_zero_reduces_to_reciprocal(self):
        g = np.linalg.inv(teacher_cov(8, 1.6, 14.4))
        e, entry = contaminated_expected_moment_matrix(g, D2, 0.0)
        t_c = np.trace(g @ ((8 * np.eye(8) - np.ones((8, 8))) / 7.0))
        assert entry == pytest.approx(1.0 / t_c, rel=1e-12)
        assert np.all(e[2] == 0.0) and np.all(e[:, 2] == 0.0)

    def test_matches_numeric_inverse_pilot(self):
        g = np.linalg.inv(teacher_cov(8, 1.6, 14.4))
        e, entry = contaminated_expected_moment_matrix(g, D2, 0.5)
        np.testing.assert_allclose(e, contaminated_moment_matrix_numeric(g, 0.5), rtol=1e-12)
        assert entry == pytest.approx(np.linalg.inv(e)[1, 1], rel=1e-10)
        assert entry == pytest.approx(contaminated_treatment_entry_numeric(g, 0.5), rel=1e-10)

    def test_identity_g_hand_value(self):
        _, entry = contaminated_expected_moment_matrix(np.eye(4), D2, 0.5)
        assert entry == pytest.approx(0.375, rel=1e-12)

    def test_q_one_pole(self):
        with pytest.raises(DegenerateContaminationError):
            contaminated_expected_moment_matrix(np.eye(4), D2, 1.0)

    def test_design_restriction(self):
        with pytest.raises(ValueError, match="within_schools"):
            contaminated_expected_moment_matrix(np.eye(4), D1, 0.5)

    def test_zero_information_direction(self):
        # G = J has tr(G Cov(R)) = 0
        with pytest.raises(NonEstimableError):
            contaminated_expected_moment_matrix(np.ones((4, 4)), D2, 0.5)

    def test_monte_carlo_moments(self):
        # empirical average of X'GX over design-2 draws with contamination
        rng = np.random.default_rng(20090203)
        m, q = 4, 0.5
        g = np.linalg.inv(teacher_cov(m, 0.9, 1.7))
        e, _ = contaminated_expected_moment_matrix(g, D2, q)
        layout = StudyLayout(a=2, m=m, n=1)
        acc = np.zeros((3, 3))
        draws = 40_000
        for _ in range(draws):
            draw = draw_randomization(D2, layout, rng)
            draw = draw_contamination(draw, q, rng, kind=D2)
            x = design_matrices(draw)[0]
            acc += x.T @ g @ x
        np.testing.assert_allclose(acc / draws, e, atol=0.02 * np.abs(e).max())


class TestTeacherInflationConsistency:
    def test_inflated_variance_vs_uncontaminated(self):
        # the ratio of the contaminated expected-moment variance to the
        # uncontaminated one reproduces the closed-form teacher inflation
        from multilevel_design import teacher_inflation_design2

        g = teacher_precision(8, PILOT_TEACHER)
        _, entry = contaminated_expected_moment_matrix(g, D2, 0.5)
        t_c = np.trace(g @ ((8 * np.eye(8) - np.ones((8, 8))) / 7.0))
        assert entry * t_c == pytest.approx(
            teacher_inflation_design2(0.5, 8, PILOT_TEACHER), rel=1e-12
        )
