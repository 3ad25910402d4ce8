"""Student-level information for balanced course assignments.

When every student takes c courses with distinct teachers and the sections
are evenly filled, the expected student-level information has a closed form
for each design.  The best design for students depends on c: with c = m
(every student sees every teacher) within-school randomization carries no
information at all, while with c = 1 it is the most efficient choice.
"""

from multilevel_design import (
    BalancedSpec,
    DesignKind,
    StudentVarianceComponents,
    balanced_student_information,
    efficiency_condition,
)

vc = StudentVarianceComponents(sigma_s2=1.6, sigma_t2=14.4, sigma_eta2=14.4)
m, n, a = 8, 200, 16

print(f"{a} schools, {m} teachers, {n} students per school\n")
print(f"{'c':>3} {'by school':>11} {'within school':>14} {'crd':>9}   better for students")
for c in (1, 2, 4, 8):
    spec = BalancedSpec(m=m, n=n, c=c, a=a)
    values = {
        kind: balanced_student_information(kind, spec, vc) for kind in DesignKind
    }
    within = values[DesignKind.RANDOMIZE_WITHIN_SCHOOLS]
    by_school = values[DesignKind.RANDOMIZE_SCHOOLS]
    tag = "within school" if within >= by_school else "by school"
    print(
        f"{c:>3} {by_school:>11.4f} {within:>14.4f} "
        f"{values[DesignKind.COMPLETELY_RANDOMIZED]:>9.4f}   {tag}"
    )

print("\nThe switch happens exactly where n(m-c) sigma_s2 = m(c-1) sigma_eta2:")
c = 4
boundary = m * (c - 1) * vc.sigma_eta2 / (n * (m - c))
for sigma_s2 in (0.5 * boundary, boundary, 2.0 * boundary):
    probe = StudentVarianceComponents(sigma_s2, vc.sigma_t2, vc.sigma_eta2)
    spec = BalancedSpec(m=m, n=n, c=c, a=a)
    flag = efficiency_condition(spec, probe)
    diff = balanced_student_information(
        DesignKind.RANDOMIZE_WITHIN_SCHOOLS, spec, probe
    ) - balanced_student_information(DesignKind.RANDOMIZE_SCHOOLS, spec, probe)
    print(f"  sigma_s2 = {sigma_s2:.4f}: condition {str(flag):>5}, "
          f"information difference {diff:+.5f}")
