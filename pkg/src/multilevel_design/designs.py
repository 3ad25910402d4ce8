"""The three randomization designs: draws, moments, and expected information.

Design 1 assigns half of the schools (with all their teachers) to treatment,
design 2 assigns half of the teachers within every school, and design 3
assigns half of the pooled teacher list regardless of school.  All three are
balanced, so E[R_i] = 0 and the per-school covariance of the +-1 vector R_i
is k_I*I + k_J*J with design-specific coefficients.

Contamination marks control teachers that adopt the treatment anyway: within
school i each control teacher independently flips its indicator to 1 with
probability (1'R_i + m)*q/m, so a school full of controls under design 1
never contaminates.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model_core import (
    NonEstimableError,
    StudentVarianceComponents,
    StudyLayout,
    TeacherVarianceComponents,
    TreatmentAssignment,
    _assignment_blocks,
    solve_student_system,
)


class ParityError(ValueError):
    """A design's balance constraint (even counts) is violated."""


class DegenerateContaminationError(ValueError):
    """q = 1 makes the contamination column collinear with treatment."""


class DesignKind(Enum):
    RANDOMIZE_SCHOOLS = "randomize_schools"
    RANDOMIZE_WITHIN_SCHOOLS = "within_schools"
    COMPLETELY_RANDOMIZED = "crd"

    def check_parity(self, layout: StudyLayout) -> None:
        """Raise ParityError naming the violated evenness constraint."""
        if self is DesignKind.RANDOMIZE_SCHOOLS and layout.a % 2 != 0:
            raise ParityError(f"randomize_schools needs an even school count, got a={layout.a}")
        if self is DesignKind.RANDOMIZE_WITHIN_SCHOOLS:
            for i, m_i in enumerate(layout.m):
                if m_i % 2 != 0:
                    raise ParityError(
                        f"within_schools needs an even teacher count per school, "
                        f"school {i} has m={m_i}"
                    )
        if self is DesignKind.COMPLETELY_RANDOMIZED and layout.total_teachers % 2 != 0:
            raise ParityError(
                f"crd needs an even total teacher count, got {layout.total_teachers}"
            )


def contamination_bounds(kind: DesignKind) -> tuple[float, float]:
    """Admissible [lo, hi] range of the contamination intensity q."""
    if kind is DesignKind.COMPLETELY_RANDOMIZED:
        return 0.0, 0.5
    return 0.0, 1.0


def validate_contamination(kind: DesignKind, q: float) -> None:
    lo, hi = contamination_bounds(kind)
    if not lo <= q <= hi:
        raise ValueError(f"q={q} outside [{lo}, {hi}] for design {kind.value}")


@dataclass(frozen=True)
class ContaminationSpec:
    """Contamination intensity attached to a design.

    Randomizing by school makes contamination impossible, so the effective
    intensity for that design is pinned to zero whatever q was requested.
    """

    kind: DesignKind
    q: float

    def __post_init__(self):
        validate_contamination(self.kind, self.q)

    @property
    def effective_q(self) -> float:
        if self.kind is DesignKind.RANDOMIZE_SCHOOLS:
            return 0.0
        return self.q


@dataclass(frozen=True, eq=False)
class RandomizationMoments:
    """First two moments of the per-school treatment vectors.

    ``mean[i]`` is E[R_i] (always zero for the balanced designs) and
    Cov(R_i) = coeff_identity[i]*I + coeff_ones[i]*J.
    """

    mean: tuple[np.ndarray, ...]
    coeff_identity: tuple[float, ...]
    coeff_ones: tuple[float, ...]

    def cov(self, i: int) -> np.ndarray:
        m = self.mean[i].size
        return self.coeff_identity[i] * np.eye(m) + self.coeff_ones[i] * np.ones((m, m))


def draw_randomization(
    kind: DesignKind, layout: StudyLayout, rng: np.random.Generator
) -> TreatmentAssignment:
    """Draw one equiprobable balanced realization of the design."""
    kind.check_parity(layout)
    if kind is DesignKind.RANDOMIZE_SCHOOLS:
        treated = np.zeros(layout.a, dtype=bool)
        treated[rng.permutation(layout.a)[: layout.a // 2]] = True
        r = tuple(
            np.full(m_i, 1.0 if treated[i] else -1.0) for i, m_i in enumerate(layout.m)
        )
    elif kind is DesignKind.RANDOMIZE_WITHIN_SCHOOLS:
        r = []
        for m_i in layout.m:
            ri = -np.ones(m_i)
            ri[rng.permutation(m_i)[: m_i // 2]] = 1.0
            r.append(ri)
        r = tuple(r)
    else:
        total = layout.total_teachers
        pooled = -np.ones(total)
        pooled[rng.permutation(total)[: total // 2]] = 1.0
        r = tuple(
            pooled[offset : offset + m_i]
            for offset, m_i in zip(np.cumsum((0,) + layout.m[:-1]), layout.m)
        )
    return TreatmentAssignment(r=r)


def randomization_moments(kind: DesignKind, layout: StudyLayout) -> RandomizationMoments:
    """Closed-form E[R_i] and Cov(R_i) coefficients for each school.

    Designs 1 and 3 require a homogeneous teacher count; design 2 randomizes
    school by school, so its coefficients are available per school.
    """
    kind.check_parity(layout)
    mean = tuple(np.zeros(m_i) for m_i in layout.m)
    if kind is DesignKind.RANDOMIZE_SCHOOLS:
        layout.homogeneous_m()
        k_i = tuple(0.0 for _ in layout.m)
        k_j = tuple(1.0 for _ in layout.m)
    elif kind is DesignKind.RANDOMIZE_WITHIN_SCHOOLS:
        k_i = tuple(m_i / (m_i - 1) for m_i in layout.m)
        k_j = tuple(-1.0 / (m_i - 1) for m_i in layout.m)
    else:
        m = layout.homogeneous_m()
        total = m * layout.a
        k_i = tuple(total / (total - 1) for _ in layout.m)
        k_j = tuple(-1.0 / (total - 1) for _ in layout.m)
    return RandomizationMoments(mean=mean, coeff_identity=k_i, coeff_ones=k_j)


def expected_teacher_information(
    kind: DesignKind, layout: StudyLayout, vc: TeacherVarianceComponents
) -> float:
    """Expected treatment-entry information of the teacher model.

    randomize_schools:  m*a / (sigma_eps2 + sigma_v2*m)
    within_schools:     m*a / sigma_eps2
    crd:                the first value times
                        1 + (m-1)*m*a/(m*a-1) * sigma_v2/sigma_eps2
    """
    kind.check_parity(layout)
    m = layout.homogeneous_m()
    a = layout.a
    if vc.sigma_eps2 <= 0.0:
        raise np.linalg.LinAlgError("teacher covariance is singular when sigma_eps2 = 0")
    base = m * a / (vc.sigma_eps2 + vc.sigma_v2 * m)
    if kind is DesignKind.RANDOMIZE_SCHOOLS:
        return base
    if kind is DesignKind.RANDOMIZE_WITHIN_SCHOOLS:
        return m * a / vc.sigma_eps2
    return base * (1.0 + (m - 1) * m * a / (m * a - 1) * vc.sigma_v2 / vc.sigma_eps2)


def _school_traces(di: np.ndarray, vc: StudentVarianceComponents) -> tuple[float, float]:
    """tr(D' Sigma^-1 D J) and tr(D' Sigma^-1 D) for one school block."""
    u = di.sum(axis=1)
    t_j = float(u @ solve_student_system(di, vc, u))
    t_full = float(np.sum(di * solve_student_system(di, vc, di)))
    return t_j, t_full


def expected_student_information_given_D(
    kind: DesignKind, d, vc: StudentVarianceComponents
) -> float:
    """Expected treatment information of the student model for a fixed assignment.

    Averaging X' D' Sigma^-1 D X over the randomization leaves the trace of
    D' Sigma^-1 D against Cov(R):

    randomize_schools:  sum_i tr(D_i' Sigma_i^-1 D_i J)
    within_schools:     sum_i tr(D_i' Sigma_i^-1 D_i (m I - J)) / (m - 1)
    crd:                sum_i tr(D_i' Sigma_i^-1 D_i (m a I - J)) / (m a - 1)
    """
    blocks = _assignment_blocks(d)
    if not blocks:
        raise ValueError("need at least one school block")
    widths = {b.shape[1] for b in blocks}
    if len(widths) != 1:
        raise ValueError(f"teacher counts differ across schools: {sorted(widths)}")
    m = widths.pop()
    a = len(blocks)
    if kind is DesignKind.RANDOMIZE_SCHOOLS and a % 2 != 0:
        raise ParityError(f"randomize_schools needs an even school count, got a={a}")
    if kind is DesignKind.RANDOMIZE_WITHIN_SCHOOLS and m % 2 != 0:
        raise ParityError(f"within_schools needs an even teacher count, got m={m}")
    if kind is DesignKind.COMPLETELY_RANDOMIZED and (m * a) % 2 != 0:
        raise ParityError(f"crd needs an even total teacher count, got {m * a}")
    total = 0.0
    for di in blocks:
        t_j, t_full = _school_traces(di, vc)
        if kind is DesignKind.RANDOMIZE_SCHOOLS:
            total += t_j
        elif kind is DesignKind.RANDOMIZE_WITHIN_SCHOOLS:
            total += (m * t_full - t_j) / (m - 1)
        else:
            total += (m * a * t_full - t_j) / (m * a - 1)
    return total


def draw_contamination(
    assignment: TreatmentAssignment,
    q: float,
    rng: np.random.Generator,
    kind: DesignKind | None = None,
) -> TreatmentAssignment:
    """Attach Bernoulli contamination indicators to control teachers.

    Within school i every control teacher independently contaminates with
    probability (1'R_i + m_i)*q/m_i.  Treated teachers never contaminate.
    """
    if kind is not None:
        validate_contamination(kind, q)
    elif not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    c = []
    for ri in assignment.r:
        m_i = ri.size
        controls = ri == -1.0
        if not controls.any():
            # an all-treated school has nobody to contaminate
            c.append(np.zeros(m_i))
            continue
        prob = (ri.sum() + m_i) * q / m_i
        if prob > 1.0 + 1e-12:
            raise ValueError(
                f"q={q} gives contamination probability {prob:g} > 1 for a school "
                f"with {int((ri.sum() + m_i) / 2)} treated of {m_i} teachers"
            )
        z = rng.random(m_i) < min(prob, 1.0)
        c.append(controls * z)
    return TreatmentAssignment(r=assignment.r, c=tuple(c))


def expected_contamination(
    kind: DesignKind, layout: StudyLayout, q: float
) -> tuple[np.ndarray, ...]:
    """Per-school mean contamination E[C_i] = (q/2m)(m*1 - Cov(R_i)*1).

    randomize_schools: 0; within_schools: q/2 per teacher;
    crd: (q/2) * a(m-1)/(ma-1) per teacher.
    """
    validate_contamination(kind, q)
    kind.check_parity(layout)
    m = layout.homogeneous_m()
    if kind is DesignKind.RANDOMIZE_SCHOOLS:
        level = 0.0
    elif kind is DesignKind.RANDOMIZE_WITHIN_SCHOOLS:
        level = q / 2.0
    else:
        a = layout.a
        level = q / 2.0 * a * (m - 1) / (m * a - 1)
    return tuple(np.full(m, level) for _ in range(layout.a))


def contaminated_expected_moment_matrix(
    g: np.ndarray, kind: DesignKind, q: float
) -> tuple[np.ndarray, float]:
    """Expected moment matrix E[X' G X] under within-school contamination.

    For the three-column model X = [1 R C] with design-2 randomization the
    expectation depends on G only through t_J = tr(G J), t_C = tr(G Cov(R))
    and t_G = tr(G):

        E = [[t_J,        0,          (q/2) t_J ],
             [0,          t_C,       -(q/2) t_C ],
             [(q/2) t_J, -(q/2) t_C,  (q^2/4)(t_J + t_C) + (q(1-q)/2) t_G]]

    Returns E together with the treatment entry of its inverse,
    (1/t_C) * (1 + q/(2(1-q)) * t_C/t_G), the anticipated variance of the
    treatment coefficient per school.
    """
    if kind is not DesignKind.RANDOMIZE_WITHIN_SCHOOLS:
        raise ValueError("the closed-form moment matrix is available for within_schools only")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    if q == 1.0:
        raise DegenerateContaminationError(
            "q = 1 contaminates every control teacher, so the contamination column "
            "is collinear with the treatment column"
        )
    g = np.asarray(g, dtype=float)
    m = g.shape[0]
    if g.ndim != 2 or g.shape[1] != m:
        raise ValueError(f"G must be square, got {g.shape}")
    if float(np.abs(g - g.T).max()) > 1e-10 * max(float(np.abs(g).max()), 1.0):
        raise ValueError("G must be symmetric")
    if m < 2:
        raise ParityError("within_schools needs at least 2 teachers per school")
    t_j = float(g.sum())
    t_g = float(np.trace(g))
    t_c = (m * t_g - t_j) / (m - 1)
    e = np.array(
        [
            [t_j, 0.0, q / 2.0 * t_j],
            [0.0, t_c, -q / 2.0 * t_c],
            [
                q / 2.0 * t_j,
                -q / 2.0 * t_c,
                q**2 / 4.0 * (t_j + t_c) + q * (1.0 - q) / 2.0 * t_g,
            ],
        ]
    )
    if t_c <= 0.0:
        raise NonEstimableError("tr(G Cov(R)) is zero; treatment carries no information")
    entry = (1.0 / t_c) * (1.0 + q / (2.0 * (1.0 - q)) * t_c / t_g)
    return e, entry
