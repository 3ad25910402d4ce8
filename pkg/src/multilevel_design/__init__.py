"""Anticipated variance of treatment effects in two-level teacher/student designs.

The package compares three ways of randomizing a teacher-directed
intervention (by school, within schools, completely at random) at both the
teacher and student response level, including control-group contamination,
via exact closed forms and a seeded Monte Carlo engine.
"""

from .closed_forms import (
    BalancedSpec,
    balanced_student_information,
    balanced_traces,
    efficiency_condition,
    student_inflation_design2,
    teacher_inflation_design2,
)
from .designs import (
    ContaminationSpec,
    DegenerateContaminationError,
    DesignKind,
    ParityError,
    RandomizationMoments,
    contaminated_expected_moment_matrix,
    draw_contamination,
    draw_randomization,
    expected_contamination,
    expected_student_information_given_D,
    expected_teacher_information,
    randomization_moments,
)
from .model_core import (
    AssignmentMatrix,
    InformationMatrix,
    NonEstimableError,
    StudentVarianceComponents,
    StudyLayout,
    TeacherVarianceComponents,
    TreatmentAssignment,
    TreatmentVariance,
    combined_information,
    design_matrices,
    solve_student_system,
    student_covariance,
    student_information,
    teacher_covariance,
    teacher_information,
    teacher_precision,
    treatment_variance,
)
from .simulator import (
    AssignmentPolicy,
    DensityEstimate,
    EstimatorLevelStudy,
    LevelResult,
    PolicyKind,
    SimulationConfig,
    SimulationResult,
    draw_assignment,
    empirical_power,
    estimator_variance_study,
    generate_student_responses,
    generate_teacher_responses,
    gls_estimate,
    kde_density,
    replicate_streams,
    simulate_anticipated_variance,
)

__version__ = "0.1.0"

__all__ = [
    "AssignmentMatrix",
    "AssignmentPolicy",
    "BalancedSpec",
    "ContaminationSpec",
    "DegenerateContaminationError",
    "DensityEstimate",
    "DesignKind",
    "EstimatorLevelStudy",
    "InformationMatrix",
    "LevelResult",
    "NonEstimableError",
    "ParityError",
    "PolicyKind",
    "RandomizationMoments",
    "SimulationConfig",
    "SimulationResult",
    "StudentVarianceComponents",
    "StudyLayout",
    "TeacherVarianceComponents",
    "TreatmentAssignment",
    "TreatmentVariance",
    "balanced_student_information",
    "balanced_traces",
    "combined_information",
    "contaminated_expected_moment_matrix",
    "design_matrices",
    "draw_assignment",
    "draw_contamination",
    "draw_randomization",
    "efficiency_condition",
    "empirical_power",
    "estimator_variance_study",
    "expected_contamination",
    "expected_student_information_given_D",
    "expected_teacher_information",
    "generate_student_responses",
    "generate_teacher_responses",
    "gls_estimate",
    "kde_density",
    "randomization_moments",
    "replicate_streams",
    "simulate_anticipated_variance",
    "solve_student_system",
    "student_covariance",
    "student_inflation_design2",
    "student_information",
    "teacher_covariance",
    "teacher_inflation_design2",
    "teacher_information",
    "teacher_precision",
    "treatment_variance",
]
