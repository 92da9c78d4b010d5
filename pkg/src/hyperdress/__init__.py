"""Cayley-Dickson algebra, sigma operators along rays and the dressing
solver for KdV, mKdV and heat type equations, with residual checks."""
from .algebra import (CDNumber, DivisionByZero, associator, basis_table, cd_conj, cd_inv, cd_mul, cd_mul_table,
                      cd_norm_sq, cd_pow, commutator, find_zero_divisor, format_table)
from .diffops import (Axis, GridFunction, PreconditionViolated, SigmaSpec, UnmappedAxis, apply_partial_sigma,
                      apply_sigma, check_real_coefficients, dr_algebra_check)
from .dressing import (DressingSolution, GridConfig, Mode, NoDispersionSolution, Scenario, ScenarioError,
                       SingularOperator, assemble_A, build_F, check_constraints, hilbert_norm, miura_transform,
                       right_linearity_check, scalar_product, solve_dressing)
from .line_integral import (QuadratureConfig, RayFoliation, TailNotDecayed, antideriv_from, antideriv_to_infinity,
                            check_inversion)
from .matrix import CDMatrix, ShapeMismatch
from .residuals import (ResidualReport, divergence_check, refine_and_estimate, residual_heat, residual_hyperbolic,
                        residual_kdv, residual_mkdv, residual_ray_identities, residual_schroedinger)

__version__ = "0.1.0"
