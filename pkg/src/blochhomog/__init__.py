"""Bloch dispersion, cell functions, and homogenized wavefields for periodic media."""

__version__ = "0.1.0"

from .medium import (MediumSpec, Inclusion, CoefficientTable, fourier_table,
                     evaluate_coefficient, spec_from_dict, spec_to_dict,
                     load_spec, two_phase_1d, disk_2d)
from .bloch import (PlaneWaveBasis, assemble_operator, solve_bands,
                    brillouin_path, dispersion_diagram, DispersionDiagram,
                    BandGap, find_band_gaps, export_diagram_csv,
                    eigenpair_at_gamma, GammaPair, fix_phase)
from .cell import (symmetrize_full, symmetrize_partial, pencil_blocks,
                   ConstrainedSolver, CellFunctions, solve_cell_functions,
                   EffectiveCoefficients, effective_coefficients,
                   extrapolated_coefficients, dispersion_expansion_check,
                   CompatibilityViolation, SingularSystem)
from .source import (GaussianEnvelope, SourceSpec, FrequencySpec,
                     make_frequency, sample_source, projection_check, NotInGap)
from .fields import (WavenumberQuadrature, wavenumber_quadrature,
                     quadrature_self_test, FieldOnGrid, synthesize_periodic,
                     exact_bloch_solution, branch_solution, effective_envelope,
                     envelope_pde_residual, homogenized_field,
                     export_field_csv, export_field_npz,
                     GapViolation, EnvelopeSingularity)
from .convergence import (ReferenceConfig, reference_solution, relative_error,
                          slope_fit, ErrorReport, convergence_study,
                          DecayCheckFailed)
