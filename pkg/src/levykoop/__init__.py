"""Learning SDEs with Brownian and truncated alpha-stable noise from snapshot data,
and computing mean exit times and escape probabilities of the learned dynamics."""
from .polydict import (MonomialBasis, PolyCoeffs, build_basis, coordinate_selector, evaluate_row,
                       from_terms, multiply_by_coordinate)
from .stoch_sim import (LevySpec, SdeModel, SnapshotSet, c_alpha, generate_snapshots,
                        levy_second_moment, sample_levy_increment, sample_levy_increments)
from .koopman import (GeneratorEstimate, estimate_generator, generator_matrix, gram_matrices,
                      koopman_matrix)
from .sysid import (IdentifiedModel, SeparationError, assemble_model, identify, identify_drift,
                    render_table, separate_diffusions)
from .nonlocal_pde import (Domain, Grid, ScalarField, SolverError, assemble_generator, field_error,
                           solve_ep, solve_met, solve_met_ep)
from .config import ConfigError, ExperimentConfig
from .pipeline import StageError, run_pipeline

__version__ = "0.1.0"
