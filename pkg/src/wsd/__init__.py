"""Spectral-clipping denoising and sparse reconstruction for localization microscopy frames."""
from .config import ConfigFileError, RunConfig, dump_config, load_config, parse_config
from .denoise import (DenoiseReport, PatchPlan, WsdConfig, clip, denoise_frame,
                      denoise_stack_tiled, denoise_tiled, denoise_vector, forward_project,
                      inverse_project, select_threshold)
from .measurement import (AugmentedMatrix, ImagingGeometry, MeasurementMatrix,
                          augment_background, bin_frame, bin_matrix, bin_vector,
                          build_measurement_matrix, column_weights, unvectorize, vectorize)
from .operators import (FactorizationError, OperatorBundle, PrecisionConfig, PrecisionError,
                        WorkingMaps, build_operator_bundle, compute_operator,
                        emit_working_precision, factor_operator, row_orthonormalize)
from .simulate import (GroundTruthScene, NoiseModel, PhotonLaw, SimulatedFrame, apply_noise,
                       render_noiseless, run_benchmark, sample_scene, simulate_frame, snr_db)
from .solver import (CsProblem, CsSolution, MergedImage, SolverSettings, log_visualize,
                     merge_reconstructions, solve_cs)

__version__ = "0.1.0"
