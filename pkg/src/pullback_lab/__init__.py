"""Pullback and exponential attractors of a damped wave equation on time-dependent spaces."""
from .attractors import (AbsorbingBall, AttractorSection, ContinuityCurve, EquiAttractionTable,
                         NonAbsorptionError, PullbackNonConvergence, PullbackParams,
                         absorbing_ball, continuity_curve, equi_attraction_scan,
                         pullback_attractor, upper_semicontinuity_scan)
from .experiments import (ExperimentConfig, ResultRecord, emit_plot_data, replay, run_suite)
from .kernels import BACKEND
from .model import (DegenerateMassError, ModalState, ModelConfig, NonlinearitySpec, equilibrium,
                    nonlinear_modal, rhs, validate_assumptions)
from .process import (BlowUpError, DecayFit, EvolutionSpec, LyapunovConfig, StepBudgetError,
                      TrajectorySample, decay_fit, evolve, evolve_cloud, evolve_pair,
                      evolve_trajectory, lipschitz_in_eps, lyapunov_eval, sample_ball,
                      split_evolve)
from .quasistability import (CoveringBudgetError, ExpAttractorSection, HolderFit,
                             QuasiStabilityFit, attraction_transfer, build_exponential_attractor,
                             dimension_bound, estimate_quasi_stability, gamma_distance,
                             holder_continuity_fit, holder_family, packing_estimate,
                             transport_section)
from .spaces import (PhaseMetric, PointCloud, RhoProfile, box_counting_dim, distance, greedy_net,
                     hausdorff_semidist, norm_sq, symmetric_hausdorff)

__version__ = "0.1.0"
