"""SIMO optical receiver simulation.

Power-augmented LMMSE combining and maximum-likelihood detection for
photon-counting, photomultiplier-tube, and avalanche-photodiode front ends:
exact moment kernels, analytical bit MSE, and a deterministic Monte-Carlo
MSE/BER engine with a sweep CLI.
"""

from .channel import (
    ChannelParams,
    Modulation,
    PhysicalConfig,
    ReceiverKind,
    average_photon_rate,
    derive_channel_params,
    excess_noise_factor,
    pc_log_likelihood,
    pg_log_likelihood,
    sample_pc,
    sample_pg,
)
from .estimator import (
    AugmentSpec,
    ConditioningError,
    CovarianceBlocks,
    EstimatorCoefficients,
    analytical_mse_block,
    analytical_mse_direct,
    analytical_mse_linear,
    assemble_blocks,
    augment_measurements,
    bit_cross_cov,
    build_estimator,
    cov_block,
    estimate,
    mean_augmented,
    scale_blocks,
)
from .moments import (
    DetectorParams,
    MomentContext,
    MomentOrderError,
    gaussian_raw_moment,
    mixed_poisson_cross_term,
    mixed_poisson_term,
    pg_expansion_coeff,
    pg_raw_moment,
    poisson_raw_moment,
    stirling2,
)
from .receivers import LmmseReceiver, MaximumLikelihoodReceiver
from .simulation import (
    ExperimentConfig,
    McResult,
    ml_detect,
    run_mc_ber,
    run_mc_mse,
    substream,
    threshold_detect,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec",
    "ChannelParams",
    "ConditioningError",
    "CovarianceBlocks",
    "DetectorParams",
    "EstimatorCoefficients",
    "ExperimentConfig",
    "LmmseReceiver",
    "MaximumLikelihoodReceiver",
    "McResult",
    "Modulation",
    "MomentContext",
    "MomentOrderError",
    "PhysicalConfig",
    "ReceiverKind",
    "analytical_mse_block",
    "analytical_mse_direct",
    "analytical_mse_linear",
    "assemble_blocks",
    "augment_measurements",
    "average_photon_rate",
    "bit_cross_cov",
    "build_estimator",
    "cov_block",
    "derive_channel_params",
    "estimate",
    "excess_noise_factor",
    "gaussian_raw_moment",
    "mean_augmented",
    "mixed_poisson_cross_term",
    "mixed_poisson_term",
    "ml_detect",
    "pc_log_likelihood",
    "pg_expansion_coeff",
    "pg_log_likelihood",
    "pg_raw_moment",
    "poisson_raw_moment",
    "run_mc_ber",
    "run_mc_mse",
    "sample_pc",
    "sample_pg",
    "scale_blocks",
    "stirling2",
    "substream",
    "threshold_detect",
    "__version__",
]
