"""Mean-field laboratory for weight-tied two-layer autoencoders.

Trains the mean-field-scaled model with SGD and checks the runs against
the closed-form ReLU predictions, the bounded-activation radial ODEs, the
neuron-subsampling risk formula and the particle-coupling error bounds.
"""

__version__ = "0.1.0"

from .activations import (
    Activation,
    Relu,
    Tanh,
    TanhBumps,
    TanhShift,
    gaussian_derivative_mean,
    parse_activation,
    same_equivalence_class,
)
from .bounded_mf import (
    BoundedMfState,
    ParticleCloud,
    QKernel,
    bounded_risk,
    integrate_particles,
    integrate_two_scalar,
    out_of_sample_risk,
    q_check,
)
from .coupling import CouplingReport, ScalingStudy, coupled_run, scaling_study
from .estimator import TiedAutoencoder
from .idx import IdxPreprocessor, IdxTensor, parse_idx, serialize_idx
from .relu_mf import block_norm_prediction, mf_particles, rescale_factor, risk, two_stage_risk
from .sgd import (
    Checkpoint,
    DivergenceError,
    RiskEstimate,
    TrainConfig,
    estimate_rec_err,
    init_weights,
    reconstruct,
    reconstruct_batch,
    sgd_step,
    subspace_norms,
    train,
)
from .spectral import (
    SpectralModel,
    TwoBlockModel,
    make_spectral_model,
    sample,
    second_moment_trace,
)
from .two_stage import derived_risk, resample_study, subsample_neurons

__all__ = [
    "Activation",
    "Relu",
    "Tanh",
    "TanhBumps",
    "TanhShift",
    "gaussian_derivative_mean",
    "parse_activation",
    "same_equivalence_class",
    "BoundedMfState",
    "ParticleCloud",
    "QKernel",
    "bounded_risk",
    "integrate_particles",
    "integrate_two_scalar",
    "out_of_sample_risk",
    "q_check",
    "CouplingReport",
    "ScalingStudy",
    "coupled_run",
    "scaling_study",
    "TiedAutoencoder",
    "IdxPreprocessor",
    "IdxTensor",
    "parse_idx",
    "serialize_idx",
    "block_norm_prediction",
    "mf_particles",
    "rescale_factor",
    "risk",
    "two_stage_risk",
    "Checkpoint",
    "DivergenceError",
    "RiskEstimate",
    "TrainConfig",
    "estimate_rec_err",
    "init_weights",
    "reconstruct",
    "reconstruct_batch",
    "sgd_step",
    "subspace_norms",
    "train",
    "SpectralModel",
    "TwoBlockModel",
    "make_spectral_model",
    "sample",
    "second_moment_trace",
    "derived_risk",
    "resample_study",
    "subsample_neurons",
]
