"""Sparse angle-domain MIMO channel estimation from coarsely quantized
measurements: message passing with built-in prior/noise parameter estimation,
a clustered channel simulator, reference baselines, and an experiment harness.
"""

from .baselines import IhtOptions, amp_oracle, hard_threshold, iht, least_squares
from .channel_sim import (
    AngleChannel,
    ChannelConfig,
    TrainingBlock,
    assemble_operator,
    generate_channel,
    load_channel_artifact,
    make_training_block,
    nmse_db,
    save_channel_artifact,
    simulate_measurements,
    steering_dft,
)
from .gamp import GampOptions, GampResult, GampState, damp, run_gamp
from .input_channel import (
    BernoulliGmInput,
    ParamLambda,
    Responsibilities,
    fit_signal_prior,
    posterior_x_moments,
    prior_log_evidence,
    sample_prior,
)
from .operators import LinearOperator, from_dense, mean_removal_wrap
from .output_channel import (
    AwgnOutputChannel,
    ParamTheta,
    QuantizedOutputChannel,
    QuantizedVector,
    QuantizerSpec,
    default_quantizer,
    dequantize,
    log_bin_probability,
    posterior_z_moments,
    quantize,
)
from .param_estimation import (
    JointEstimate,
    OuterLoopOptions,
    estimate_joint,
    initialize_params,
    update_lambda,
    update_theta,
)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
