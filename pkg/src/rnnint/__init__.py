"""Training and analysis of recurrent networks performing multiplexed leaky
integrations."""

from .model import (
    Activation,
    InputKind,
    LINEAR,
    NetworkParams,
    RELU,
    TaskSpec,
    Trajectory,
    apply_activation,
    make_encoders_decoders,
    multichannel_gi,
    rank1_gi,
    run,
    run_batch,
    sample_inputs,
    sigmoid_activation,
    step,
    target_of,
)
from .losses import (
    ChiMatrix,
    ProxyDomain,
    averaged_linear_loss,
    batch_loss,
    chi_empirical,
    chi_white_noise,
    proxy_generic_loss,
    proxy_multi_loss,
    proxy_relu_loss,
)
from .training import (
    DaleMask,
    OptimizerState,
    TrainRecord,
    adam,
    dale_init,
    dale_project,
    gd,
    grad_bptt,
    grad_linear_analytic,
    grad_proxy_generic,
    grad_proxy_relu,
    make_dale_mask,
    optimizer_step,
    train,
)

__version__ = "0.1.0"
