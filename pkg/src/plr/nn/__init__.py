"""Minimal dense-tensor network engine with hand-derived gradients.

Tensors are numpy arrays shaped (batch, channels, height, width), float32 by
default and float64 inside the finite-difference harness. There is no
autodiff graph; every op exposes a forward and a matching backward, and the
two fixed architectures chain them explicitly.
"""

from .ops import (
    bce_loss,
    concat_channels_backward,
    concat_channels_forward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    maxpool2_backward,
    maxpool2_forward,
    mse_loss,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    upsample_nearest2_backward,
    upsample_nearest2_forward,
)
from .net import EncoderClassifier, UNet, UNetConfig, net_from_weights
from .optim import (
    OptState,
    adadelta_step,
    make_optimizer,
    optimizer_step,
    plateau_scheduler_step,
    sgd_step,
)
from .weights import ModelWeights, load_weights, save_weights
from .gradcheck import GRADCHECK_OPS, grad_check, run_all_checks
