from .core import Parameter, Tensor, backward, grad_enabled, no_grad
from .gradcheck import finite_diff_check
from .layers import BatchNorm2d, ConvBlock, ConvCircular, MaxPool2, Upsample2
from .ops import (
    PADDING_MODES,
    batchnorm_eval,
    batchnorm_train,
    concat_channels,
    conv2d_circular,
    conv2d_circular_reference,
    maxpool2,
    mse_loss,
    pad_one,
    relu,
    upsample2,
)
from .optim import Adam, adam_update, step_lr

__all__ = [
    "Adam",
    "BatchNorm2d",
    "ConvBlock",
    "ConvCircular",
    "MaxPool2",
    "PADDING_MODES",
    "Parameter",
    "Tensor",
    "Upsample2",
    "adam_update",
    "backward",
    "batchnorm_eval",
    "batchnorm_train",
    "concat_channels",
    "conv2d_circular",
    "conv2d_circular_reference",
    "finite_diff_check",
    "grad_enabled",
    "maxpool2",
    "mse_loss",
    "no_grad",
    "pad_one",
    "relu",
    "step_lr",
    "upsample2",
]
