"""Stateful layer objects built on the functional ops."""

from __future__ import annotations

import numpy as np

from ..errors import GraphStateError
from .core import Parameter
from .ops import batchnorm_eval, batchnorm_train, conv2d_circular, maxpool2, relu, upsample2


class ConvCircular:
    """3x3 wrap-padded convolution with fan-in-scaled uniform init."""

    def __init__(self, name, c_in, c_out, rng, padding_mode="circular-both", dtype=np.float32):
        bound = np.sqrt(6.0 / (c_in * 9))
        w = rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3))
        self.weight = Parameter(f"{name}.weight", w.astype(dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(c_out, dtype=dtype))
        self.name = name
        self.c_in = c_in
        self.c_out = c_out
        self.padding_mode = padding_mode

    def __call__(self, x):
        return conv2d_circular(x, self.weight, self.bias, self.padding_mode)

    def parameters(self):
        return [self.weight, self.bias]


class BatchNorm2d:
    """Per-channel batch normalization with running statistics.

    Running stats start uninitialized; evaluating before any training pass
    (or before a checkpoint provided them) raises.
    """

    def __init__(self, name, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.name = name
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.initialized = False

    def __call__(self, x, training):
        if training:
            out, mean64, var64 = batchnorm_train(x, self.gamma, self.beta, self.eps)
            m = 1.0 - self.momentum
            self.running_mean = (
                m * self.running_mean + self.momentum * mean64.astype(self.running_mean.dtype)
            )
            self.running_var = (
                m * self.running_var + self.momentum * var64.astype(self.running_var.dtype)
            )
            self.initialized = True
            return out
        if not self.initialized:
            raise GraphStateError(
                f"{self.name}: eval-mode batchnorm before any training update "
                "and no stored statistics"
            )
        return batchnorm_eval(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps
        )

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def load_buffers(self, mean, var):
        self.running_mean = np.asarray(mean, dtype=self.running_mean.dtype)
        self.running_var = np.asarray(var, dtype=self.running_var.dtype)
        self.initialized = True


class ConvBlock:
    """conv -> batchnorm -> relu, the building unit of both architectures."""

    def __init__(self, name, c_in, c_out, rng, padding_mode, dtype=np.float32):
        self.conv = ConvCircular(f"{name}.conv", c_in, c_out, rng, padding_mode, dtype)
        self.bn = BatchNorm2d(f"{name}.bn", c_out, dtype=dtype)

    def __call__(self, x, training):
        return relu(self.bn(self.conv(x), training))

    def parameters(self):
        return self.conv.parameters() + self.bn.parameters()


class MaxPool2:
    def __call__(self, x):
        return maxpool2(x)


class Upsample2:
    def __call__(self, x):
        return upsample2(x)
