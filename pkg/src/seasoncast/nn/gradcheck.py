"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .core import Tensor, backward


def finite_diff_check(fn, inputs, h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps one Tensor per entry of ``inputs`` to a scalar loss Tensor;
    ``inputs`` are float64 arrays (double precision keeps the difference
    quotients meaningful).  Per input tensor, the largest coordinate-wise
    deviation is taken relative to the gradient's magnitude scale, so
    coordinates whose true gradient happens to be ~0 do not register pure
    difference-quotient roundoff as error.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    backward(loss)
    analytic = [
        t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    worst = 0.0
    for k, base in enumerate(arrays):
        flat = base.ravel()
        fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn(*[Tensor(a) for a in arrays]).data)
            flat[i] = orig - h
            down = float(fn(*[Tensor(a) for a in arrays]).data)
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
        an = analytic[k].ravel()
        scale = max(np.abs(fd).max(), np.abs(an).max(), 1e-8)
        worst = max(worst, float(np.abs(fd - an).max() / scale))
    return worst
