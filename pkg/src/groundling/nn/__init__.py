from .layers import (
    AttentionPool,
    Conv1d,
    Conv2d,
    Linear,
    Param,
    conv1d_out_len,
    l2_normalize,
    l2_normalize_backward,
    relu,
    relu_backward,
    softmax_cross_entropy,
)
from .optim import Adam, warmup_linear_decay

__all__ = [
    "AttentionPool", "Conv1d", "Conv2d", "Linear", "Param", "Adam",
    "conv1d_out_len", "l2_normalize", "l2_normalize_backward",
    "relu", "relu_backward", "softmax_cross_entropy", "warmup_linear_decay",
]
