"""Differentiable numerics: tensors, operations, parameters, optimizer."""

from .tensor import (
    Tensor,
    absolute,
    add,
    add_scalar,
    clamped_power,
    mean_all,
    mul,
    relu,
    scale,
    sigmoid,
    sub,
    sum_all,
)
from .ops import (
    avg_pool2,
    channel_max,
    channel_mean,
    concat_channels,
    conv2d,
    forward_diff,
    global_avg_pool,
    global_max_pool,
    max_pool2,
    mean0,
    narrow0,
    reshape,
    stack0,
    upsample2_nearest,
)
from .params import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    ParamStore,
    load_checkpoint,
    read_checkpoint_meta,
    save_checkpoint,
)
from .optim import (
    BETA1,
    BETA2,
    EPSILON,
    LR_DECAY_PER_EPOCH,
    LR_FLOOR,
    OptimizerState,
    adam_step,
    lr_schedule,
)

__all__ = [
    "Tensor",
    "absolute",
    "add",
    "add_scalar",
    "clamped_power",
    "mean_all",
    "mul",
    "relu",
    "scale",
    "sigmoid",
    "sub",
    "sum_all",
    "avg_pool2",
    "channel_max",
    "channel_mean",
    "concat_channels",
    "conv2d",
    "forward_diff",
    "global_avg_pool",
    "global_max_pool",
    "max_pool2",
    "mean0",
    "narrow0",
    "reshape",
    "stack0",
    "upsample2_nearest",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "ParamStore",
    "load_checkpoint",
    "read_checkpoint_meta",
    "save_checkpoint",
    "BETA1",
    "BETA2",
    "EPSILON",
    "LR_DECAY_PER_EPOCH",
    "LR_FLOOR",
    "OptimizerState",
    "adam_step",
    "lr_schedule",
]
