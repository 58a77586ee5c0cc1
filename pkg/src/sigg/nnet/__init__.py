"""Minimal differentiable-computation layer backing the models."""

from . import autodiff
from .autodiff import Variable, backward, constant, no_grad, softmax_temperature
from .checkpoint import (KIND_INCEPTION, KIND_TRAIN, read_checkpoint,
                         restore_rng_state, rng_state_tensor, write_checkpoint)
from .gradcheck import grad_check
from .layers import (BatchNorm, Embedding, Linear, LSTMCell, SpectralLinear,
                     embedding_forward, layer_norm, linear_forward)
from .params import (ParamStore, adam_step, orthogonal_init,
                     tune_allocator, uniform_init)

__all__ = [
    "autodiff", "Variable", "backward", "constant", "no_grad",
    "softmax_temperature", "read_checkpoint", "write_checkpoint",
    "rng_state_tensor", "restore_rng_state", "KIND_TRAIN", "KIND_INCEPTION",
    "grad_check", "BatchNorm", "Embedding", "Linear", "LSTMCell",
    "SpectralLinear", "embedding_forward", "layer_norm", "linear_forward",
    "ParamStore", "adam_step", "orthogonal_init", "tune_allocator",
    "uniform_init",
]
