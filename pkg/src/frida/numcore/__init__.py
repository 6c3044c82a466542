"""Small deterministic numeric kernel: dense nets, losses, Adam, random streams."""
from frida.numcore.adam import AdamState, adam_step
from frida.numcore.kernels import BACKEND
from frida.numcore.losses import log_softmax, sigmoid_xent, softmax, softmax_xent
from frida.numcore.nn import Dense, DenseNet, backward, forward, forward_cached
from frida.numcore.rng import RngStream, gauss_sample

__all__ = [
    "AdamState", "adam_step", "BACKEND", "log_softmax", "sigmoid_xent", "softmax",
    "softmax_xent", "Dense", "DenseNet", "backward", "forward", "forward_cached",
    "RngStream", "gauss_sample",
]
