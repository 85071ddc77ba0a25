"""Recurrent networks on a complete digraph of neurons, with a small
from-scratch autodiff engine, trainers for tabular and image tasks, and
a CLI for experiments."""

from .tensor import Tensor, no_grad
from .web import WebConfig, WebParams, forward, init_params

__all__ = [
    "Tensor",
    "no_grad",
    "WebConfig",
    "WebParams",
    "forward",
    "init_params",
]
