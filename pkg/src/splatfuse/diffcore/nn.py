"""Layer-level building blocks: linear maps, activations and MLPs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ops
from .rng import RngStream
from .tape import DimensionError, Parameter, Var


@dataclass
class Layer:
    W: Parameter
    b: Parameter
    activation: str | None = None

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]


def glorot_uniform(c_in: int, c_out: int, rng: RngStream) -> np.ndarray:
    a = np.sqrt(6.0 / (c_in + c_out))
    return rng.generator().uniform(-a, a, size=(c_in, c_out))


def make_layer(c_in: int, c_out: int, rng: RngStream, name: str,
               activation: str | None = None) -> Layer:
    return Layer(Parameter(glorot_uniform(c_in, c_out, rng), f"{name}.W"),
                 Parameter(np.zeros(c_out), f"{name}.b"),
                 activation)


def make_mlp(widths: Sequence[int], rng: RngStream, name: str,
             hidden_activation: str = "relu") -> list[Layer]:
    """Layers ``widths[0] -> widths[1] -> ... -> widths[-1]``; the last layer emits logits."""
    if len(widths) < 2:
        raise ValueError("an MLP needs at least input and output widths")
    layers = []
    for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        layers.append(make_layer(cin, cout, rng.substream(i), f"{name}.{i}",
                                 None if last else hidden_activation))
    return layers


def linear_forward(x, W, b) -> Var:
    return ops.linear(x, W, b)


def activation_forward(x, kind: str) -> Var:
    return ops.activation(x, kind)


def softmax_forward(z) -> Var:
    return ops.softmax(z)


def mlp_forward(x, layers: Sequence[Layer]) -> Var:
    h = x
    for i, layer in enumerate(layers):
        width = ops.as_var(h).shape[-1]
        if layer.W.shape[0] != width:
            raise DimensionError(f"layer {i} expects width {layer.W.shape[0]}, got {width}")
        h = ops.linear(h, layer.W, layer.b)
        if layer.activation is not None:
            h = ops.activation(h, layer.activation)
    return ops.as_var(h)


def mlp_parameters(layers: Sequence[Layer]) -> list[Parameter]:
    return [p for layer in layers for p in layer.parameters()]
