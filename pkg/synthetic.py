"""
Seeded random quantized networks for tests and benchmarks.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from errors import ConfigurationError
from models import ACTIVATIONS, ConvGeometry, Layer, QuantizedNetwork
from quant import quantize_layer


@dataclass(frozen=True)
class SyntheticSpec:
    dims: Tuple[int, ...]  # n_1 ... n_d
    quant_bits: int = 4
    activation: str = "relu"
    seed: int = 0


def _quantized_layer(rng: np.random.Generator, rows: int, cols: int, quant_bits: int, activation: str) -> Layer:
    W = rng.uniform(-1.0, 1.0, size=(rows, cols))
    b = rng.uniform(-1.0, 1.0, size=rows)
    int_w, int_b, step = quantize_layer(W, b, quant_bits)
    return Layer("affine", int_w, int_b, step, activation)


def generate_synthetic(spec: SyntheticSpec) -> QuantizedNetwork:
    """
    Random network with weights and biases uniform in [-1, 1], quantized per layer.

    Equal specs give identical networks.

    Raises:
        ConfigurationError: If fewer than two layer sizes are given or the activation is unknown
    """
    dims = tuple(spec.dims)
    if len(dims) < 2:
        raise ConfigurationError(f"Need at least an input and an output layer, got dims={list(dims)}")
    if any(d < 1 for d in dims):
        raise ConfigurationError(f"Layer sizes must be positive, got dims={list(dims)}")
    if spec.activation not in ACTIVATIONS or spec.activation == "none":
        raise ConfigurationError(f"Hidden activation must be relu, sigmoid or tanh, got {spec.activation!r}")

    rng = np.random.default_rng(spec.seed)
    layers = []
    for position in range(1, len(dims)):
        last = position == len(dims) - 1
        layers.append(
            _quantized_layer(rng, dims[position], dims[position - 1], spec.quant_bits,
                             "none" if last else spec.activation)
        )
    return QuantizedNetwork(spec.quant_bits, tuple(layers), name=f"synthetic-{spec.seed}")


def generate_synthetic_conv(
    in_shape: Tuple[int, int, int],
    out_channels: int,
    kernel: Tuple[int, int],
    head_dims: Sequence[int],
    stride: int = 1,
    padding: int = 0,
    quant_bits: int = 4,
    seed: int = 0,
) -> QuantizedNetwork:
    """
    Random network: one ReLU conv2d layer followed by affine layers of head_dims.

    Args:
        in_shape: (channels, height, width) of the input
        out_channels: Number of filters
        kernel: (kh, kw)
        head_dims: Sizes of the affine layers after the conv (last is the output)
    """
    if not head_dims:
        raise ConfigurationError("Conv network needs at least one affine output layer")
    rng = np.random.default_rng(seed)
    geo = ConvGeometry(in_shape[0], in_shape[1], in_shape[2], kernel[0], kernel[1], stride, padding)
    filters = _quantized_layer(rng, out_channels, geo.patch_size, quant_bits, "relu")
    conv = Layer("conv2d", filters.integer_weights, filters.integer_bias, filters.step_size, "relu", geo)
    layers = [conv]
    previous = conv.out_dim
    for position, size in enumerate(head_dims):
        last = position == len(head_dims) - 1
        layers.append(_quantized_layer(rng, size, previous, quant_bits, "none" if last else "relu"))
        previous = size
    return QuantizedNetwork(quant_bits, tuple(layers), name=f"synthetic-conv-{seed}")
