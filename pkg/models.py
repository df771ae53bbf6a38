"""
Data models for quantized feed-forward networks.

Integer weights and biases plus a per-layer step size are the stored
ground truth; real-valued weights are always derived from them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import AttackError, ConvLoweringError, RangeError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "none")
LAYER_KINDS = ("affine", "conv2d")
ROLES = ("bias", "weight")
MIN_QUANT_BITS = 2
MAX_QUANT_BITS = 16

_PARAM_PATTERN = re.compile(r"^([Wb])(\d+)_(\d+)(?:_(\d+))?$")


def q_max(quant_bits: int) -> int:
    """Largest value of the symmetric Q-bit range."""
    return 2 ** (quant_bits - 1) - 1


def q_min(quant_bits: int) -> int:
    """Smallest two's-complement value, reachable only through an attack."""
    return -(2 ** (quant_bits - 1))


@dataclass(frozen=True, order=True)
class ParamId:
    """
    Address of one stored parameter.

    All indices are 1-based: layer_index 1 is the input layer, so parameters
    live in layers >= 2. Biases carry col = 0.
    """
    layer_index: int
    role: str
    row: int
    col: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise AttackError(f"Unknown parameter role: {self.role!r}")
        if self.layer_index < 2 or self.row < 1:
            raise AttackError(f"Parameter index out of range: {self!r}")
        if self.role == "bias":
            object.__setattr__(self, "col", 0)
        elif self.col < 1:
            raise AttackError(f"Weight column must be >= 1: {self!r}")

    @property
    def is_bias(self) -> bool:
        return self.role == "bias"

    @property
    def layer_position(self) -> int:
        """0-based position in QuantizedNetwork.layers."""
        return self.layer_index - 2

    def __str__(self) -> str:
        if self.is_bias:
            return f"b{self.layer_index}_{self.row}"
        return f"W{self.layer_index}_{self.row}_{self.col}"

    @classmethod
    def parse(cls, text: str) -> "ParamId":
        """
        Parse the compact form produced by str().

        Examples:
            >>> ParamId.parse("W3_2_2")
            ParamId(layer_index=3, role='weight', row=2, col=2)
            >>> ParamId.parse("b3_1")
            ParamId(layer_index=3, role='bias', row=1, col=0)
        """
        match = _PARAM_PATTERN.match(text.strip())
        if not match:
            raise AttackError(f"Malformed parameter id: {text!r}")
        kind, layer, row, col = match.groups()
        if kind == "W":
            if col is None:
                raise AttackError(f"Weight id needs a column: {text!r}")
            return cls(int(layer), "weight", int(row), int(col))
        if col is not None:
            raise AttackError(f"Bias id takes no column: {text!r}")
        return cls(int(layer), "bias", int(row))


@dataclass(frozen=True)
class ConvGeometry:
    """Spatial metadata of a conv2d layer (square stride and padding)."""
    in_channels: int
    in_height: int
    in_width: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.in_height, self.in_width, self.kernel_h, self.kernel_w) < 1:
            raise ConvLoweringError(f"Non-positive conv dimension in {self}")
        if self.stride < 1 or self.padding < 0:
            raise ConvLoweringError(
                f"Unsupported stride/padding combination: stride={self.stride}, padding={self.padding}"
            )
        for size, kernel, axis in ((self.in_height, self.kernel_h, "height"),
                                   (self.in_width, self.kernel_w, "width")):
            span = size + 2 * self.padding - kernel
            if span < 0:
                raise ConvLoweringError(f"Kernel {axis} {kernel} exceeds padded input {size + 2 * self.padding}")
            if span % self.stride != 0:
                raise ConvLoweringError(
                    f"Unsupported padding/stride combination along {axis}: "
                    f"({size} + 2*{self.padding} - {kernel}) is not a multiple of {self.stride}"
                )

    @property
    def out_height(self) -> int:
        return (self.in_height + 2 * self.padding - self.kernel_h) // self.stride + 1

    @property
    def out_width(self) -> int:
        return (self.in_width + 2 * self.padding - self.kernel_w) // self.stride + 1

    @property
    def in_size(self) -> int:
        return self.in_channels * self.in_height * self.in_width

    @property
    def patch_size(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w


def _frozen_ints(values, name: str, ndim: int) -> np.ndarray:
    try:
        array = np.array(values)
    except ValueError as e:
        raise ShapeError(f"{name} is not a rectangular array: {e}") from e
    if array.size == 0 and array.ndim == 1 and ndim == 2:
        array = array.reshape(0, 0)
    if array.dtype == object or array.dtype.kind not in "iuf":
        raise ShapeError(f"{name} must be numeric, got dtype {array.dtype}")
    if array.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {array.shape}")
    if array.size and not np.all(np.equal(np.mod(array, 1), 0)):
        raise RangeError(f"{name} must contain integers")
    array = array.astype(np.int64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Layer:
    """One non-input layer: integer parameters, step size and activation."""
    kind: str
    integer_weights: np.ndarray  # affine: n_i x n_{i-1}; conv2d: out_c x (in_c*kh*kw)
    integer_bias: np.ndarray  # affine: n_i; conv2d: out_c
    step_size: float
    activation: str
    conv: Optional[ConvGeometry] = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"Unknown layer kind: {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"Unknown activation: {self.activation!r}")
        if not np.isfinite(self.step_size) or self.step_size <= 0:
            raise RangeError(f"step_size must be positive and finite, got {self.step_size}")
        object.__setattr__(self, "step_size", float(self.step_size))
        object.__setattr__(self, "integer_weights", _frozen_ints(self.integer_weights, "integer_weights", 2))
        object.__setattr__(self, "integer_bias", _frozen_ints(self.integer_bias, "integer_bias", 1))

        rows, cols = self.integer_weights.shape
        if rows == 0:
            raise ShapeError("Layer has no output neurons")
        if self.integer_bias.shape[0] != rows:
            raise ShapeError(f"Bias length {self.integer_bias.shape[0]} does not match {rows} weight rows")
        if self.kind == "conv2d":
            if self.conv is None:
                raise ShapeError("conv2d layer requires conv metadata")
            if cols != self.conv.patch_size:
                raise ShapeError(
                    f"conv2d weights need {self.conv.patch_size} columns (in_c*kh*kw), got {cols}"
                )
        elif self.conv is not None:
            raise ShapeError("affine layer must not carry conv metadata")

    @cached_property
    def weights(self) -> np.ndarray:
        """De-quantized weights."""
        values = self.integer_weights * self.step_size
        values.setflags(write=False)
        return values

    @cached_property
    def bias(self) -> np.ndarray:
        """De-quantized bias."""
        values = self.integer_bias * self.step_size
        values.setflags(write=False)
        return values

    @property
    def in_dim(self) -> int:
        if self.conv is not None:
            return self.conv.in_size
        return self.integer_weights.shape[1]

    @property
    def out_dim(self) -> int:
        if self.conv is not None:
            return self.integer_weights.shape[0] * self.conv.out_height * self.conv.out_width
        return self.integer_weights.shape[0]

    def with_codes(self, integer_weights: np.ndarray, integer_bias: np.ndarray) -> "Layer":
        """Copy of this layer with replaced integer parameters."""
        return Layer(self.kind, integer_weights, integer_bias, self.step_size, self.activation, self.conv)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Layer):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.activation == other.activation
            and self.step_size == other.step_size
            and self.conv == other.conv
            and np.array_equal(self.integer_weights, other.integer_weights)
            and np.array_equal(self.integer_bias, other.integer_bias)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class QuantizedNetwork:
    """
    A quantized feed-forward network.

    layers[0] is network layer 2 (layer 1 is the input). For networks produced
    by conv lowering, aliases maps every affine entry of a lowered layer to the
    conv parameter it was copied from.
    """
    quant_bits: int
    layers: Tuple[Layer, ...]
    aliases: Mapping[ParamId, ParamId] = field(default_factory=dict)
    name: Optional[str] = None

    def __post_init__(self):
        if not MIN_QUANT_BITS <= self.quant_bits <= MAX_QUANT_BITS:
            raise RangeError(f"quant_bits must be in [{MIN_QUANT_BITS}, {MAX_QUANT_BITS}], got {self.quant_bits}")
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "aliases", dict(self.aliases))
        if not self.layers:
            raise ShapeError("Network needs at least one non-input layer")

        for position, layer in enumerate(self.layers):
            index = position + 2
            if position > 0 and layer.in_dim != self.layers[position - 1].out_dim:
                raise ShapeError(
                    f"Layer {index} expects {layer.in_dim} inputs but layer {index - 1} "
                    f"produces {self.layers[position - 1].out_dim}"
                )
            last = position == len(self.layers) - 1
            if last and layer.activation != "none":
                raise ShapeError(f"Output layer {index} must have activation 'none'")
            if not last and layer.activation == "none":
                raise ShapeError(f"Hidden layer {index} needs an activation")

        low, high = q_min(self.quant_bits), q_max(self.quant_bits)
        for position, layer in enumerate(self.layers):
            for name, values in (("weight", layer.integer_weights), ("bias", layer.integer_bias)):
                if values.size and (values.min() < low or values.max() > high):
                    raise RangeError(
                        f"Layer {position + 2} has an integer {name} outside [{low}, {high}] for Q={self.quant_bits}"
                    )

    @property
    def depth(self) -> int:
        """Number of layers d, counting the input layer."""
        return len(self.layers) + 1

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def layer_dims(self) -> List[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    @property
    def has_conv(self) -> bool:
        return any(layer.kind == "conv2d" for layer in self.layers)

    @property
    def activations(self) -> List[str]:
        return [layer.activation for layer in self.layers]

    def layer(self, layer_index: int) -> Layer:
        """Layer by 1-based network index (>= 2)."""
        if not 2 <= layer_index <= self.depth:
            raise AttackError(f"Layer index {layer_index} outside [2, {self.depth}]")
        return self.layers[layer_index - 2]

    def check_param(self, param: ParamId) -> None:
        """Raise AttackError unless param addresses a stored parameter."""
        if not 2 <= param.layer_index <= self.depth:
            raise AttackError(f"{param} addresses a layer outside [2, {self.depth}]")
        layer = self.layers[param.layer_position]
        rows, cols = layer.integer_weights.shape
        if param.row > rows or (not param.is_bias and param.col > cols):
            raise AttackError(f"{param} is outside layer {param.layer_index} of shape {rows}x{cols}")

    def code(self, param: ParamId) -> int:
        """Stored integer of a parameter."""
        self.check_param(param)
        layer = self.layers[param.layer_position]
        if param.is_bias:
            return int(layer.integer_bias[param.row - 1])
        return int(layer.integer_weights[param.row - 1, param.col - 1])

    def step_size(self, param: ParamId) -> float:
        return self.layers[param.layer_position].step_size

    def value(self, param: ParamId) -> float:
        """De-quantized value of a parameter."""
        return self.code(param) * self.step_size(param)

    @cached_property
    def _alias_groups(self) -> Dict[ParamId, Tuple[ParamId, ...]]:
        by_origin: Dict[ParamId, List[ParamId]] = {}
        for position, origin in self.aliases.items():
            by_origin.setdefault(origin, []).append(position)
        groups: Dict[ParamId, Tuple[ParamId, ...]] = {}
        for origin, positions in by_origin.items():
            group = tuple(sorted(positions))
            for position in group:
                groups[position] = group
        return groups

    @cached_property
    def _lowered_layers(self) -> frozenset:
        return frozenset(param.layer_index for param in self.aliases)

    def alias_group(self, param: ParamId) -> Tuple[ParamId, ...]:
        """All positions that store the same parameter as param (itself included)."""
        self.check_param(param)
        if param.layer_index in self._lowered_layers and param not in self.aliases:
            raise AttackError(f"{param} is a structural zero of a lowered convolution")
        return self._alias_groups.get(param, (param,))

    def origin(self, param: ParamId) -> ParamId:
        """Original conv parameter of a lowered entry (param itself otherwise)."""
        return self.aliases.get(param, param)

    def representative(self, origin: ParamId) -> ParamId:
        """Representative lowered position of an original conv parameter."""
        positions = [p for p, o in self.aliases.items() if o == origin]
        if not positions:
            raise AttackError(f"{origin} has no lowered position")
        return min(positions)

    def parameters(self) -> Iterator[ParamId]:
        """
        Every attackable parameter in (layer, role, row, col) order.

        Lowered conv layers contribute one representative per alias group;
        their structural zeros are not parameters.
        """
        found: List[ParamId] = []
        for position, layer in enumerate(self.layers):
            index = position + 2
            if index in self._lowered_layers:
                found.extend(
                    group[0] for p, group in self._alias_groups.items()
                    if p.layer_index == index and group[0] == p
                )
                continue
            rows, cols = layer.integer_weights.shape
            found.extend(ParamId(index, "bias", row) for row in range(1, rows + 1))
            found.extend(
                ParamId(index, "weight", row, col)
                for row in range(1, rows + 1)
                for col in range(1, cols + 1)
            )
        return iter(sorted(found))

    def check_symmetric_range(self) -> None:
        """Raise RangeError if any integer uses the attack-only value -2^(Q-1)."""
        low = q_min(self.quant_bits)
        for position, layer in enumerate(self.layers):
            for name, values in (("weight", layer.integer_weights), ("bias", layer.integer_bias)):
                if values.size and values.min() == low:
                    raise RangeError(
                        f"Layer {position + 2} has integer {name} {low}, outside the symmetric "
                        f"range [{-q_max(self.quant_bits)}, {q_max(self.quant_bits)}]"
                    )

    def with_layers(self, layers: Sequence[Layer]) -> "QuantizedNetwork":
        return QuantizedNetwork(self.quant_bits, tuple(layers), self.aliases, self.name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedNetwork):
            return NotImplemented
        return (
            self.quant_bits == other.quant_bits
            and len(self.layers) == len(other.layers)
            and all(a == b for a, b in zip(self.layers, other.layers))
            and dict(self.aliases) == dict(other.aliases)
        )

    __hash__ = None


def sigmoid(x):
    """Logistic function, evaluated without overflow."""
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=float)))


def activate(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    return x


def conv2d_apply(layer: Layer, X: np.ndarray) -> np.ndarray:
    """
    Direct convolution over a batch of flattened (C, H, W) inputs.

    Args:
        layer: conv2d layer
        X: Batch of shape (N, C*H*W)

    Returns:
        Batch of shape (N, out_c*out_h*out_w), channel-major
    """
    geo = layer.conv
    batch = X.reshape(-1, geo.in_channels, geo.in_height, geo.in_width)
    pad = geo.padding
    if pad:
        batch = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(batch, (geo.kernel_h, geo.kernel_w), axis=(2, 3))
    windows = windows[:, :, ::geo.stride, ::geo.stride]
    filters = layer.weights.reshape(-1, geo.in_channels, geo.kernel_h, geo.kernel_w)
    out = np.einsum("nchwij,ocij->nohw", windows, filters)
    out = out + layer.bias[None, :, None, None]
    return out.reshape(out.shape[0], -1)


def _apply_layer(layer: Layer, X: np.ndarray) -> np.ndarray:
    if layer.kind == "conv2d":
        return conv2d_apply(layer, X)
    return X @ layer.weights.T + layer.bias


def _as_batch(net: QuantizedNetwork, X) -> np.ndarray:
    batch = np.asarray(X, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ShapeError(f"Expected inputs of dimension {net.input_dim}, got shape {batch.shape}")
    return batch


def forward_batch(net: QuantizedNetwork, X) -> np.ndarray:
    """Forward pass over a batch of shape (N, n_1)."""
    values = _as_batch(net, X)
    for layer in net.layers:
        values = activate(layer.activation, _apply_layer(layer, values))
    return values


def forward(net: QuantizedNetwork, x) -> np.ndarray:
    """
    Concrete forward pass with de-quantized parameters.

    Args:
        net: Network to evaluate
        x: Input vector of length n_1

    Returns:
        Output vector of length n_d

    Raises:
        ShapeError: If x has the wrong length
    """
    vector = np.asarray(x, dtype=float)
    if vector.ndim != 1:
        raise ShapeError(f"Expected a 1-D input vector, got shape {vector.shape}")
    return forward_batch(net, vector[None, :])[0]


def forward_trace(net: QuantizedNetwork, x) -> List[np.ndarray]:
    """
    All intermediate vectors of a forward pass.

    Order: input, then per layer the pre-activation and, for hidden layers,
    the post-activation. The output layer contributes only its affine value.
    """
    values = _as_batch(net, np.asarray(x, dtype=float)[None, :])
    trace = [values[0]]
    for layer in net.layers:
        values = _apply_layer(layer, values)
        trace.append(values[0])
        if layer.activation != "none":
            values = activate(layer.activation, values)
            trace.append(values[0])
    return trace


def classify(y) -> int:
    """1-based argmax; the smallest index wins ties."""
    return int(np.argmax(np.asarray(y))) + 1
