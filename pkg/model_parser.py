"""
Model file parsing for quantized networks.

A model file is UTF-8 JSON:
    {"quant_bits": 4,
     "layers": [{"kind": "affine", "integer_weights": [[-7, -3], [3, 7]],
                 "integer_bias": [0, 0], "step_size": 0.1, "activation": "relu"}, ...]}
conv2d layers add {"conv": {"in_channels", "in_height", "in_width",
"kernel": [kh, kw], "stride", "padding"}} and store their filters as an
out_channels x (in_channels*kh*kw) matrix.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from errors import ModelParseError
from models import ConvGeometry, Layer, ParamId, QuantizedNetwork

logger = logging.getLogger(__name__)


class ConvFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    in_channels: int
    in_height: int
    in_width: int
    kernel: Tuple[int, int]
    stride: int = 1
    padding: int = 0


class LayerFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["affine", "conv2d"] = "affine"
    integer_weights: List[List[int]]
    integer_bias: List[int]
    step_size: float = Field(gt=0)
    activation: Literal["relu", "sigmoid", "tanh", "none"]
    conv: Optional[ConvFile] = None


class NetworkFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    quant_bits: int
    layers: List[LayerFile] = Field(min_length=1)
    name: Optional[str] = None
    aliases: Optional[Dict[str, str]] = None


class ModelParser:
    """Parser for quantized network JSON files."""

    def parse_file(self, file_path: Union[str, Path]) -> QuantizedNetwork:
        """
        Parse a model file and return a QuantizedNetwork.

        Args:
            file_path: Path to the model JSON file

        Returns:
            Validated network

        Raises:
            FileNotFoundError: If the file doesn't exist
            ModelParseError: If the file is not valid JSON or violates the schema
            ShapeError: If layer dimensions do not chain
            RangeError: If an integer lies outside the symmetric Q-bit range
        """
        path = Path(file_path)
        if not path.exists():
            raise FileNotFoundError(f"Model file not found: {file_path}")
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        net = self.parse_text(text, default_name=path.stem)
        logger.info("Loaded %s: Q=%d, dims=%s", path.name, net.quant_bits, net.layer_dims)
        return net

    def parse_text(self, text: str, default_name: Optional[str] = None) -> QuantizedNetwork:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ModelParseError(f"Invalid JSON in model file: {e}") from e
        return self.parse_dict(data, default_name)

    def parse_dict(self, data: Any, default_name: Optional[str] = None) -> QuantizedNetwork:
        try:
            spec = NetworkFile.model_validate(data)
        except ValidationError as e:
            raise ModelParseError(f"Model file does not match the schema: {e}") from e

        layers = [self._build_layer(layer) for layer in spec.layers]
        aliases = {}
        if spec.aliases:
            aliases = {ParamId.parse(k): ParamId.parse(v) for k, v in spec.aliases.items()}
        net = QuantizedNetwork(spec.quant_bits, tuple(layers), aliases, spec.name or default_name)
        net.check_symmetric_range()
        return net

    def _build_layer(self, spec: LayerFile) -> Layer:
        conv = None
        if spec.conv is not None:
            conv = ConvGeometry(
                in_channels=spec.conv.in_channels,
                in_height=spec.conv.in_height,
                in_width=spec.conv.in_width,
                kernel_h=spec.conv.kernel[0],
                kernel_w=spec.conv.kernel[1],
                stride=spec.conv.stride,
                padding=spec.conv.padding,
            )
        return Layer(spec.kind, spec.integer_weights, spec.integer_bias, spec.step_size, spec.activation, conv)


def model_to_dict(net: QuantizedNetwork) -> Dict[str, Any]:
    """Serializable form of a network (integer ground truth only)."""
    layers = []
    for layer in net.layers:
        entry: Dict[str, Any] = {
            "kind": layer.kind,
            "integer_weights": layer.integer_weights.tolist(),
            "integer_bias": layer.integer_bias.tolist(),
            "step_size": layer.step_size,
            "activation": layer.activation,
        }
        if layer.conv is not None:
            geo = layer.conv
            entry["conv"] = {
                "in_channels": geo.in_channels,
                "in_height": geo.in_height,
                "in_width": geo.in_width,
                "kernel": [geo.kernel_h, geo.kernel_w],
                "stride": geo.stride,
                "padding": geo.padding,
            }
        layers.append(entry)
    data: Dict[str, Any] = {"quant_bits": net.quant_bits, "layers": layers}
    if net.name:
        data["name"] = net.name
    if net.aliases:
        data["aliases"] = {str(k): str(v) for k, v in sorted(net.aliases.items())}
    return data


def load_model(file_path: Union[str, Path]) -> QuantizedNetwork:
    """
    Convenience function to load a model file.

    Args:
        file_path: Path to the model JSON file

    Returns:
        QuantizedNetwork
    """
    return ModelParser().parse_file(file_path)


def save_model(net: QuantizedNetwork, file_path: Union[str, Path]) -> None:
    """Write a network in the model JSON schema."""
    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(net), f, indent=2)
        f.write("\n")
