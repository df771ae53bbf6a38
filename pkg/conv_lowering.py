"""
Lowering of conv2d layers to equivalent affine layers.

Every filter tap is copied to each matrix entry it touches; the returned
network records, per copied entry, which original conv parameter it aliases,
so an attack on one stored parameter reaches all of its copies.
"""

import logging
from typing import Dict, List

import numpy as np

from models import Layer, ParamId, QuantizedNetwork

logger = logging.getLogger(__name__)


def _lower_layer(layer: Layer, layer_index: int, aliases: Dict[ParamId, ParamId]) -> Layer:
    geo = layer.conv
    out_c = layer.integer_weights.shape[0]
    oh, ow = geo.out_height, geo.out_width
    hw = geo.in_height * geo.in_width
    codes = np.zeros((out_c * oh * ow, geo.in_size), dtype=np.int64)
    bias = np.repeat(layer.integer_bias, oh * ow)

    for o in range(out_c):
        for oy in range(oh):
            for ox in range(ow):
                row = (o * oh + oy) * ow + ox
                aliases[ParamId(layer_index, "bias", row + 1)] = ParamId(layer_index, "bias", o + 1)
                for c in range(geo.in_channels):
                    for i in range(geo.kernel_h):
                        iy = oy * geo.stride + i - geo.padding
                        if not 0 <= iy < geo.in_height:
                            continue
                        for j in range(geo.kernel_w):
                            ix = ox * geo.stride + j - geo.padding
                            if not 0 <= ix < geo.in_width:
                                continue
                            tap = (c * geo.kernel_h + i) * geo.kernel_w + j
                            col = c * hw + iy * geo.in_width + ix
                            codes[row, col] = layer.integer_weights[o, tap]
                            aliases[ParamId(layer_index, "weight", row + 1, col + 1)] = (
                                ParamId(layer_index, "weight", o + 1, tap + 1)
                            )
    return Layer("affine", codes, bias, layer.step_size, layer.activation)


def lower_conv(net: QuantizedNetwork) -> QuantizedNetwork:
    """
    Replace every conv2d layer by an equivalent dense affine layer.

    Args:
        net: Network that may contain conv2d layers

    Returns:
        Network of affine layers only, with the alias table filled in.
        Networks without conv layers are returned unchanged.

    Raises:
        ConvLoweringError: Raised earlier, when the conv geometry is built
    """
    if not net.has_conv:
        return net
    aliases: Dict[ParamId, ParamId] = dict(net.aliases)
    layers: List[Layer] = []
    for position, layer in enumerate(net.layers):
        if layer.kind == "conv2d":
            lowered = _lower_layer(layer, position + 2, aliases)
            logger.debug(
                "Lowered conv layer %d to a %dx%d affine matrix",
                position + 2, *lowered.integer_weights.shape,
            )
            layers.append(lowered)
        else:
            layers.append(layer)
    return QuantizedNetwork(net.quant_bits, tuple(layers), aliases, net.name)
