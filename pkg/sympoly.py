"""
Abstract transformers for parameters known only up to an interval.

A bound parameter is routed through one of four transformers:
    - first-layer weights: weighted input neuron (kappa_le*x - eta <= w*x <= kappa_ge*x + eta)
    - hidden weights after ReLU: weighted ReLU, relaxing w*ReLU(x) jointly
    - hidden weights after sigmoid/tanh: weighted activation cells
    - biases: the lower bound takes w_l, the upper bound w_u

Hidden-weight terms are expressed over the pre-activation node and folded
into the successor's row; the original edge is zeroed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from absdomain import (
    DEFAULT_SLACK,
    AbstractElement,
    AbstractNetwork,
    AffineRows,
    InputRegion,
    LinExpr,
    Verdict,
    activation_fn,
    back_substitute,
    check_argmax,
    propagate,
    secant_slopes,
)
from config import FpSlack
from conv_lowering import lower_conv
from errors import ConfigurationError
from models import ParamId, QuantizedNetwork
from quant import ParamInterval

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SymbolicParamBinding:
    """A parameter constrained to the sign-uniform interval [lo, hi]."""
    param: ParamId
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ConfigurationError(f"Empty range [{self.lo}, {self.hi}] for {self.param}")
        if self.lo < 0 < self.hi:
            raise ConfigurationError(f"Range [{self.lo}, {self.hi}] for {self.param} is not sign-uniform")

    @classmethod
    def from_interval(cls, param: ParamId, interval: ParamInterval) -> "SymbolicParamBinding":
        return cls(param, interval.lo, interval.hi)

    @classmethod
    def point(cls, param: ParamId, value: float) -> "SymbolicParamBinding":
        return cls(param, value, value)


class WeightedNode(AbstractElement):
    """Auxiliary node w * f(x) for w in a range, expressed over the pre-activation node x."""


def _weighted(a_le: LinExpr, a_ge: LinExpr, l: float, u: float) -> WeightedNode:
    return WeightedNode(a_le, a_ge, float(l), float(u))


def weighted_relu_transform(relu_elem: AbstractElement, w_range: Tuple[float, float]) -> WeightedNode:
    """
    Joint relaxation of w * ReLU(x) for w in [w_l, w_u].

    Args:
        relu_elem: ReLU-output element <a_le, a_ge, l, u> with l >= 0
        w_range: (w_l, w_u); a mixed-sign range is accepted
    """
    w_l, w_u = w_range
    if w_l > w_u:
        raise ConfigurationError(f"Empty weight range [{w_l}, {w_u}]")
    a_le, a_ge, l, u = relu_elem.a_le, relu_elem.a_ge, relu_elem.l, relu_elem.u
    if w_l >= 0:
        return _weighted(a_le.scale(w_l), a_ge.scale(w_u), w_l * l, w_u * u)
    if w_u <= 0:
        return _weighted(a_ge.scale(w_l), a_le.scale(w_u), w_l * u, w_u * l)
    return _weighted(a_ge.scale(w_l), a_ge.scale(w_u), w_l * u, w_u * u)


def weighted_input_transform(
    input_bounds: Tuple[float, float], w_range: Tuple[float, float]
) -> Tuple[float, float, float]:
    """
    Boundary parameters with kappa_le*x - eta <= w*x <= kappa_ge*x + eta
    on the rectangle [x_l, x_u] x [w_l, w_u].

    A point input interval falls into one of the sign cases and is exact.

    Returns:
        (kappa_le, kappa_ge, eta)
    """
    x_l, x_u = input_bounds
    w_l, w_u = w_range
    if x_l > x_u or w_l > w_u:
        raise ConfigurationError(f"Empty rectangle [{x_l}, {x_u}] x [{w_l}, {w_u}]")
    if x_l >= 0:
        return w_l, w_u, 0.0
    if x_u <= 0:
        return w_u, w_l, 0.0
    width = x_u - x_l
    kappa_le = (w_l * x_u - w_u * x_l) / width
    kappa_ge = (w_u * x_u - w_l * x_l) / width
    eta = x_u * x_l * (w_l - w_u) / width
    return kappa_le, kappa_ge, eta


def symbolic_bias_transform(
    absnet: AbstractNetwork, source: int, weights_row, w_range: Tuple[float, float]
) -> AbstractElement:
    """Affine node W . x_source + b with b in [w_l, w_u]."""
    w_l, w_u = w_range
    row = np.asarray(weights_row, dtype=float)
    a_le = LinExpr({source: row}, float(w_l))
    a_ge = LinExpr({source: row.copy()}, float(w_u))
    l, _ = back_substitute(a_le, absnet)
    _, u = back_substitute(a_ge, absnet)
    return AbstractElement(a_le, a_ge, l, u)


def weighted_act_transform(
    pre_elem: AbstractElement, w_range: Tuple[float, float], kind: str
) -> WeightedNode:
    """
    Relaxation of w * g(x) for g in {sigmoid, tanh} and a sign-uniform w range.

    kappa is the secant slope over [l, u], kappa' = min(g'(l), g'(u)).

    Raises:
        ConfigurationError: For a mixed-sign range or a missing node location
    """
    w_l, w_u = w_range
    if w_l > w_u:
        raise ConfigurationError(f"Empty weight range [{w_l}, {w_u}]")
    if w_l < 0 < w_u:
        raise ConfigurationError(f"Weighted {kind} needs a sign-uniform range, got [{w_l}, {w_u}]")
    if pre_elem.node is None:
        raise ConfigurationError("Weighted activation needs the pre-activation node's location")
    g, _ = activation_fn(kind)
    l, u = pre_elem.l, pre_elem.u
    gl, gu = float(g(l)), float(g(u))
    kappa, kappa_min = secant_slopes(l, u, kind)
    positive = w_l >= 0

    def line(x0: float, y0: float, slope: float) -> LinExpr:
        return pre_elem.node.expr(slope, y0 - slope * x0)

    if kind == "sigmoid" or l >= 0:
        # g > 0 on [l, u]: scale the plain element by the matching weight end
        lower_slope = kappa if l >= 0 else kappa_min
        upper_slope = kappa if u <= 0 else kappa_min
        if positive:
            return _weighted(line(l, w_l * gl, w_l * lower_slope), line(u, w_u * gu, w_u * upper_slope),
                             w_l * gl, w_u * gu)
        return _weighted(line(u, w_l * gu, w_l * upper_slope), line(l, w_u * gl, w_u * lower_slope),
                         w_l * gu, w_u * gl)

    if u <= 0:
        if positive:
            return _weighted(line(l, w_u * gl, w_u * kappa_min), line(u, w_l * gu, w_l * kappa),
                             w_u * gl, w_l * gu)
        return _weighted(line(u, w_u * gu, w_u * kappa), line(l, w_l * gl, w_l * kappa_min),
                         w_u * gu, w_l * gl)

    if positive:
        return _weighted(line(l, w_u * gl, w_l * kappa_min), line(u, w_u * gu, w_l * kappa_min),
                         w_u * gl, w_u * gu)
    return _weighted(line(u, w_l * gu, w_u * kappa_min), line(l, w_l * gl, w_u * kappa_min),
                     w_l * gu, w_l * gl)


class BindingRewriter:
    """Edits affine rows so bound parameters enter through their transformers."""

    def __init__(self, net: QuantizedNetwork, bindings: Sequence[SymbolicParamBinding]):
        self.net = net
        self.by_layer: Dict[int, List[Tuple[ParamId, float, float]]] = {}
        for binding in bindings:
            for position in net.alias_group(binding.param):
                self.by_layer.setdefault(position.layer_position, []).append(
                    (position, binding.lo, binding.hi)
                )

    def __call__(self, absnet: AbstractNetwork, layer_position: int, source: int, rows: AffineRows) -> None:
        layer = self.net.layers[layer_position]
        for position, lo, hi in self.by_layer.get(layer_position, []):
            j = position.row - 1
            if position.is_bias:
                original = layer.bias[j]
                rows.lower_const[j] += lo - original
                rows.upper_const[j] += hi - original
                continue

            k = position.col - 1
            if layer_position == 0:
                bounds = (float(absnet.layers[0].lb[k]), float(absnet.layers[0].ub[k]))
                kappa_le, kappa_ge, eta = weighted_input_transform(bounds, (lo, hi))
                rows.set_entry(j, source, k, kappa_le, kappa_ge)
                rows.lower_const[j] -= eta
                rows.upper_const[j] += eta
                continue

            rows.set_entry(j, source, k, 0.0, 0.0)
            kind = absnet.layers[source].kind
            if kind == "relu":
                node = weighted_relu_transform(absnet.element(source, k), (lo, hi))
            else:
                node = weighted_act_transform(absnet.element(source - 1, k), (lo, hi), kind)
            rows.add_terms(j, node.a_le, node.a_ge)


def abstract(
    net: QuantizedNetwork,
    region: InputRegion,
    bindings: Sequence[SymbolicParamBinding] = (),
    slack: FpSlack = DEFAULT_SLACK,
) -> AbstractNetwork:
    """
    Abstract the network with the given parameters bound to intervals.

    Several bindings compose; each alias position of a lowered conv
    parameter is bound to the same interval.

    Raises:
        AttackError: If a binding addresses no stored parameter
    """
    net = lower_conv(net)
    return propagate(net, region, slack, BindingRewriter(net, bindings))


def analyze(
    net: QuantizedNetwork,
    region: InputRegion,
    target: int,
    binding: SymbolicParamBinding,
    slack: FpSlack = DEFAULT_SLACK,
) -> Verdict:
    """Proved iff argmax = target for every input in region and every value of the bound parameter."""
    verdict = check_argmax(abstract(net, region, [binding], slack), target)
    logger.debug("%s in [%g, %g]: %s", binding.param, binding.lo, binding.hi, verdict.value)
    return verdict
