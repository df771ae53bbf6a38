"""
DeepPoly-style abstract interpretation over quantized networks.

Abstract layers: index 0 is the input box, then every network layer adds an
affine layer (pre-activation) followed, for hidden layers, by an activation
layer. Each abstract layer stores relational lower/upper bounds as
coefficient matrices over earlier abstract layers plus a constant vector.
A bound may refer to any earlier layer, which is how symbolic-parameter
terms over pre-activation nodes are folded into a successor's rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from config import FpSlack
from conv_lowering import lower_conv
from errors import ConfigurationError, ShapeError
from models import QuantizedNetwork, sigmoid

logger = logging.getLogger(__name__)

DEFAULT_SLACK = FpSlack()


class Verdict(Enum):
    PROVED = "Proved"
    UNKNOWN = "Unknown"


@dataclass(frozen=True, eq=False)
class InputRegion:
    """Input box; L-infinity balls are clipped to [0, 1] per dimension."""
    kind: str
    lower: np.ndarray
    upper: np.ndarray
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size == 0:
            raise ShapeError(f"Region bounds must be equal-length vectors, got {lower.shape} and {upper.shape}")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ConfigurationError("Region bounds must be finite")
        if np.any(lower > upper):
            raise ConfigurationError("Region is empty: some lower bound exceeds its upper bound")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def linf_ball(cls, center, radius: float) -> "InputRegion":
        c = np.asarray(center, dtype=float)
        if radius < 0:
            raise ConfigurationError(f"Radius must be non-negative, got {radius}")
        lower = np.maximum(c - radius, 0.0)
        upper = np.minimum(c + radius, 1.0)
        return cls("linf_ball", lower, upper, c, float(radius))

    @classmethod
    def box(cls, lower, upper) -> "InputRegion":
        return cls("box", np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def midpoint(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def corners(self, max_dims: int = 10) -> np.ndarray:
        """
        Box vertices over the non-degenerate dimensions.

        Above max_dims free dimensions only the all-lower and all-upper
        vertices are returned.
        """
        free = np.flatnonzero(self.widths > 0)
        if free.size > max_dims:
            return np.stack([self.lower, self.upper])
        count = 1 << free.size
        points = np.repeat(self.lower[None, :], count, axis=0)
        for bit, dim in enumerate(free):
            chosen = (np.arange(count) >> bit) & 1
            points[:, dim] = np.where(chosen == 1, self.upper[dim], self.lower[dim])
        return points

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))

    def split(self, dim: int) -> Tuple["InputRegion", "InputRegion"]:
        middle = (self.lower[dim] + self.upper[dim]) / 2
        left_upper = self.upper.copy()
        left_upper[dim] = middle
        right_lower = self.lower.copy()
        right_lower[dim] = middle
        return InputRegion.box(self.lower, left_upper), InputRegion.box(right_lower, self.upper)

    def to_dict(self) -> Dict:
        data = {"kind": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        if self.kind == "linf_ball":
            data["center"] = self.center.tolist()
            data["radius"] = self.radius
        return data


@dataclass
class LinExpr:
    """Linear form over abstract-layer nodes: sum of terms[layer] . x_layer + const."""
    terms: Dict[int, np.ndarray] = field(default_factory=dict)
    const: float = 0.0

    @classmethod
    def node(cls, layer: int, index: int, size: int, coeff: float = 1.0, const: float = 0.0) -> "LinExpr":
        vector = np.zeros(size)
        vector[index] = coeff
        return cls({layer: vector}, const)

    def scale(self, factor: float) -> "LinExpr":
        return LinExpr({k: v * factor for k, v in self.terms.items()}, self.const * factor)

    def plus(self, other: "LinExpr") -> "LinExpr":
        terms = {k: v.copy() for k, v in self.terms.items()}
        for k, v in other.terms.items():
            terms[k] = terms[k] + v if k in terms else v.copy()
        return LinExpr(terms, self.const + other.const)

    def evaluate(self, values: Dict[int, np.ndarray]) -> float:
        return float(self.const + sum(np.dot(v, values[k]) for k, v in self.terms.items()))


@dataclass(frozen=True)
class NodeRef:
    layer: int
    index: int
    size: int

    def expr(self, coeff: float = 1.0, const: float = 0.0) -> LinExpr:
        return LinExpr.node(self.layer, self.index, self.size, coeff, const)


@dataclass
class AbstractElement:
    """Per-node tuple <a_le, a_ge, l, u>; node locates the element when it is a variable."""
    a_le: LinExpr
    a_ge: LinExpr
    l: float
    u: float
    node: Optional[NodeRef] = None

    @classmethod
    def variable(cls, l: float, u: float, node: Optional[NodeRef] = None) -> "AbstractElement":
        """Element of a free variable with bounds [l, u]."""
        node = node or NodeRef(0, 0, 1)
        return cls(node.expr(), node.expr(), float(l), float(u), node)


@dataclass(frozen=True)
class Relaxation:
    """lower_slope*x + lower_offset <= f(x) <= upper_slope*x + upper_offset on [l, u]."""
    lower_slope: float
    lower_offset: float
    upper_slope: float
    upper_offset: float
    lb: float
    ub: float


def relu_relaxation(l: float, u: float) -> Relaxation:
    if l >= 0:
        return Relaxation(1.0, 0.0, 1.0, 0.0, l, u)
    if u <= 0:
        return Relaxation(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    slope = u / (u - l)
    lam = 1.0 if u > -l else 0.0
    return Relaxation(lam, 0.0, slope, -slope * l, 0.0, u)


def activation_fn(kind: str) -> Tuple[Callable, Callable]:
    """(g, g') for a smooth activation."""
    if kind == "sigmoid":
        return sigmoid, lambda x: sigmoid(x) * (1.0 - sigmoid(x))
    if kind == "tanh":
        return np.tanh, lambda x: 1.0 - np.tanh(x) ** 2
    raise ConfigurationError(f"No smooth relaxation for activation {kind!r}")


def secant_slopes(l: float, u: float, kind: str) -> Tuple[float, float]:
    """(kappa, kappa') = secant slope and min(g'(l), g'(u)); g'(l) for a point interval."""
    g, dg = activation_fn(kind)
    kappa_min = float(min(dg(l), dg(u)))
    if u - l <= 0:
        return float(dg(l)), kappa_min
    return float((g(u) - g(l)) / (u - l)), kappa_min


def act_relaxation(l: float, u: float, kind: str) -> Relaxation:
    g, _ = activation_fn(kind)
    gl, gu = float(g(l)), float(g(u))
    if u - l <= 0:
        return Relaxation(0.0, gl, 0.0, gl, gl, gl)
    kappa, kappa_min = secant_slopes(l, u, kind)
    lower = kappa if l >= 0 else kappa_min
    upper = kappa if u <= 0 else kappa_min
    return Relaxation(lower, gl - lower * l, upper, gu - upper * u, gl, gu)


def relaxation_for(kind: str, l: float, u: float) -> Relaxation:
    if kind == "relu":
        return relu_relaxation(l, u)
    return act_relaxation(l, u, kind)


def _element_from_relaxation(pre: AbstractElement, rel: Relaxation) -> AbstractElement:
    if pre.node is None:
        raise ConfigurationError("Activation transformers need the pre-activation node's location")
    return AbstractElement(
        pre.node.expr(rel.lower_slope, rel.lower_offset),
        pre.node.expr(rel.upper_slope, rel.upper_offset),
        rel.lb,
        rel.ub,
    )


def relu_transform(pre: AbstractElement) -> AbstractElement:
    """ReLU element over the pre-activation node (lambda = 0 on the u = -l tie)."""
    return _element_from_relaxation(pre, relu_relaxation(pre.l, pre.u))


def act_transform(pre: AbstractElement, kind: str) -> AbstractElement:
    """Sigmoid/tanh element: secant on the curved side, min-derivative line on the other."""
    return _element_from_relaxation(pre, act_relaxation(pre.l, pre.u, kind))


@dataclass
class AbstractLayer:
    kind: str  # input | affine | relu | sigmoid | tanh
    lower: Dict[int, np.ndarray]
    lower_const: np.ndarray
    upper: Dict[int, np.ndarray]
    upper_const: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @property
    def size(self) -> int:
        return self.lb.shape[0]


@dataclass
class AffineRows:
    """Relational bounds of an affine layer under construction."""
    lower: Dict[int, np.ndarray]
    lower_const: np.ndarray
    upper: Dict[int, np.ndarray]
    upper_const: np.ndarray

    @classmethod
    def from_layer(cls, source: int, weights: np.ndarray, bias: np.ndarray) -> "AffineRows":
        W = np.array(weights, dtype=float)
        b = np.array(bias, dtype=float)
        return cls({source: W}, b, {source: W.copy()}, b.copy())

    @property
    def size(self) -> int:
        return self.lower_const.shape[0]

    def _matrix(self, side: Dict[int, np.ndarray], layer: int, width: int) -> np.ndarray:
        if layer not in side:
            side[layer] = np.zeros((self.size, width))
        return side[layer]

    def set_entry(self, row: int, layer: int, col: int, lower: float, upper: float) -> None:
        self.lower[layer][row, col] = lower
        self.upper[layer][row, col] = upper

    def add_terms(self, row: int, lower: LinExpr, upper: LinExpr) -> None:
        for expr, side, consts in ((lower, self.lower, self.lower_const), (upper, self.upper, self.upper_const)):
            for layer, coeffs in expr.terms.items():
                self._matrix(side, layer, coeffs.shape[0])[row] += coeffs
            consts[row] += expr.const


@dataclass
class MarginBounds:
    """Lower bounds of y_g - y_i and their input-space linear forms."""
    classes: List[int]  # 1-based i != g
    lower: np.ndarray
    input_coeffs: np.ndarray
    input_const: np.ndarray

    def minimizing_vertices(self, region: InputRegion) -> np.ndarray:
        """Per margin, the box vertex minimizing its input-space lower form."""
        return np.where(self.input_coeffs > 0, region.lower[None, :], region.upper[None, :])


class AbstractNetwork:
    """Abstract layers of one analysis run, with sign-directed back-substitution."""

    def __init__(self, region: InputRegion, slack: FpSlack = DEFAULT_SLACK):
        self.region = region
        self.slack = slack
        zeros = np.zeros(region.dim)
        self.layers: List[AbstractLayer] = [
            AbstractLayer("input", {}, zeros, {}, zeros.copy(), region.lower.copy(), region.upper.copy())
        ]

    @property
    def output_index(self) -> int:
        return len(self.layers) - 1

    def bounds(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        layer = self.layers[index]
        return layer.lb, layer.ub

    def element(self, index: int, node: int) -> AbstractElement:
        layer = self.layers[index]
        ref = NodeRef(index, node, layer.size)
        if index == 0:
            return AbstractElement(ref.expr(), ref.expr(), float(layer.lb[node]), float(layer.ub[node]), ref)
        a_le = LinExpr({src: m[node].copy() for src, m in layer.lower.items()}, float(layer.lower_const[node]))
        a_ge = LinExpr({src: m[node].copy() for src, m in layer.upper.items()}, float(layer.upper_const[node]))
        return AbstractElement(a_le, a_ge, float(layer.lb[node]), float(layer.ub[node]), ref)

    def substitute(
        self, terms: Dict[int, np.ndarray], const: np.ndarray, lower: bool
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Back-substitute rows of linear forms down to the input layer.

        Args:
            terms: layer index -> (k x n_layer) coefficient matrix
            const: (k,) constants
            lower: True to minimize, False to maximize

        Returns:
            (optimum over the input box without slack, input coefficients (k x n_1), input constants (k,))
        """
        pending = {idx: np.array(m, dtype=float) for idx, m in terms.items()}
        const = np.array(const, dtype=float)
        rows = const.shape[0]
        input_coeffs = pending.pop(0, np.zeros((rows, self.region.dim)))

        for idx in range(max(pending, default=0), 0, -1):
            coeff = pending.pop(idx, None)
            if coeff is None:
                continue
            layer = self.layers[idx]
            pos = np.maximum(coeff, 0.0)
            neg = np.minimum(coeff, 0.0)
            if lower:
                first, first_c, second, second_c = layer.lower, layer.lower_const, layer.upper, layer.upper_const
            else:
                first, first_c, second, second_c = layer.upper, layer.upper_const, layer.lower, layer.lower_const
            const = const + pos @ first_c + neg @ second_c
            for side, weight in ((first, pos), (second, neg)):
                for src, matrix in side.items():
                    contribution = weight @ matrix
                    if src == 0:
                        input_coeffs = input_coeffs + contribution
                    elif src in pending:
                        pending[src] = pending[src] + contribution
                    else:
                        pending[src] = contribution

        box_lo, box_hi = self.region.lower, self.region.upper
        pos = np.maximum(input_coeffs, 0.0)
        neg = np.minimum(input_coeffs, 0.0)
        if lower:
            values = const + pos @ box_lo + neg @ box_hi
        else:
            values = const + pos @ box_hi + neg @ box_lo
        return values, input_coeffs, const

    def concretize(self, rows: AffineRows) -> Tuple[np.ndarray, np.ndarray]:
        lb, _, _ = self.substitute(rows.lower, rows.lower_const, lower=True)
        ub, _, _ = self.substitute(rows.upper, rows.upper_const, lower=False)
        return self.slack.widen(lb, ub)

    def add_affine(self, rows: AffineRows) -> int:
        lb, ub = self.concretize(rows)
        self.layers.append(AbstractLayer("affine", rows.lower, rows.lower_const, rows.upper, rows.upper_const, lb, ub))
        return self.output_index

    def add_activation(self, source: int, kind: str) -> int:
        lb, ub = self.bounds(source)
        rels = [relaxation_for(kind, float(l), float(u)) for l, u in zip(lb, ub)]
        self.layers.append(AbstractLayer(
            kind,
            {source: np.diag([r.lower_slope for r in rels])},
            np.array([r.lower_offset for r in rels]),
            {source: np.diag([r.upper_slope for r in rels])},
            np.array([r.upper_offset for r in rels]),
            np.array([r.lb for r in rels]),
            np.array([r.ub for r in rels]),
        ))
        return self.output_index

    def symbolic_input_bounds(self, index: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Input-space forms (lower coeffs, lower const, upper coeffs, upper const) of every node of a layer."""
        size = self.layers[index].size
        identity = {index: np.eye(size)}
        _, lo_c, lo_k = self.substitute(identity, np.zeros(size), lower=True)
        _, up_c, up_k = self.substitute(identity, np.zeros(size), lower=False)
        return lo_c, lo_k, up_c, up_k


def init_input(region: InputRegion) -> List[AbstractElement]:
    """One variable element per input dimension, bounded by the region."""
    return [
        AbstractElement.variable(region.lower[i], region.upper[i], NodeRef(0, i, region.dim))
        for i in range(region.dim)
    ]


def back_substitute(expr: LinExpr, absnet: AbstractNetwork) -> Tuple[float, float]:
    """Sound (lb, ub) of a linear form over abstracted nodes, slack applied."""
    terms_lo = {k: v[None, :] for k, v in expr.terms.items()}
    const = np.array([expr.const])
    lb, _, _ = absnet.substitute(terms_lo, const, lower=True)
    ub, _, _ = absnet.substitute(terms_lo, const, lower=False)
    lo, hi = absnet.slack.widen(lb, ub)
    return float(lo[0]), float(hi[0])


def affine_transform(absnet: AbstractNetwork, source: int, weights, bias: float) -> AbstractElement:
    """Element of one affine node W . x_source + b, concrete bounds by back-substitution."""
    expr = LinExpr({source: np.asarray(weights, dtype=float)}, float(bias))
    l, u = back_substitute(expr, absnet)
    return AbstractElement(expr, LinExpr(dict(expr.terms), expr.const), l, u)


Rewriter = Callable[[AbstractNetwork, int, int, AffineRows], None]


def propagate(
    net: QuantizedNetwork,
    region: InputRegion,
    slack: FpSlack = DEFAULT_SLACK,
    rewriter: Optional[Rewriter] = None,
) -> AbstractNetwork:
    """
    Abstract the whole network over region.

    rewriter(absnet, layer_position, source, rows) may edit each affine
    layer's rows before they are concretized.
    """
    net = lower_conv(net)
    if region.dim != net.input_dim:
        raise ShapeError(f"Region has dimension {region.dim}, network expects {net.input_dim}")
    absnet = AbstractNetwork(region, slack)
    source = 0
    for position, layer in enumerate(net.layers):
        rows = AffineRows.from_layer(source, layer.weights, layer.bias)
        if rewriter is not None:
            rewriter(absnet, position, source, rows)
        source = absnet.add_affine(rows)
        if layer.activation != "none":
            source = absnet.add_activation(source, layer.activation)
    return absnet


def output_margins(absnet: AbstractNetwork, target: int) -> MarginBounds:
    """Lower bounds of y_target - y_i for every other class i."""
    out = absnet.output_index
    size = absnet.layers[out].size
    if not 1 <= target <= size:
        raise ConfigurationError(f"Target class {target} outside [1, {size}]")
    others = [i for i in range(size) if i != target - 1]
    diff = np.zeros((len(others), size))
    diff[:, target - 1] = 1.0
    diff[np.arange(len(others)), others] = -1.0
    values, coeffs, consts = absnet.substitute({out: diff}, np.zeros(len(others)), lower=True)
    lower, _ = absnet.slack.widen(values, values)
    return MarginBounds([i + 1 for i in others], lower, coeffs, consts)


def check_argmax(absnet: AbstractNetwork, target: int) -> Verdict:
    """Proved iff every lower bound of y_target - y_i is positive."""
    margins = output_margins(absnet, target)
    if np.all(margins.lower > 0):
        return Verdict.PROVED
    return Verdict.UNKNOWN


def deeppoly(net: QuantizedNetwork, region: InputRegion, target: int, slack: FpSlack = DEFAULT_SLACK) -> Verdict:
    """Plain DeepPoly verification of argmax = target over region."""
    return check_argmax(propagate(net, region, slack), target)
