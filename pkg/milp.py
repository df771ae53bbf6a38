"""
Mixed-integer encoding of "some single-parameter bit-flip attack and some
input in the region misclassify".

The model is a pure feasibility problem: Infeasible means the property holds
for every attack in the vulnerable set. Variables are named deterministically:

    x{i}         input i
    z{L}_{j}     pre-activation of node j in hidden layer L
    a{L}_{j}     ReLU output, r{L}_{j} its phase binary
    y{i}         output logit i
    w{i}         attacked value of vulnerable parameter i
    d{i}_{j}     selector: parameter i takes flip candidate j
    m{i}_{j}_{t} product d{i}_{j} * (source of alias position t)
    eta{i}       class i beats the target
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from absdomain import DEFAULT_SLACK, InputRegion, propagate
from config import FpSlack
from conv_lowering import lower_conv
from errors import AttackError, BoundsError, ConfigurationError, ShapeError, WitnessError
from models import ParamId, QuantizedNetwork, forward_trace
from quant import ParamInterval, Witness, apply_attack, flip_bits
from sympoly import SymbolicParamBinding, abstract

logger = logging.getLogger(__name__)

SENSES = ("<=", ">=", "=")

LayerBounds = List[Tuple[np.ndarray, np.ndarray]]


@dataclass
class Variable:
    name: str
    lower: float
    upper: float
    binary: bool = False


@dataclass
class Constraint:
    """sum(coeffs[v] * v) <sense> rhs"""
    name: str
    coeffs: Dict[str, float]
    sense: str
    rhs: float

    def activity(self, values: Mapping[str, float]) -> float:
        return sum(c * values[v] for v, c in self.coeffs.items())

    def violation(self, values: Mapping[str, float]) -> float:
        lhs = self.activity(values)
        if self.sense == "<=":
            return max(0.0, lhs - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass(frozen=True)
class BigMEntry:
    """Big-M constant of one constraint and the range of the expression it deactivates."""
    constraint: str
    big_m: float
    lower: float
    upper: float

    @property
    def sufficient(self) -> bool:
        return self.big_m > max(abs(self.lower), abs(self.upper))


@dataclass
class MilpModel:
    variables: Dict[str, Variable] = field(default_factory=dict)
    constraints: List[Constraint] = field(default_factory=list)
    big_m: List[BigMEntry] = field(default_factory=list, compare=False)

    def add_variable(self, name: str, lower: float, upper: float, binary: bool = False) -> str:
        if name in self.variables:
            raise ConfigurationError(f"Duplicate MILP variable {name}")
        if not (math.isfinite(lower) and math.isfinite(upper)):
            raise BoundsError(f"Variable {name} has non-finite bounds [{lower}, {upper}]")
        if lower > upper:
            raise BoundsError(f"Variable {name} has empty bounds [{lower}, {upper}]")
        self.variables[name] = Variable(name, float(lower), float(upper), binary)
        return name

    def add_constraint(self, coeffs: Mapping[str, float], sense: str, rhs: float, name: Optional[str] = None) -> Constraint:
        if sense not in SENSES:
            raise ConfigurationError(f"Unknown constraint sense {sense!r}")
        missing = [v for v in coeffs if v not in self.variables]
        if missing:
            raise ConfigurationError(f"Constraint uses undeclared variables {missing}")
        constraint = Constraint(name or f"c{len(self.constraints) + 1}", dict(coeffs), sense, float(rhs))
        self.constraints.append(constraint)
        return constraint

    @property
    def binaries(self) -> List[str]:
        return [v.name for v in self.variables.values() if v.binary]

    @property
    def continuous(self) -> List[str]:
        return [v.name for v in self.variables.values() if not v.binary]

    def selectors(self) -> List[str]:
        return [name for name in self.binaries if name.startswith("d")]

    def check_assignment(self, values: Mapping[str, float], tol: float = 1e-6) -> List[str]:
        """
        Names of constraints, bounds and integrality conditions violated by values.

        An empty list means values is a feasible point of the model.
        """
        violated = []
        for var in self.variables.values():
            if var.name not in values:
                violated.append(f"{var.name}:missing")
                continue
            value = values[var.name]
            if value < var.lower - tol or value > var.upper + tol:
                violated.append(f"{var.name}:bounds")
            if var.binary and min(abs(value), abs(value - 1.0)) > tol:
                violated.append(f"{var.name}:integrality")
        if any(v.endswith(":missing") for v in violated):
            return violated
        for constraint in self.constraints:
            if constraint.violation(values) > tol:
                violated.append(constraint.name)
        return violated


@dataclass(frozen=True)
class VulnerableParam:
    """A parameter in the vulnerable set with its flip candidates (integer codes)."""
    param: ParamId
    original_code: int
    flip_codes: Tuple[int, ...]
    step: float

    def __post_init__(self):
        codes = tuple(sorted(set(int(c) for c in self.flip_codes)))
        if not codes:
            raise AttackError(f"{self.param} has no flip candidates")
        if self.original_code in codes:
            raise AttackError(f"Flip candidates of {self.param} include its original value")
        object.__setattr__(self, "flip_codes", codes)

    @property
    def original_value(self) -> float:
        return self.original_code * self.step

    @property
    def candidates(self) -> Tuple[float, ...]:
        return tuple(c * self.step for c in self.flip_codes)

    def sign_sides(self) -> List[ParamInterval]:
        """Sign-uniform hulls covering the original value and every candidate."""
        codes = set(self.flip_codes) | {self.original_code}
        sides = [sorted(c for c in codes if c >= 0), sorted(c for c in codes if c < 0)]
        return [ParamInterval(tuple(side), self.step) for side in sides if side]


def x_name(i: int) -> str:
    return f"x{i}"


def z_name(layer_index: int, j: int) -> str:
    return f"z{layer_index}_{j}"


def a_name(layer_index: int, j: int) -> str:
    return f"a{layer_index}_{j}"


def r_name(layer_index: int, j: int) -> str:
    return f"r{layer_index}_{j}"


def y_name(i: int) -> str:
    return f"y{i}"


def w_name(i: int) -> str:
    return f"w{i}"


def d_name(i: int, j: int) -> str:
    return f"d{i}_{j}"


def m_name(i: int, j: int, t: int) -> str:
    return f"m{i}_{j}_{t}"


def eta_name(i: int) -> str:
    return f"eta{i}"


def _add(coeffs: Dict[str, float], name: str, value: float) -> None:
    coeffs[name] = coeffs.get(name, 0.0) + value


def encode_input_region(model: MilpModel, region: InputRegion) -> List[str]:
    """One bounded variable per input dimension; the ball is already clipped to [0, 1]."""
    return [
        model.add_variable(x_name(i + 1), float(lo), float(hi))
        for i, (lo, hi) in enumerate(zip(region.lower, region.upper))
    ]


def encode_output_property(
    model: MilpModel, outputs: Sequence[str], target: int, bounds: Tuple[np.ndarray, np.ndarray], eps_strict: float
) -> List[str]:
    """
    Constraints stating that some class beats the target.

    eta_i = 1 means y_i >= y_g for i < g and y_i > y_g (by eps_strict) for i > g.

    Raises:
        BoundsError: If output bounds are missing or non-finite
    """
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    if lower.shape != (len(outputs),) or upper.shape != (len(outputs),):
        raise BoundsError(f"Need bounds for all {len(outputs)} outputs")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise BoundsError("Output bounds must be finite")
    if not 1 <= target <= len(outputs):
        raise ConfigurationError(f"Target class {target} outside [1, {len(outputs)}]")
    if len(outputs) < 2:
        raise ConfigurationError("The output property needs at least two classes")

    y_g = outputs[target - 1]
    etas = []
    for i in range(1, len(outputs) + 1):
        if i == target:
            continue
        y_i = outputs[i - 1]
        lo = float(lower[i - 1] - upper[target - 1])  # range of y_i - y_g
        hi = float(upper[i - 1] - lower[target - 1])
        big_m = max(abs(lo), abs(hi)) + 1.0
        eta = model.add_variable(eta_name(i), 0.0, 1.0, binary=True)
        beats_rhs, stays_rhs = (big_m, -eps_strict) if i < target else (big_m - eps_strict, 0.0)
        beats = model.add_constraint({y_g: 1.0, y_i: -1.0, eta: big_m}, "<=", beats_rhs, f"beats{i}")
        stays = model.add_constraint({y_i: 1.0, y_g: -1.0, eta: -big_m}, "<=", stays_rhs, f"stays{i}")
        model.big_m.append(BigMEntry(beats.name, big_m, lo, hi))
        model.big_m.append(BigMEntry(stays.name, big_m, lo, hi))
        etas.append(eta)
    model.add_constraint({eta: 1.0 for eta in etas}, ">=", 1.0, "misclassified")
    return etas


def encode_attack_choice(model: MilpModel, vulnerable: Sequence[VulnerableParam]) -> List[Tuple[str, List[str]]]:
    """
    Selector binaries and attacked-value variables.

    w_i = w + sum_j (w^j - w) d_i_j, and exactly one selector is set when the
    vulnerable set is non-empty.

    Returns:
        Per member, (attacked value name, selector names)
    """
    encoded = []
    for i, member in enumerate(vulnerable, start=1):
        values = (member.original_value,) + member.candidates
        w = model.add_variable(w_name(i), min(values), max(values))
        selectors = [
            model.add_variable(d_name(i, j), 0.0, 1.0, binary=True) for j in range(1, len(member.flip_codes) + 1)
        ]
        coeffs = {w: 1.0}
        for d, value in zip(selectors, member.candidates):
            coeffs[d] = -(value - member.original_value)
        model.add_constraint(coeffs, "=", member.original_value, f"value{i}")
        encoded.append((w, selectors))
    if vulnerable:
        model.add_constraint(
            {d: 1.0 for _, selectors in encoded for d in selectors}, "=", 1.0, "one_flip"
        )
    return encoded


def _affine_indices(net: QuantizedNetwork) -> List[int]:
    """Abstract-layer index of every network layer's affine node block."""
    indices, index = [], 0
    for layer in net.layers:
        index += 1
        indices.append(index)
        if layer.activation != "none":
            index += 1
    return indices


def attack_bounds(
    net: QuantizedNetwork,
    region: InputRegion,
    vulnerable: Sequence[VulnerableParam],
    slack: FpSlack = DEFAULT_SLACK,
) -> LayerBounds:
    """
    Pre-activation bounds valid for the unattacked network and for every
    single-parameter attack in the vulnerable set.

    Union of one DeepPoly pass and one SymPoly pass per member and sign side.
    """
    net = lower_conv(net)
    indices = _affine_indices(net)
    passes = [propagate(net, region, slack)]
    for member in vulnerable:
        for side in member.sign_sides():
            passes.append(abstract(net, region, [SymbolicParamBinding.from_interval(member.param, side)], slack))
    bounds = []
    for index in indices:
        lower = np.min([p.bounds(index)[0] for p in passes], axis=0)
        upper = np.max([p.bounds(index)[1] for p in passes], axis=0)
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise BoundsError(f"Non-finite bounds at abstract layer {index}")
        bounds.append((lower, upper))
    return bounds


def check_encodable(net: QuantizedNetwork) -> None:
    unsupported = sorted({layer.activation for layer in net.layers[:-1]} - {"relu"})
    if unsupported:
        raise ConfigurationError(f"MILP encoding supports ReLU networks only, found {unsupported}")


def _member_positions(net: QuantizedNetwork, vulnerable: Sequence[VulnerableParam]):
    """Per layer position, (member index, member, alias position index, ParamId)."""
    by_layer: Dict[int, List[Tuple[int, VulnerableParam, int, ParamId]]] = {}
    for i, member in enumerate(vulnerable, start=1):
        if net.code(member.param) != member.original_code:
            raise AttackError(f"{member.param} stores {net.code(member.param)}, not {member.original_code}")
        for t, position in enumerate(net.alias_group(member.param), start=1):
            by_layer.setdefault(position.layer_position, []).append((i, member, t, position))
    return by_layer


def _encode_product(
    model: MilpModel, coeffs: Dict[str, float], i: int, j: int, t: int, delta: str, source: str, scale: float
) -> None:
    """Add scale * delta * source to coeffs, linearized by McCormick over source's bounds."""
    var = model.variables[source]
    lo, hi = var.lower, var.upper
    if lo == hi:
        _add(coeffs, delta, scale * lo)
        return
    m = model.add_variable(m_name(i, j, t), min(0.0, lo), max(0.0, hi))
    model.add_constraint({m: 1.0, delta: -hi}, "<=", 0.0, f"{m}_ub_d")
    model.add_constraint({m: 1.0, delta: -lo}, ">=", 0.0, f"{m}_lb_d")
    model.add_constraint({m: 1.0, source: -1.0, delta: -lo}, "<=", -lo, f"{m}_ub_v")
    model.add_constraint({m: 1.0, source: -1.0, delta: -hi}, ">=", -hi, f"{m}_lb_v")
    _add(coeffs, m, scale)


def _encode_relu(model: MilpModel, layer_index: int, j: int, z: str, lo: float, hi: float) -> str:
    a = model.add_variable(a_name(layer_index, j), max(lo, 0.0), max(hi, 0.0))
    if lo >= 0:
        model.add_constraint({a: 1.0, z: -1.0}, "=", 0.0, f"{a}_active")
    elif hi <= 0:
        model.add_constraint({a: 1.0}, "=", 0.0, f"{a}_inactive")
    else:
        big_m = max(abs(lo), abs(hi)) + 1.0
        r = model.add_variable(r_name(layer_index, j), 0.0, 1.0, binary=True)
        model.add_constraint({a: 1.0, z: -1.0}, ">=", 0.0, f"{a}_ge_z")
        upper_z = model.add_constraint({a: 1.0, z: -1.0, r: big_m}, "<=", big_m, f"{a}_le_z")
        upper_r = model.add_constraint({a: 1.0, r: -big_m}, "<=", 0.0, f"{a}_le_phase")
        model.big_m.append(BigMEntry(upper_z.name, big_m, -hi, -lo))
        model.big_m.append(BigMEntry(upper_r.name, big_m, 0.0, hi))
    return a


def build_milp(
    net: QuantizedNetwork,
    region: InputRegion,
    target: int,
    vulnerable: Sequence[VulnerableParam] = (),
    slack: FpSlack = DEFAULT_SLACK,
    eps_strict: float = 1e-6,
    bounds: Optional[LayerBounds] = None,
) -> MilpModel:
    """
    Assemble network, attack choice, input region and output property.

    An empty vulnerable set yields the plain robustness MILP of the
    unattacked network.

    Raises:
        ConfigurationError: For non-ReLU hidden layers or a bad target
        ShapeError: If the region does not match the input dimension
        BoundsError: If the bounds pass produced non-finite values
    """
    net = lower_conv(net)
    check_encodable(net)
    if region.dim != net.input_dim:
        raise ShapeError(f"Region has dimension {region.dim}, network expects {net.input_dim}")
    if not 1 <= target <= net.output_dim:
        raise ConfigurationError(f"Target class {target} outside [1, {net.output_dim}]")
    if bounds is None:
        bounds = attack_bounds(net, region, vulnerable, slack)

    model = MilpModel()
    sources = encode_input_region(model, region)
    attack = encode_attack_choice(model, vulnerable)
    members = _member_positions(net, vulnerable)

    for position, layer in enumerate(net.layers):
        layer_index = position + 2
        last = position == len(net.layers) - 1
        lower, upper = bounds[position]
        outputs = []
        for row in range(layer.out_dim):
            j = row + 1
            out = model.add_variable(y_name(j) if last else z_name(layer_index, j), lower[row], upper[row])
            coeffs = {out: 1.0}
            rhs = float(layer.bias[row])
            for col, source in enumerate(sources):
                if layer.weights[row, col] != 0:
                    _add(coeffs, source, -float(layer.weights[row, col]))
            for i, member, t, param in members.get(position, []):
                if param.row != j:
                    continue
                w, selectors = attack[i - 1]
                if param.is_bias:
                    rhs -= member.original_value
                    _add(coeffs, w, -1.0)
                    continue
                source = sources[param.col - 1]
                for k, (delta, value) in enumerate(zip(selectors, member.candidates), start=1):
                    _encode_product(model, coeffs, i, k, t, delta, source, -(value - member.original_value))
            model.add_constraint(coeffs, "=", rhs, f"row_{out}")
            outputs.append(out)
        if last:
            encode_output_property(model, outputs, target, (lower, upper), eps_strict)
        else:
            sources = [
                _encode_relu(model, layer_index, row + 1, z, float(lower[row]), float(upper[row]))
                for row, z in enumerate(outputs)
            ]
    logger.debug("MILP: %d variables (%d binary), %d constraints",
                 len(model.variables), len(model.binaries), len(model.constraints))
    return model


def witness_assignment(
    net: QuantizedNetwork,
    region: InputRegion,
    target: int,
    vulnerable: Sequence[VulnerableParam],
    witness: Witness,
) -> Dict[str, float]:
    """
    Full variable assignment induced by a concrete witness.

    Raises:
        WitnessError: If the witness attacks a parameter outside the vulnerable set
            or selects a value that is not one of its candidates
    """
    net = lower_conv(net)
    if not region.contains(witness.input, tol=1e-9):
        raise WitnessError("Witness input lies outside the region")
    if witness.attack.num_params != 1:
        raise WitnessError("A witness must attack exactly one parameter")
    param, bits = witness.attack.pairs[0]
    chosen = None
    for i, member in enumerate(vulnerable, start=1):
        if member.param == param:
            code = flip_bits(member.original_code, bits, net.quant_bits)
            if code not in member.flip_codes:
                raise WitnessError(f"{param} flipped to {code}, which is not a candidate")
            chosen = (i, member.flip_codes.index(code) + 1)
    if chosen is None:
        raise WitnessError(f"{param} is not in the vulnerable set")

    attacked = apply_attack(net, witness.attack)
    trace = forward_trace(attacked, witness.input)
    values: Dict[str, float] = {}
    for i, x in enumerate(trace[0], start=1):
        values[x_name(i)] = float(x)
    for i, member in enumerate(vulnerable, start=1):
        values[w_name(i)] = member.original_value
        for j, value in enumerate(member.candidates, start=1):
            selected = (i, j) == chosen
            values[d_name(i, j)] = 1.0 if selected else 0.0
            if selected:
                values[w_name(i)] = value

    cursor = 1
    post_by_position: List[np.ndarray] = [trace[0]]
    for position, layer in enumerate(net.layers):
        layer_index = position + 2
        pre = trace[cursor]
        cursor += 1
        if layer.activation == "none":
            for j, v in enumerate(pre, start=1):
                values[y_name(j)] = float(v)
            continue
        post = trace[cursor]
        cursor += 1
        post_by_position.append(post)
        for j, (zv, av) in enumerate(zip(pre, post), start=1):
            values[z_name(layer_index, j)] = float(zv)
            values[a_name(layer_index, j)] = float(av)
            values[r_name(layer_index, j)] = 1.0 if zv >= 0 else 0.0

    for i, member in enumerate(vulnerable, start=1):
        for t, position in enumerate(net.alias_group(member.param), start=1):
            if position.is_bias:
                continue
            source_value = float(post_by_position[position.layer_position][position.col - 1])
            for j in range(1, len(member.flip_codes) + 1):
                values[m_name(i, j, t)] = values[d_name(i, j)] * source_value

    output = trace[-1]
    g = output[target - 1]
    for i in range(1, len(output) + 1):
        if i == target:
            continue
        beats = output[i - 1] >= g if i < target else output[i - 1] > g
        values[eta_name(i)] = 1.0 if beats else 0.0
    return values
