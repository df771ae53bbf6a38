"""
Symmetric quantization, two's-complement codec, bit-flip enumeration,
sign-split intervals and attack application.

Bit positions are 1-based: position 1 is the least significant bit v_1,
position Q is the sign bit v_Q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import AttackError, ConfigurationError, RangeError, WitnessError
from models import ParamId, QuantizedNetwork, q_max, q_min


def quantize_layer(W, b, quant_bits: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Symmetric per-layer quantization.

    Args:
        W: Real weight matrix
        b: Real bias vector
        quant_bits: Bit width Q >= 2

    Returns:
        (integer weights, integer bias, step size); integers are
        round-half-to-even of value / step

    Raises:
        ConfigurationError: If the layer is all zeros or Q < 2

    Examples:
        >>> _, _, step = quantize_layer([[-0.7, -0.3], [0.3, 0.7]], [0, 0], 4)
        >>> round(step, 12)
        0.1
    """
    if quant_bits < 2:
        raise ConfigurationError(f"Q must be >= 2, got {quant_bits}")
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    max_abs = max(np.abs(W).max(initial=0.0), np.abs(b).max(initial=0.0))
    if max_abs == 0:
        raise ConfigurationError("Cannot quantize an all-zero layer: step size undefined")
    step = max_abs / q_max(quant_bits)
    limit = q_max(quant_bits)
    int_w = np.clip(np.rint(W / step), -limit, limit).astype(np.int64)
    int_b = np.clip(np.rint(b / step), -limit, limit).astype(np.int64)
    return int_w, int_b, step


def dequantize(codes, step: float) -> np.ndarray:
    return np.asarray(codes, dtype=float) * step


@dataclass(frozen=True)
class BitPattern:
    """Two's-complement bits, most significant first (v_Q ... v_1)."""
    bits: Tuple[int, ...]

    @property
    def width(self) -> int:
        return len(self.bits)

    def bit(self, position: int) -> int:
        """Bit v_position (1-based, 1 = least significant)."""
        return self.bits[self.width - position]

    def __str__(self) -> str:
        return "[" + "".join(str(b) for b in self.bits) + "]"


def _check_range(v: int, quant_bits: int) -> None:
    if not q_min(quant_bits) <= v <= q_max(quant_bits):
        raise RangeError(f"{v} is outside the {quant_bits}-bit two's-complement range")


def encode_tc(v: int, quant_bits: int) -> BitPattern:
    """
    Encode an integer as a Q-bit two's-complement pattern.

    Examples:
        >>> str(encode_tc(-7, 4))
        '[1001]'
    """
    _check_range(v, quant_bits)
    unsigned = v & ((1 << quant_bits) - 1)
    return BitPattern(tuple((unsigned >> (q - 1)) & 1 for q in range(quant_bits, 0, -1)))


def decode_tc(pattern: BitPattern) -> int:
    """Integer value -2^(Q-1) v_Q + sum_{q<Q} 2^(q-1) v_q."""
    width = pattern.width
    value = -(pattern.bit(width) << (width - 1))
    for q in range(1, width):
        value += pattern.bit(q) << (q - 1)
    return value


def _to_signed(unsigned: int, quant_bits: int) -> int:
    if unsigned & (1 << (quant_bits - 1)):
        return unsigned - (1 << quant_bits)
    return unsigned


def flip_bits(v: int, positions: Iterable[int], quant_bits: int) -> int:
    """XOR the given 1-based bit positions of v's Q-bit pattern."""
    _check_range(v, quant_bits)
    mask = 0
    for position in positions:
        if not 1 <= position <= quant_bits:
            raise AttackError(f"Bit position {position} outside [1, {quant_bits}]")
        mask |= 1 << (position - 1)
    return _to_signed((v & ((1 << quant_bits) - 1)) ^ mask, quant_bits)


def flip_positions(original: int, flipped: int, quant_bits: int) -> FrozenSet[int]:
    """Bit positions that differ between two Q-bit values."""
    _check_range(original, quant_bits)
    _check_range(flipped, quant_bits)
    diff = (original ^ flipped) & ((1 << quant_bits) - 1)
    return frozenset(q for q in range(1, quant_bits + 1) if diff >> (q - 1) & 1)


def flip_count(quant_bits: int, max_flips: int) -> int:
    """Number of distinct attacked values: sum_{i=1}^{n} C(Q, i)."""
    return sum(math.comb(quant_bits, i) for i in range(1, max_flips + 1))


def enumerate_flips(v: int, quant_bits: int, max_flips: int) -> Tuple[int, ...]:
    """
    Every value reachable by flipping between 1 and max_flips distinct bits.

    Examples:
        >>> enumerate_flips(-1, 4, 1)
        (-5, -3, -2, 7)
    """
    if not 1 <= max_flips <= quant_bits:
        raise ConfigurationError(f"Flip bound must be in [1, {quant_bits}], got {max_flips}")
    _check_range(v, quant_bits)
    unsigned = v & ((1 << quant_bits) - 1)
    values = set()
    for k in range(1, max_flips + 1):
        for chosen in combinations(range(quant_bits), k):
            mask = sum(1 << p for p in chosen)
            values.add(_to_signed(unsigned ^ mask, quant_bits))
    return tuple(sorted(values))


@dataclass(frozen=True)
class ParamInterval:
    """
    Sign-uniform real interval with the flip candidates it covers.

    codes are the integer candidates and step the layer step size, so
    candidates[i] == codes[i] * step.
    """
    codes: Tuple[int, ...]
    step: float

    def __post_init__(self):
        codes = tuple(sorted(set(int(c) for c in self.codes)))
        if not codes:
            raise ConfigurationError("ParamInterval needs at least one candidate")
        if codes[0] < 0 < codes[-1]:
            raise ConfigurationError(f"ParamInterval must be sign-uniform, got codes {codes}")
        object.__setattr__(self, "codes", codes)

    @property
    def candidates(self) -> Tuple[float, ...]:
        return tuple(c * self.step for c in self.codes)

    @property
    def lo(self) -> float:
        return self.codes[0] * self.step

    @property
    def hi(self) -> float:
        return self.codes[-1] * self.step

    @property
    def is_point(self) -> bool:
        return len(self.codes) == 1

    def split(self) -> Tuple["ParamInterval", "ParamInterval"]:
        """
        Midpoint split for the binary search: candidates <= (lo+hi)/2 go
        left, the rest right; both sides are re-hulled.
        """
        if self.is_point:
            raise ConfigurationError("Cannot split a single-candidate interval")
        middle = (self.lo + self.hi) / 2
        left = tuple(c for c in self.codes if c * self.step <= middle)
        right = tuple(c for c in self.codes if c * self.step > middle)
        return ParamInterval(left, self.step), ParamInterval(right, self.step)

    def to_dict(self) -> Dict[str, Any]:
        return {"lo": self.lo, "hi": self.hi, "codes": list(self.codes), "candidates": list(self.candidates)}


def _split_by_sign(codes: Iterable[int], step: float) -> Tuple[Optional[ParamInterval], Optional[ParamInterval]]:
    codes = sorted(set(codes))
    pos = [c for c in codes if c >= 0]
    neg = [c for c in codes if c < 0]
    return (
        ParamInterval(tuple(pos), step) if pos else None,
        ParamInterval(tuple(neg), step) if neg else None,
    )


def sign_split_intervals(
    v: int, quant_bits: int, max_flips: int, step: float
) -> Tuple[Optional[ParamInterval], Optional[ParamInterval]]:
    """
    Positive and negative hulls of the original value and all its flips.

    Zero is placed on the positive side. A side is None when no candidate
    falls on it.
    """
    codes = set(enumerate_flips(v, quant_bits, max_flips))
    codes.add(v)
    return _split_by_sign(codes, step)


def _top_bits(value: int, quant_bits: int, bit_value: int, count: int) -> List[int]:
    """Highest magnitude-bit positions (Q-1 .. 1) currently equal to bit_value."""
    found = [q for q in range(quant_bits - 1, 0, -1) if (value >> (q - 1)) & 1 == bit_value]
    return found[:count]


def msb_sign_split_intervals(
    v: int, quant_bits: int, max_flips: int, step: float
) -> Tuple[Optional[Tuple[float, float]], Optional[Tuple[float, float]]]:
    """
    Closed-form hull bounds: clear (set) the most significant set (unset)
    magnitude bits for the lower (upper) end, spending one flip on the sign
    bit to reach the other side. Used as a cross-check of the exhaustive
    construction.
    """
    if not 1 <= max_flips <= quant_bits:
        raise ConfigurationError(f"Flip bound must be in [1, {quant_bits}], got {max_flips}")
    _check_range(v, quant_bits)
    unsigned = v & ((1 << quant_bits) - 1)
    sign = 1 << (quant_bits - 1)

    def extremes(base: int, budget: int) -> Tuple[int, int]:
        low, high = base, base
        for q in _top_bits(base, quant_bits, 1, budget):
            low &= ~(1 << (q - 1))
        for q in _top_bits(base, quant_bits, 0, budget):
            high |= 1 << (q - 1)
        return _to_signed(low, quant_bits), _to_signed(high, quant_bits)

    same = extremes(unsigned, max_flips)
    other = extremes(unsigned ^ sign, max_flips - 1)
    same_iv = (same[0] * step, same[1] * step)
    other_iv = (other[0] * step, other[1] * step)
    if v >= 0:
        return same_iv, other_iv
    return other_iv, same_iv


@dataclass(frozen=True)
class AttackVector:
    """Pairs of (parameter, set of 1-based bit positions to flip)."""
    pairs: Tuple[Tuple[ParamId, FrozenSet[int]], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "pairs", tuple((param, frozenset(bits)) for param, bits in self.pairs)
        )

    @classmethod
    def single(cls, param: ParamId, bits: Iterable[int]) -> "AttackVector":
        return cls(((param, frozenset(bits)),))

    @property
    def num_params(self) -> int:
        return len(self.pairs)

    @property
    def max_bits(self) -> int:
        return max((len(bits) for _, bits in self.pairs), default=0)

    def to_dict(self) -> List[Dict[str, Any]]:
        return [{"param": str(param), "bits": sorted(bits)} for param, bits in self.pairs]

    @classmethod
    def from_dict(cls, data: Sequence[Dict[str, Any]]) -> "AttackVector":
        try:
            return cls(tuple((ParamId.parse(item["param"]), frozenset(int(b) for b in item["bits"])) for item in data))
        except (KeyError, TypeError) as e:
            raise WitnessError(f"Malformed attack vector: {e}") from e


def apply_attack(net: QuantizedNetwork, attack: AttackVector) -> QuantizedNetwork:
    """
    Copy of net with the attack's bits XOR-flipped.

    Flips on a lowered conv parameter reach every alias of that parameter.

    Raises:
        AttackError: If a parameter is out of range or a bit position is outside [1, Q]
    """
    weights = [layer.integer_weights.copy() for layer in net.layers]
    biases = [layer.integer_bias.copy() for layer in net.layers]
    for param, bits in attack.pairs:
        group = net.alias_group(param)
        flipped = flip_bits(net.code(param), bits, net.quant_bits)
        for position in group:
            if position.is_bias:
                biases[position.layer_position][position.row - 1] = flipped
            else:
                weights[position.layer_position][position.row - 1, position.col - 1] = flipped
    layers = [layer.with_codes(w, b) for layer, w, b in zip(net.layers, weights, biases)]
    return net.with_layers(layers)


def attack_for_code(net: QuantizedNetwork, param: ParamId, code: int) -> AttackVector:
    """Single-parameter attack turning param's stored integer into code."""
    return AttackVector.single(param, flip_positions(net.code(param), code, net.quant_bits))


@dataclass(frozen=True, eq=False)
class Witness:
    """Concrete attack plus input demonstrating a misclassification."""
    attack: AttackVector
    input: np.ndarray
    output: np.ndarray
    target: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "attack": self.attack.to_dict(),
            "input": [float(v) for v in self.input],
            "output": [float(v) for v in self.output],
            "target": self.target,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Witness":
        try:
            return cls(
                AttackVector.from_dict(data["attack"]),
                np.asarray(data["input"], dtype=float),
                np.asarray(data.get("output", []), dtype=float),
                int(data["target"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, WitnessError):
                raise
            raise WitnessError(f"Malformed witness: {e}") from e
