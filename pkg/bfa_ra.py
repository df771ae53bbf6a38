"""
Per-parameter reachability analysis under bit flips.

bfa_ra sign-splits the flip hull of one parameter and proves each side with
SymPoly, refining failing sides by binary search over the candidate values.
naive_check is the baseline that runs DeepPoly once per attacked network.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from absdomain import DEFAULT_SLACK, InputRegion, Verdict, deeppoly
from config import FpSlack
from models import ParamId, QuantizedNetwork, forward_batch
from quant import (
    ParamInterval,
    Witness,
    apply_attack,
    attack_for_code,
    enumerate_flips,
    sign_split_intervals,
)
from sympoly import SymbolicParamBinding, analyze

logger = logging.getLogger(__name__)


class ParamStatus(Enum):
    SAFE = "Safe"
    UNKNOWN = "Unknown"


@dataclass
class ParamVerdict:
    """Outcome of analysing one parameter."""
    param: ParamId
    status: ParamStatus
    analyzer_calls: int
    proved_subintervals: List[ParamInterval] = field(default_factory=list)
    unresolved_subintervals: List[ParamInterval] = field(default_factory=list)

    @property
    def is_safe(self) -> bool:
        return self.status is ParamStatus.SAFE

    @property
    def unresolved_codes(self) -> List[int]:
        """Integer candidates not proved safe (unanalysed intervals included)."""
        return sorted({c for interval in self.unresolved_subintervals for c in interval.codes})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "param": str(self.param),
            "status": self.status.value,
            "analyzer_calls": self.analyzer_calls,
            "proved": [iv.to_dict() for iv in self.proved_subintervals],
            "unresolved": [iv.to_dict() for iv in self.unresolved_subintervals],
        }


@dataclass
class RaTrace:
    """Call count and interval outcomes collected during a search."""
    calls: int = 0
    proved: List[ParamInterval] = field(default_factory=list)
    unresolved: List[ParamInterval] = field(default_factory=list)


AnalyzeFn = Callable[[ParamInterval], Verdict]


def _sympoly_analyzer(
    net: QuantizedNetwork, region: InputRegion, target: int, param: ParamId, slack: FpSlack
) -> AnalyzeFn:
    def run(interval: ParamInterval) -> Verdict:
        return analyze(net, region, target, SymbolicParamBinding.from_interval(param, interval), slack)
    return run


def binary_ra(
    net: QuantizedNetwork,
    region: InputRegion,
    target: int,
    param: ParamId,
    interval: ParamInterval,
    binary_search: bool = True,
    slack: FpSlack = DEFAULT_SLACK,
    analyze_fn: Optional[AnalyzeFn] = None,
    trace: Optional[RaTrace] = None,
) -> Verdict:
    """
    Prove a sign-uniform interval, splitting it at the midpoint on failure.

    The lower half is searched first and the search stops at the first
    failing single-candidate interval; intervals still pending at that point
    are recorded as unresolved. With binary_search=False only the hull is tried.

    Args:
        analyze_fn: Replaces the SymPoly analysis (used to count calls in tests)
        trace: Collects calls and interval outcomes when given
    """
    analyze_fn = analyze_fn or _sympoly_analyzer(net, region, target, param, slack)
    trace = trace if trace is not None else RaTrace()
    pending = [interval]
    while pending:
        current = pending.pop()
        trace.calls += 1
        if analyze_fn(current) is Verdict.PROVED:
            trace.proved.append(current)
            continue
        if current.is_point or not binary_search:
            trace.unresolved.append(current)
            trace.unresolved.extend(reversed(pending))
            return Verdict.UNKNOWN
        left, right = current.split()
        logger.debug("%s: splitting [%g, %g] into [%g, %g] and [%g, %g]",
                     param, current.lo, current.hi, left.lo, left.hi, right.lo, right.hi)
        pending.append(right)
        pending.append(left)
    return Verdict.PROVED


def bfa_ra(
    net: QuantizedNetwork,
    region: InputRegion,
    target: int,
    param: ParamId,
    max_flips: int,
    binary_search: bool = True,
    slack: FpSlack = DEFAULT_SLACK,
    analyze_fn: Optional[AnalyzeFn] = None,
) -> ParamVerdict:
    """
    Reachability verdict for one parameter under at most max_flips bit flips.

    The positive side is analysed first; once a side fails, the other side
    is not analysed and is reported as unresolved.
    """
    code = net.code(param)
    pos, neg = sign_split_intervals(code, net.quant_bits, max_flips, net.step_size(param))
    trace = RaTrace()
    status = ParamStatus.SAFE
    for side in (pos, neg):
        if side is None:
            continue
        if status is ParamStatus.UNKNOWN:
            trace.unresolved.append(side)
            continue
        verdict = binary_ra(net, region, target, param, side, binary_search, slack, analyze_fn, trace)
        if verdict is Verdict.UNKNOWN:
            status = ParamStatus.UNKNOWN
    return ParamVerdict(param, status, trace.calls, trace.proved, trace.unresolved)


def naive_check(
    net: QuantizedNetwork,
    region: InputRegion,
    target: int,
    param: ParamId,
    max_flips: int,
    slack: FpSlack = DEFAULT_SLACK,
) -> ParamVerdict:
    """One DeepPoly run per flipped value; calls = sum_{i<=n} C(Q, i) exactly."""
    step = net.step_size(param)
    proved, failing = [], []
    calls = 0
    for flipped in enumerate_flips(net.code(param), net.quant_bits, max_flips):
        attacked = apply_attack(net, attack_for_code(net, param, flipped))
        calls += 1
        interval = ParamInterval((flipped,), step)
        if deeppoly(attacked, region, target, slack) is Verdict.PROVED:
            proved.append(interval)
        else:
            failing.append(interval)
    status = ParamStatus.UNKNOWN if failing else ParamStatus.SAFE
    return ParamVerdict(param, status, calls, proved, failing)


def search_concrete_attack(
    net: QuantizedNetwork,
    region: InputRegion,
    target: int,
    param: ParamId,
    max_flips: int,
    samples: int = 1000,
    seed: int = 0,
    max_corner_dims: int = 10,
) -> Optional[Witness]:
    """
    Brute-force search: every flip of param against region corners, the
    midpoint and uniform samples. Returns the first misclassifying pair.
    """
    rng = np.random.default_rng(seed)
    points = np.vstack([
        region.corners(max_corner_dims),
        region.midpoint[None, :],
        region.sample(rng, samples),
    ])
    for flipped in enumerate_flips(net.code(param), net.quant_bits, max_flips):
        attack = attack_for_code(net, param, flipped)
        outputs = forward_batch(apply_attack(net, attack), points)
        wrong = np.flatnonzero(np.argmax(outputs, axis=1) + 1 != target)
        if wrong.size:
            index = wrong[0]
            return Witness(attack, points[index].copy(), outputs[index].copy(), target)
    return None
