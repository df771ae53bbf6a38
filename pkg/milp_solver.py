"""
Built-in decision procedure for the attack MILP.

Instead of handing the monolithic model to a MILP solver, every one-hot
selector assignment is fixed in turn, which leaves a concrete attacked
network. Each one is decided by input-splitting branch and bound:
DeepPoly prunes proved boxes, concrete points look for violations, and
the widest dimension is split until boxes fall below eps_split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from absdomain import DEFAULT_SLACK, InputRegion, output_margins, propagate
from config import FpSlack
from conv_lowering import lower_conv
from milp import VulnerableParam, check_encodable
from models import QuantizedNetwork, forward_batch
from quant import AttackVector, Witness, apply_attack, attack_for_code, flip_positions
from utils import Budget, run_ordered

logger = logging.getLogger(__name__)


class MilpStatus(Enum):
    PROVED = "Proved"  # model infeasible
    FALSIFIED = "Falsified"
    EPS_UNDECIDED = "EpsUndecided"
    TIMEOUT = "Timeout"


# Aggregation precedence over per-assignment results
_PRECEDENCE = (MilpStatus.FALSIFIED, MilpStatus.TIMEOUT, MilpStatus.EPS_UNDECIDED, MilpStatus.PROVED)


@dataclass
class BoxSearch:
    """Result of input-split search on one concrete network."""
    status: MilpStatus
    input: Optional[np.ndarray] = None
    output: Optional[np.ndarray] = None
    boxes: int = 0
    deeppoly_calls: int = 0


@dataclass
class MilpOutcome:
    status: MilpStatus
    witness: Optional[Witness] = None
    assignments_total: int = 0
    assignments_closed: int = 0
    boxes_explored: int = 0
    deeppoly_calls: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "witness": self.witness.to_dict() if self.witness else None,
            "assignments_total": self.assignments_total,
            "assignments_closed": self.assignments_closed,
            "boxes_explored": self.boxes_explored,
            "deeppoly_calls": self.deeppoly_calls,
        }


def _probe_points(region: InputRegion, lower_forms: np.ndarray, max_corner_dims: int) -> np.ndarray:
    return np.vstack([region.midpoint[None, :], region.corners(max_corner_dims), lower_forms])


def input_split_search(
    net: QuantizedNetwork,
    region: InputRegion,
    target: int,
    eps_split: float = 1e-6,
    budget: Optional[Budget] = None,
    slack: FpSlack = DEFAULT_SLACK,
    max_corner_dims: int = 10,
) -> BoxSearch:
    """
    Decide argmax = target over region for one concrete network.

    Proved when every box is pruned, Falsified with the first concrete
    violation, EpsUndecided when only boxes narrower than eps_split remain.
    """
    budget = budget or Budget()
    result = BoxSearch(MilpStatus.PROVED)
    undecided = False
    pending = [region]
    while pending:
        if budget.expired():
            result.status = MilpStatus.TIMEOUT
            return result
        box = pending.pop()
        result.boxes += 1
        result.deeppoly_calls += 1
        margins = output_margins(propagate(net, box, slack), target)
        if np.all(margins.lower > 0):
            continue

        points = _probe_points(box, margins.minimizing_vertices(box), max_corner_dims)
        outputs = forward_batch(net, points)
        wrong = np.flatnonzero(np.argmax(outputs, axis=1) + 1 != target)
        if wrong.size:
            result.status = MilpStatus.FALSIFIED
            result.input = points[wrong[0]].copy()
            result.output = outputs[wrong[0]].copy()
            return result

        widths = box.widths
        if widths.max() < eps_split:
            undecided = True
            continue
        dim = int(np.argmax(widths))
        left, right = box.split(dim)
        pending.append(right)
        pending.append(left)

    if undecided:
        result.status = MilpStatus.EPS_UNDECIDED
    return result


def enumerate_assignments(net: QuantizedNetwork, vulnerable: Sequence[VulnerableParam]) -> List[Tuple[VulnerableParam, int]]:
    """
    One-hot selector assignments in search order: members by descending
    ParamId, then candidates by descending most significant flipped bit.
    """
    order = []
    for member in sorted(vulnerable, key=lambda m: m.param, reverse=True):
        codes = sorted(
            member.flip_codes,
            key=lambda c: (-max(flip_positions(member.original_code, c, net.quant_bits)), c),
        )
        order.extend((member, code) for code in codes)
    return order


def bfa_milp(
    net: QuantizedNetwork,
    region: InputRegion,
    target: int,
    vulnerable: Sequence[VulnerableParam],
    budget: Optional[Budget] = None,
    eps_split: float = 1e-6,
    workers: int = 1,
    slack: FpSlack = DEFAULT_SLACK,
    max_corner_dims: int = 10,
) -> MilpOutcome:
    """
    Decide whether some single-parameter attack from the vulnerable set
    misclassifies some input of region.

    An empty vulnerable set decides the unattacked network. The first
    violation in enumeration order is reported, whatever the worker count.
    """
    net = lower_conv(net)
    check_encodable(net)
    budget = budget or Budget()
    if budget.expired():
        return MilpOutcome(MilpStatus.TIMEOUT)

    if vulnerable:
        tasks = [attack_for_code(net, member.param, code) for member, code in enumerate_assignments(net, vulnerable)]
    else:
        tasks = [AttackVector(())]

    def run(attack: AttackVector) -> Tuple[AttackVector, QuantizedNetwork, BoxSearch]:
        attacked = apply_attack(net, attack)
        return attack, attacked, input_split_search(attacked, region, target, eps_split, budget, slack, max_corner_dims)

    results = run_ordered(run, tasks, workers, stop=lambda r: r[2].status is MilpStatus.FALSIFIED)
    outcome = MilpOutcome(MilpStatus.PROVED, assignments_total=len(tasks))
    statuses = set()
    for attack, attacked, search in results:
        outcome.boxes_explored += search.boxes
        outcome.deeppoly_calls += search.deeppoly_calls
        statuses.add(search.status)
        if search.status in (MilpStatus.PROVED, MilpStatus.EPS_UNDECIDED):
            outcome.assignments_closed += 1
        if search.status is MilpStatus.FALSIFIED:
            outcome.witness = Witness(attack, search.input, search.output, target)
            logger.info("Attack %s misclassifies input %s", attack.to_dict(), np.round(search.input, 6).tolist())
    outcome.status = next(s for s in _PRECEDENCE if s in statuses) if statuses else MilpStatus.PROVED
    if outcome.status is MilpStatus.TIMEOUT:
        logger.warning("MILP phase ran out of time after %d of %d assignments",
                       outcome.assignments_closed, len(tasks))
    return outcome
