"""
CPLEX LP text for feasibility models, and a reader for the same subset.

Coefficients use 17 significant digits, so writing and re-reading a model
reproduces every float exactly.
"""

import logging
from pathlib import Path
from typing import List, Union

from errors import ModelParseError
from milp import SENSES, MilpModel

logger = logging.getLogger(__name__)

_PRECISION = ".17g"
_COEF_TEMPLATE = "%+" + _PRECISION + " %s\n"
_RHS_TEMPLATE = "%s %" + _PRECISION + "\n\n"
_BOUND_TEMPLATE = " %" + _PRECISION + " <= %s <= %" + _PRECISION + "\n"

_SECTIONS = {"subject to": "constraints", "bounds": "bounds", "binary": "binary", "binaries": "binary", "end": "end"}


def _no_negative_zero(value: float) -> float:
    return 0.0 if value == 0 else value


def format_lp(model: MilpModel) -> str:
    """LP text with Subject To (when non-empty), Bounds, Binary (when non-empty) and End."""
    output: List[str] = []
    if model.constraints:
        output.append("Subject To\n")
        for constraint in model.constraints:
            output.append(f"{constraint.name}:\n")
            for var, coeff in constraint.coeffs.items():
                output.append(_COEF_TEMPLATE % (_no_negative_zero(coeff), var))
            output.append(_RHS_TEMPLATE % (constraint.sense, _no_negative_zero(constraint.rhs)))
    output.append("Bounds\n")
    for var in model.variables.values():
        output.append(_BOUND_TEMPLATE % (_no_negative_zero(var.lower), var.name, _no_negative_zero(var.upper)))
    binaries = model.binaries
    if binaries:
        output.append("Binary\n")
        output.extend(f" {name}\n" for name in binaries)
    output.append("End\n")
    return "".join(output)


def export_lp(model: MilpModel, path: Union[str, Path]) -> Path:
    """Write model as an LP file; OSError propagates to the caller."""
    path = Path(path)
    path.write_text(format_lp(model), encoding="utf-8")
    logger.info("Wrote LP model with %d constraints to %s", len(model.constraints), path)
    return path


def parse_lp(text: str) -> MilpModel:
    """
    Read LP text produced by format_lp.

    Raises:
        ModelParseError: On unknown sections or malformed lines
    """
    model = MilpModel()
    pending = []  # (name, tokens, sense, rhs) until bounds declare the variables
    binaries = []
    section = None
    current_name, tokens = None, []

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        key = line.lower()
        if key in _SECTIONS:
            if current_name is not None:
                raise ModelParseError(f"Line {number}: constraint {current_name} has no right-hand side")
            section = _SECTIONS[key]
            continue
        if section == "constraints":
            if current_name is None:
                if not line.endswith(":"):
                    raise ModelParseError(f"Line {number}: expected a constraint name, got {line!r}")
                current_name, tokens = line[:-1].strip(), []
                continue
            parts = line.split()
            if parts[0] in SENSES:
                if len(parts) != 2:
                    raise ModelParseError(f"Line {number}: malformed right-hand side {line!r}")
                pending.append((current_name, tokens, parts[0], _number(parts[1], number)))
                current_name = None
                continue
            if len(parts) != 2:
                raise ModelParseError(f"Line {number}: expected '<coefficient> <variable>', got {line!r}")
            tokens.append((parts[1], _number(parts[0], number)))
        elif section == "bounds":
            parts = line.split()
            if len(parts) != 5 or parts[1] != "<=" or parts[3] != "<=":
                raise ModelParseError(f"Line {number}: expected 'lo <= var <= hi', got {line!r}")
            model.add_variable(parts[2], _number(parts[0], number), _number(parts[4], number))
        elif section == "binary":
            binaries.append(line)
        elif section == "end":
            raise ModelParseError(f"Line {number}: content after End")
        else:
            raise ModelParseError(f"Line {number}: content outside any section")

    if section != "end":
        raise ModelParseError("LP text is missing its End line")
    for name in binaries:
        if name not in model.variables:
            raise ModelParseError(f"Binary variable {name} has no bounds")
        model.variables[name].binary = True
    for name, terms, sense, rhs in pending:
        coeffs = {}
        for var, coeff in terms:
            if var not in model.variables:
                raise ModelParseError(f"Constraint {name} uses undeclared variable {var}")
            coeffs[var] = coeffs.get(var, 0.0) + coeff
        model.add_constraint(coeffs, sense, rhs, name)
    return model


def _number(token: str, line: int) -> float:
    try:
        return float(token)
    except ValueError as e:
        raise ModelParseError(f"Line {line}: {token!r} is not a number") from e
