"""
End-to-end bit-flip verification: baseline check, per-parameter
reachability sweep, escalation of the vulnerable set to the MILP phase,
and concrete replay of witnesses.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from absdomain import InputRegion, Verdict, deeppoly
from bfa_ra import ParamVerdict, bfa_ra, naive_check, search_concrete_attack
from config import Settings
from conv_lowering import lower_conv
from errors import (
    BaselineRejectedError,
    ConfigurationError,
    ModelParseError,
    ShapeError,
    WitnessError,
)
from lp_format import export_lp
from milp import VulnerableParam, build_milp
from milp_solver import MilpOutcome, MilpStatus, bfa_milp
from models import ParamId, QuantizedNetwork, classify, forward
from quant import Witness, apply_attack, enumerate_flips
from utils import Budget, run_ordered

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


class Mode(Enum):
    RA_ONLY = "ra_only"
    FULL = "full"
    NAIVE_BASELINE = "naive_baseline"


class OverallStatus(Enum):
    BFA_TOLERANT = "BFA_Tolerant"
    FALSIFIED = "Falsified"
    UNKNOWN = "Unknown"
    TIMEOUT = "Timeout"

    @property
    def exit_code(self) -> int:
        return {"BFA_Tolerant": 0, "Falsified": 1}.get(self.value, 2)


SCOPE_KINDS = ("all", "layers", "params", "exclude", "sample")


@dataclass(frozen=True)
class ParameterScope:
    """
    Which parameters the sweep analyses.

    kinds: all, layers (layer filter), params (explicit list), exclude
    (all but a list), sample (seeded per-layer sample of weights and biases).
    """
    kind: str = "all"
    layers: Tuple[int, ...] = ()
    params: Tuple[ParamId, ...] = ()
    weights_per_layer: int = 100
    biases_per_layer: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCOPE_KINDS:
            raise ConfigurationError(f"Unknown scope {self.kind!r}; expected one of {SCOPE_KINDS}")

    @classmethod
    def parse(cls, text: str, settings: Optional[Settings] = None) -> "ParameterScope":
        """
        Parse 'all', 'sample', 'layers=3,4', 'params=W3_2_2,b3_1' or 'exclude=W3_2_2'.
        """
        settings = settings or Settings()
        kind, _, values = text.partition("=")
        kind = kind.strip()
        items = [v.strip() for v in values.split(",") if v.strip()]
        sampling = dict(
            weights_per_layer=settings.sample_weights_per_layer,
            biases_per_layer=settings.sample_biases_per_layer,
            seed=settings.sample_seed,
        )
        if kind in ("all", "sample"):
            if items:
                raise ConfigurationError(f"Scope {kind!r} takes no values")
            return cls(kind, **sampling)
        if not items:
            raise ConfigurationError(f"Scope {kind!r} needs a comma-separated list")
        if kind == "layers":
            try:
                return cls(kind, layers=tuple(int(v) for v in items))
            except ValueError as e:
                raise ConfigurationError(f"Invalid layer list {values!r}") from e
        return cls(kind, params=tuple(ParamId.parse(v) for v in items))

    def select(self, net: QuantizedNetwork) -> List[ParamId]:
        """In-scope parameters of net in (layer, role, row, col) order."""
        every = list(net.parameters())
        if self.kind == "all":
            return every
        if self.kind == "layers":
            return [p for p in every if p.layer_index in self.layers]
        if self.kind == "params":
            return sorted({net.alias_group(p)[0] for p in self.params})
        if self.kind == "exclude":
            excluded = {net.alias_group(p)[0] for p in self.params}
            return [p for p in every if p not in excluded]

        rng = np.random.default_rng(self.seed)
        chosen: List[ParamId] = []
        for layer_index in sorted({p.layer_index for p in every}):
            for is_bias, cap in ((True, self.biases_per_layer), (False, self.weights_per_layer)):
                pool = [p for p in every if p.layer_index == layer_index and p.is_bias == is_bias]
                if len(pool) > cap:
                    picked = rng.choice(len(pool), size=cap, replace=False)
                    pool = [pool[i] for i in picked]
                chosen.extend(pool)
        return sorted(chosen)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind}
        if self.kind == "layers":
            data["layers"] = list(self.layers)
        elif self.kind in ("params", "exclude"):
            data["params"] = [str(p) for p in self.params]
        elif self.kind == "sample":
            data.update(weights_per_layer=self.weights_per_layer,
                        biases_per_layer=self.biases_per_layer, seed=self.seed)
        return data


@dataclass
class VerificationJob:
    network: QuantizedNetwork
    region: InputRegion
    target: int
    max_flips: int
    mode: Mode = Mode.FULL
    scope: ParameterScope = field(default_factory=ParameterScope)
    settings: Settings = field(default_factory=Settings)
    model_path: Optional[str] = None
    export_lp_path: Optional[Path] = None

    def __post_init__(self):
        q = self.network.quant_bits
        if not 1 <= self.max_flips <= q:
            raise ConfigurationError(f"Bit-flip bound must be in [1, {q}], got {self.max_flips}")
        if not 1 <= self.target <= self.network.output_dim:
            raise ConfigurationError(f"Target class {self.target} outside [1, {self.network.output_dim}]")
        if self.region.dim != self.network.input_dim:
            raise ShapeError(f"Region has dimension {self.region.dim}, network expects {self.network.input_dim}")


@dataclass
class VerificationReport:
    overall: OverallStatus
    mode: Mode
    target: int
    max_flips: int
    quant_bits: int
    region: InputRegion
    scope: ParameterScope
    verdicts: List[ParamVerdict] = field(default_factory=list)
    vulnerable: List[VulnerableParam] = field(default_factory=list)
    skipped: List[ParamId] = field(default_factory=list)
    witness: Optional[Witness] = None
    milp: Optional[MilpOutcome] = None
    origins: Dict[ParamId, ParamId] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    model: Optional[str] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def ra_calls(self) -> int:
        return sum(v.analyzer_calls for v in self.verdicts)

    @property
    def milp_calls(self) -> int:
        return self.milp.deeppoly_calls if self.milp else 0

    @property
    def exit_code(self) -> int:
        return self.overall.exit_code

    def _verdict_dict(self, verdict: ParamVerdict) -> Dict[str, Any]:
        data = verdict.to_dict()
        origin = self.origins.get(verdict.param)
        if origin is not None and origin != verdict.param:
            data["origin"] = str(origin)
        return data

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        data = {
            "schema_version": SCHEMA_VERSION,
            "overall": self.overall.value,
            "mode": self.mode.value,
            "model": self.model,
            "target": self.target,
            "max_flips": self.max_flips,
            "quant_bits": self.quant_bits,
            "region": self.region.to_dict(),
            "scope": self.scope.to_dict(),
            "calls": {"reachability": self.ra_calls, "milp_deeppoly": self.milp_calls},
            "parameters": [self._verdict_dict(v) for v in self.verdicts],
            "vulnerable": vulnerable_parameters(self),
            "skipped": [str(p) for p in self.skipped],
            "milp": self.milp.to_dict() if self.milp else None,
            "witness": self.witness.to_dict() if self.witness else None,
            "notes": list(self.notes),
        }
        if include_timings:
            data["timings"] = dict(self.timings)
        return data


def vulnerable_parameters(report: VerificationReport) -> List[Dict[str, Any]]:
    """The vulnerable set with the candidates handed to the MILP phase, in ParamId order."""
    by_param = {v.param: v for v in report.verdicts}
    listing = []
    for member in sorted(report.vulnerable, key=lambda m: m.param):
        verdict = by_param.get(member.param)
        listing.append({
            "param": str(member.param),
            "original_code": member.original_code,
            "flip_codes": list(member.flip_codes),
            "flip_values": list(member.candidates),
            "unresolved": [iv.to_dict() for iv in verdict.unresolved_subintervals] if verdict else [],
        })
    return listing


def _vulnerable_member(net: QuantizedNetwork, verdict: ParamVerdict, max_flips: int, full_sets: bool) -> VulnerableParam:
    code = net.code(verdict.param)
    codes = set(verdict.unresolved_codes) - {code}
    if full_sets or not codes:
        codes = set(enumerate_flips(code, net.quant_bits, max_flips))
    return VulnerableParam(verdict.param, code, tuple(sorted(codes)), net.step_size(verdict.param))


def _sweep(job: VerificationJob, net: QuantizedNetwork, params: Sequence[ParamId]) -> Tuple[List[ParamVerdict], List[ParamId]]:
    settings = job.settings
    slack = settings.slack()
    budget = Budget(settings.timeout_ra)

    def analyse(param: ParamId) -> Optional[ParamVerdict]:
        if budget.expired():
            return None
        if job.mode is Mode.NAIVE_BASELINE:
            return naive_check(net, job.region, job.target, param, job.max_flips, slack)
        return bfa_ra(net, job.region, job.target, param, job.max_flips, settings.binary_search, slack)

    results = run_ordered(analyse, list(params), settings.workers)
    verdicts = [v for v in results if v is not None]
    skipped = [p for p, v in zip(params, results) if v is None]
    return verdicts, skipped


def _naive_witness(job: VerificationJob, net: QuantizedNetwork, verdicts: Sequence[ParamVerdict]) -> Optional[Witness]:
    settings = job.settings
    for verdict in verdicts:
        if verdict.is_safe:
            continue
        witness = search_concrete_attack(
            net, job.region, job.target, verdict.param, job.max_flips,
            settings.oracle_samples, settings.sample_seed, settings.max_corner_dims,
        )
        if witness is not None:
            return witness
    return None


def verify(job: VerificationJob) -> VerificationReport:
    """
    Run the baseline check, the reachability sweep and, in full mode, the
    MILP phase on the vulnerable set.

    Raises:
        BaselineRejectedError: If DeepPoly cannot prove the unattacked network
    """
    started = time.perf_counter()
    settings = job.settings
    slack = settings.slack()
    net = lower_conv(job.network)
    report = VerificationReport(
        OverallStatus.UNKNOWN, job.mode, job.target, job.max_flips, net.quant_bits,
        job.region, job.scope, model=job.model_path or job.network.name,
    )

    if deeppoly(net, job.region, job.target, slack) is not Verdict.PROVED:
        raise BaselineRejectedError(
            f"The unattacked network is not proved to classify the region as {job.target}; "
            "bit-flip tolerance would be vacuous"
        )
    report.timings["baseline"] = time.perf_counter() - started
    logger.info("Baseline proved for target %d", job.target)

    params = job.scope.select(net)
    if net.aliases:
        report.origins = {p: net.origin(p) for p in params}
    phase = time.perf_counter()
    report.verdicts, report.skipped = _sweep(job, net, params)
    report.timings["reachability"] = time.perf_counter() - phase
    unknown = [v for v in report.verdicts if not v.is_safe]
    logger.info("Sweep: %d parameters, %d unresolved, %d analyzer calls",
                len(report.verdicts), len(unknown), report.ra_calls)
    report.vulnerable = [
        _vulnerable_member(net, v, job.max_flips, settings.milp_full_flip_sets) for v in unknown
    ]

    if report.skipped:
        logger.warning("Reachability budget exhausted with %d parameters left", len(report.skipped))
        report.overall = OverallStatus.TIMEOUT
    elif job.mode is Mode.NAIVE_BASELINE:
        report.witness = _naive_witness(job, net, report.verdicts) if unknown else None
        if report.witness is not None:
            report.overall = OverallStatus.FALSIFIED
        else:
            report.overall = OverallStatus.UNKNOWN if unknown else OverallStatus.BFA_TOLERANT
    elif not unknown:
        report.overall = OverallStatus.BFA_TOLERANT
    elif job.mode is Mode.RA_ONLY:
        report.overall = OverallStatus.UNKNOWN
    else:
        _milp_phase(job, net, report)

    if report.witness is not None and not replay(report.witness, net):
        report.notes.append("Witness did not replay; status downgraded to Unknown")
        logger.error("Witness %s does not replay", report.witness.to_dict())
        report.witness = None
        report.overall = OverallStatus.UNKNOWN
    report.timings["total"] = time.perf_counter() - started
    logger.info("Verification result: %s", report.overall.value)
    return report


def _milp_phase(job: VerificationJob, net: QuantizedNetwork, report: VerificationReport) -> None:
    settings = job.settings
    slack = settings.slack()
    non_relu = sorted({layer.activation for layer in net.layers[:-1]} - {"relu"})
    if non_relu:
        report.notes.append(f"MILP phase supports ReLU networks only (found {', '.join(non_relu)})")
        logger.warning("Skipping MILP phase for activations %s", non_relu)
        report.overall = OverallStatus.UNKNOWN
        return

    phase = time.perf_counter()
    if job.export_lp_path is not None:
        model = build_milp(net, job.region, job.target, report.vulnerable, slack, settings.eps_strict)
        export_lp(model, job.export_lp_path)
        report.notes.append(f"LP model written to {job.export_lp_path}")

    outcome = bfa_milp(
        net, job.region, job.target, report.vulnerable,
        Budget(settings.timeout_milp), settings.eps_split, settings.workers, slack, settings.max_corner_dims,
    )
    report.milp = outcome
    report.timings["milp"] = time.perf_counter() - phase
    report.witness = outcome.witness
    report.overall = {
        MilpStatus.PROVED: OverallStatus.BFA_TOLERANT,
        MilpStatus.FALSIFIED: OverallStatus.FALSIFIED,
        MilpStatus.EPS_UNDECIDED: OverallStatus.UNKNOWN,
        MilpStatus.TIMEOUT: OverallStatus.TIMEOUT,
    }[outcome.status]
    if outcome.status is MilpStatus.EPS_UNDECIDED:
        report.notes.append(f"Input boxes below eps_split={settings.eps_split} stayed undecided")


def replay(witness: Witness, net: QuantizedNetwork) -> bool:
    """
    True iff the attacked network misclassifies the witness input.

    Raises:
        AttackError: If the witness addresses a parameter the network does not have
        ShapeError: If the witness input has the wrong dimension
    """
    net = lower_conv(net)
    if not 1 <= witness.target <= net.output_dim:
        raise WitnessError(f"Witness target {witness.target} outside [1, {net.output_dim}]")
    output = forward(apply_attack(net, witness.attack), witness.input)
    return classify(output) != witness.target


class CenterFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    center: List[float] = Field(min_length=1)


class BoxFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lower: List[float] = Field(min_length=1)
    upper: List[float] = Field(min_length=1)

    @model_validator(mode="after")
    def same_length(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have the same length")
        return self


class AttackEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    param: str
    bits: List[int]


class WitnessFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    attack: List[AttackEntry]
    input: List[float] = Field(min_length=1)
    output: List[float] = Field(default_factory=list)
    target: int = Field(ge=1)


def _read_json(path: Union[str, Path]) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ModelParseError(f"Invalid JSON in {path}: {e}") from e


def load_center(path: Union[str, Path]) -> np.ndarray:
    """Center vector from {"center": [...]} or a bare JSON list."""
    data = _read_json(path)
    if isinstance(data, list):
        data = {"center": data}
    try:
        return np.asarray(CenterFile.model_validate(data).center, dtype=float)
    except ValidationError as e:
        raise ModelParseError(f"Invalid center file {path}: {e}") from e


def load_box(path: Union[str, Path]) -> InputRegion:
    try:
        box = BoxFile.model_validate(_read_json(path))
    except ValidationError as e:
        raise ModelParseError(f"Invalid box file {path}: {e}") from e
    return InputRegion.box(box.lower, box.upper)


def load_witness(path: Union[str, Path]) -> Witness:
    """Witness from a witness file or from the witness entry of a report."""
    data = _read_json(path)
    if isinstance(data, dict) and "schema_version" in data:
        data = data.get("witness")
        if data is None:
            raise WitnessError(f"Report {path} carries no witness")
    try:
        parsed = WitnessFile.model_validate(data)
    except ValidationError as e:
        raise WitnessError(f"Invalid witness file {path}: {e}") from e
    return Witness.from_dict(parsed.model_dump())

