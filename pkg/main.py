#!/usr/bin/env python3
"""
QNN Bit-Flip Verifier - prove quantized networks tolerant to bit-flip attacks
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from absdomain import InputRegion
from config import load_settings
from errors import VerifierError
from model_parser import load_model
from reports import export_csv, layer_summary, write_report_json
from utils import format_interval
from verifier import (
    Mode,
    OverallStatus,
    ParameterScope,
    VerificationJob,
    VerificationReport,
    load_box,
    load_center,
    load_witness,
    replay,
    verify,
)

EXIT_USAGE = 3

STATUS_EMOJI = {
    OverallStatus.BFA_TOLERANT: "✅",
    OverallStatus.FALSIFIED: "💥",
    OverallStatus.UNKNOWN: "❓",
    OverallStatus.TIMEOUT: "⏱️",
}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with code 3 so 1 and 2 stay verification outcomes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def print_report(report: VerificationReport):
    """Print formatted verification results."""

    print("\n" + "=" * 60)
    print("🛡️  BIT-FLIP VERIFICATION RESULTS")
    print("=" * 60)

    print(f"\n{STATUS_EMOJI[report.overall]} OVERALL: {report.overall.value}")
    print(f"   Mode: {report.mode.value}")
    print(f"   Target class: {report.target}")
    print(f"   Bit flips per parameter: <= {report.max_flips} (Q = {report.quant_bits})")

    safe = sum(1 for v in report.verdicts if v.is_safe)
    print(f"\n📊 PARAMETER SWEEP")
    print(f"   Parameters analysed: {len(report.verdicts)}")
    print(f"   Safe: {safe}")
    print(f"   Unknown: {len(report.verdicts) - safe}")
    print(f"   Analyzer calls: {report.ra_calls}")
    if report.skipped:
        print(f"   Not analysed (budget): {len(report.skipped)}")

    summary = layer_summary(report)
    if not summary.empty:
        print(f"\n📈 PER LAYER")
        for row in summary.itertuples(index=False):
            print(f"   Layer {row.layer}: {row.safe} safe, {row.unknown} unknown, {row.analyzer_calls} calls")

    if report.vulnerable:
        print(f"\n⚠️  VULNERABLE PARAMETERS ({len(report.vulnerable)})")
        for member in report.vulnerable[:10]:
            values = ", ".join(f"{v:g}" for v in member.candidates)
            print(f"   • {member.param}: {member.original_value:g} -> {{{values}}}")
        if len(report.vulnerable) > 10:
            print(f"   ... and {len(report.vulnerable) - 10} more")

    if report.milp is not None:
        print(f"\n🧮 MILP PHASE")
        print(f"   Outcome: {report.milp.status.value}")
        print(f"   Assignments closed: {report.milp.assignments_closed}/{report.milp.assignments_total}")
        print(f"   Boxes explored: {report.milp.boxes_explored}")

    if report.witness is not None:
        w = report.witness
        print(f"\n💥 WITNESS")
        for param, bits in w.attack.pairs:
            print(f"   Flip bits {sorted(bits)} of {param}")
        print(f"   Input: {[round(float(v), 6) for v in w.input]}")
        print(f"   Output: {[round(float(v), 6) for v in w.output]}")

    for note in report.notes:
        print(f"\nℹ️  {note}")

    print("\n" + "=" * 60)


def _region(args) -> InputRegion:
    if args.box is not None:
        if args.radius is not None:
            raise VerifierError("--radius applies to --center only, not --box")
        return load_box(args.box)
    if args.radius is None:
        raise VerifierError("--center needs --radius")
    return InputRegion.linf_ball(load_center(args.center), args.radius)


def run_verify(args) -> int:
    settings = load_settings(
        args.settings,
        workers=args.workers,
        timeout_ra=args.timeout_ra,
        timeout_milp=args.timeout_milp,
        eps_split=args.eps_split,
        eps_strict=args.eps_strict,
        binary_search=False if args.no_binary_search else None,
        milp_full_flip_sets=True if args.full_flip_sets else None,
    )
    model_path = Path(args.model)
    print(f"📄 Loading model: {model_path.name}")
    net = load_model(model_path)
    region = _region(args)
    print(f"🎯 Region: {', '.join(format_interval(lo, hi) for lo, hi in zip(region.lower, region.upper))}")

    job = VerificationJob(
        net, region, args.target, args.bits, Mode(args.mode),
        ParameterScope.parse(args.scope, settings), settings, str(model_path),
        Path(args.export_lp) if args.export_lp else None,
    )
    report = verify(job)
    print_report(report)

    if args.out:
        write_report_json(report, args.out)
        print(f"💾 Report written to {args.out}")
    if args.csv:
        export_csv(report, args.csv)
        print(f"💾 Verdict table written to {args.csv}")
    return report.exit_code


def run_replay(args) -> int:
    net = load_model(args.model)
    witness = load_witness(args.witness)
    if replay(witness, net):
        print("💥 Witness replays: the attacked network misclassifies the input")
        return 0
    print("✅ Witness does not replay: the attacked network keeps the target class")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        description="Verify quantized neural networks against bit-flip attacks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py verify --model networks/two_layer_relu.json --center networks/two_layer_relu_center.json \\
      --radius 0 --target 1 --bits 1 --mode full --out report.json
  python main.py replay --model networks/two_layer_relu.json --witness report.json

Exit codes: 0 tolerant / witness replays, 1 falsified / witness does not replay,
2 unknown or timeout, 3 usage, input or rejected-baseline errors.
        """,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="Show progress (-v) or per-analysis detail (-vv)")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    check = commands.add_parser("verify", help="Run a verification job")
    check.add_argument("--model", required=True, help="Path to the quantized model JSON")
    where = check.add_mutually_exclusive_group(required=True)
    where.add_argument("--center", help="JSON file with the L-infinity ball center")
    where.add_argument("--box", help="JSON file with lower/upper box bounds")
    check.add_argument("--radius", type=float, help="L-infinity radius around --center")
    check.add_argument("--target", type=int, required=True, help="Expected class (1-based)")
    check.add_argument("--bits", type=int, required=True, help="Maximum flipped bits per parameter")
    check.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.FULL.value)
    check.add_argument("--scope", default="all",
                       help="all | sample | layers=3,4 | params=W3_2_2,b3_1 | exclude=W3_2_2")
    check.add_argument("--workers", type=int, help="Worker threads for the sweep and the MILP phase")
    check.add_argument("--timeout-ra", type=float, help="Seconds for the reachability sweep")
    check.add_argument("--timeout-milp", type=float, help="Seconds for the MILP phase")
    check.add_argument("--eps-split", type=float, help="Smallest input box width the MILP phase splits")
    check.add_argument("--eps-strict", type=float, help="Margin realizing strict inequalities")
    check.add_argument("--export-lp", help="Also write the MILP model in LP format")
    check.add_argument("--full-flip-sets", action="store_true",
                       help="Hand every flip to the MILP phase instead of the unresolved ones")
    check.add_argument("--no-binary-search", action="store_true", help="Analyse flip hulls without splitting")
    check.add_argument("--settings", help="JSON file overriding verifier_defaults.json")
    check.add_argument("--out", help="Write the report JSON here")
    check.add_argument("--csv", help="Write the per-parameter table as CSV here")
    check.set_defaults(run=run_verify)

    again = commands.add_parser("replay", help="Replay a witness against a model")
    again.add_argument("--model", required=True, help="Path to the quantized model JSON")
    again.add_argument("--witness", required=True, help="Witness JSON or a report containing one")
    again.set_defaults(run=run_replay)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the verifier CLI."""
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.run(args)
    except (VerifierError, OSError) as e:
        print(f"❌ Error: {e}")
        if args.verbose:
            import traceback
            traceback.print_exc()
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
