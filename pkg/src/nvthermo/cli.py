"""Command-line entry point: ``nvthermo <subcommand> --config scenario.yaml``.

Exit codes: 0 on success, 2 for invalid input (configuration, arguments,
sequence files) and 3 when an estimator or fit degenerates.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from nvthermo.experiments import RUNNERS
from nvthermo.pulse_engine import SequenceSyntaxError, parse_sequence, run_sequence
from nvthermo.scenario import ScenarioError, load_scenario
from nvthermo.spin_model import TWO_PI, zfs_at_temperature
from nvthermo.thermometry import EstimationError, FitError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3

SUBCOMMANDS = {
    "esr-scan": "esr_scan",
    "echo-bench": "echo",
    "power-sweep": "four_point",
    "heat-profile": "heat_profile",
    "sensitivity": "sensitivity_sweep",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _threads(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nvthermo", description="In-silico NV thermometry experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, protocol in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run a '{protocol}' scenario")
        p.add_argument("--config", required=True, type=Path, help="scenario YAML file")
        p.add_argument("--seed", type=_u64, default=None, help="override the scenario seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--noise", choices=("shot", "none"), default="shot")
        p.add_argument("--threads", type=_threads, default=1)
        if name == "echo-bench":
            p.add_argument("--sequence-file", type=Path, default=None,
                           help="pulse sequence to run at ambient temperature; its signal is added to the report")
    return parser


def _sequence_summary(scenario, sequence) -> dict:
    params = scenario.nv_params()
    carrier = zfs_at_temperature(params, scenario.ambient_temperature) + TWO_PI * scenario.echo.trace_detuning_hz
    res = run_sequence(sequence, params, scenario.field_environment(), scenario.ambient_temperature,
                       carrier, scenario.echo_photon_model(params))
    return {
        "text": sequence.to_text(),
        "free_evolution_time_s": sequence.free_evolution_time,
        "expected_signal_unitless": float(res.expected_signal),
        "accumulated_phase_rad": float(res.accumulated_phase),
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    protocol = SUBCOMMANDS[args.command]
    try:
        scenario = load_scenario(args.config)
        if scenario.protocol != protocol:
            raise ScenarioError(f"subcommand {args.command} needs protocol {protocol!r}, "
                                f"got {scenario.protocol!r}", "protocol")
        if args.seed is not None:
            scenario = dataclasses.replace(scenario, seed=args.seed)
        sequence = None
        if getattr(args, "sequence_file", None) is not None:
            sequence = parse_sequence(args.sequence_file.read_text(), label=args.sequence_file.name)
        out = args.out or (Path(scenario.output_dir) if scenario.output_dir else None)
        if out is None:
            raise ScenarioError("no output directory; pass --out or set output_dir", "output_dir")
        report = RUNNERS[protocol](scenario, noise=args.noise, threads=args.threads)
        if sequence is not None:
            report.summary["sequence"] = _sequence_summary(scenario, sequence)
        paths = report.write(out)
    except (ScenarioError, SequenceSyntaxError, ValueError, OSError) as exc:
        print(f"nvthermo: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EstimationError, FitError) as exc:
        print(f"nvthermo: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
