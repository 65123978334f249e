"""Command line entry point: `mwscm scenario|exp|scenarios|provider`."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, MwscmError, ScenarioParseError
from .harness.experiments import ExperimentConfig, experiment_providers, experiment_tasks, rows_to_csv, traces_to_csv
from .harness.scenario import parse_scenario, resolve_scenario_path, run_scenario, shipped_scenarios, write_outputs
from .transport.sim import SimConfig


def int_list(text: str) -> tuple[int, ...]:
    """`1..10` or `1,2,4,8`."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(part) for part in text.split(",") if part)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b or a comma list, got {text!r}") from None


def float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _emit(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, "utf-8")


def cmd_scenario(args: argparse.Namespace) -> int:
    try:
        scenario = parse_scenario(resolve_scenario_path(args.file))
    except ScenarioParseError as exc:
        print(f"ScenarioParseError: {exc}", file=sys.stderr)
        return 2
    result = run_scenario(scenario)
    trace_path = Path(args.trace) if args.trace else Path("trace.csv")
    response_path = Path(args.response) if args.response else trace_path.with_name("response.txt")
    write_outputs(result, trace_path, response_path)
    sys.stdout.write(result.response_text())
    return result.exit_code


def cmd_scenarios(args: argparse.Namespace) -> int:
    for name, path in shipped_scenarios().items():
        print(f"{name}\t{path}")
    return 0


def cmd_exp(args: argparse.Namespace) -> int:
    try:
        sim = SimConfig(args.link_ms, args.fetch_ms, args.drop, args.seed)
        if args.which == "providers":
            config = ExperimentConfig(args.n, (args.tasks,), args.fractions, args.reps, sim, args.seed)
            rows = experiment_providers(config)
        else:
            config = ExperimentConfig((args.providers,), args.t, args.fractions, args.reps, sim, args.seed)
            rows = experiment_tasks(config)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return 2
    _emit(rows_to_csv(rows), args.out)
    if args.trace:
        Path(args.trace).write_text(traces_to_csv(rows), "utf-8")
    return 0


def cmd_provider(args: argparse.Namespace) -> int:
    """Host one provider on the live UDP/TCP transport until interrupted."""
    from .model import parse_taxonomy
    from .provider import load_provider_config, provider_start
    from .transport.udp import UdpTransport

    taxonomy = parse_taxonomy(Path(args.taxonomy).read_bytes())
    config = load_provider_config(Path(args.description), taxonomy, Path(args.handlers) if args.handlers else None)
    net = UdpTransport()
    handle = provider_start(config, net)
    print(f"serving {config.name} at {config.endpoint}; Ctrl-C to withdraw", file=sys.stderr)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        handle.stop()
        net.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mwscm", description="Mobile web service composition mediator harness")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="run a scenario file on the simulator")
    p.add_argument("file", help="scenario path or the name of a shipped scenario (mbv, locate)")
    p.add_argument("--trace", help="trace CSV path (default trace.csv)")
    p.add_argument("--response", help="response file path (default response.txt next to the trace)")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("scenarios", help="list shipped scenarios")
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("exp", help="cache-sweep experiments")
    exp_sub = p.add_subparsers(dest="which", required=True)
    for which in ("providers", "tasks"):
        e = exp_sub.add_parser(which)
        if which == "providers":
            e.add_argument("--n", type=int_list, default=tuple(range(1, 11)), help="provider counts, e.g. 1..10")
            e.add_argument("--tasks", type=int, default=4)
        else:
            e.add_argument("--providers", type=int, default=5)
            e.add_argument("--t", type=int_list, default=(1, 2, 4, 8), help="task counts, e.g. 1,2,4,8")
        e.add_argument("--fractions", type=float_list, default=(0.0, 0.25, 0.5, 1.0))
        e.add_argument("--reps", type=int, default=20)
        e.add_argument("--seed", type=int, default=42)
        e.add_argument("--link-ms", type=float, default=5.0)
        e.add_argument("--fetch-ms", type=float, default=50.0)
        e.add_argument("--drop", type=float, default=0.0)
        e.add_argument("--out", default="-", help="CSV output path, '-' for stdout")
        e.add_argument("--trace", help="also write the measured request traces here")
        e.set_defaults(func=cmd_exp)

    p = sub.add_parser("provider", help="host a provider on the live UDP/TCP transport")
    p.add_argument("description", help="service description (.sd) with a tcp:// endpoint")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--handlers")
    p.set_defaults(func=cmd_provider)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MwscmError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
