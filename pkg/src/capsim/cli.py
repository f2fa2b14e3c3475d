"""Command-line entry point: ``capsim <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 bad input data or config,
3 runtime failure. Progress goes to stderr; results go to stdout or files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import trace as T
from .config import load_campaign_spec, load_protocol_config, protocol_config, resolve_spec_path
from .engine import CaptureScenario, SimulationError, run_simulation
from .experiment import CampaignError, export, load_result, run_campaign, write_manifest
from .protocols import ConfigError, Kind, ProtocolConfig
from .synthetic import infocom_like_raw

log = logging.getLogger("capsim")

OUT_ENV = "CAPSIM_OUT"
DATA_ERRORS = (T.TraceError, ConfigError, CampaignError, FileNotFoundError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _span(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}")
    return int(lo), int(hi)


def _id_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _capture(text: str) -> CaptureScenario:
    victim, sep, at = text.partition("@")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected VICTIM@TIME, got {text!r}")
    return CaptureScenario(int(victim), int(at))


def _add_protocol_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("protocol parameters (override the config file)")
    g.add_argument("--config", metavar="FILE", help="protocol key=value (TOML) file")
    g.add_argument("--tau", type=int, help="tau: interval between benchmark presence claims, s")
    g.add_argument("--delta", type=int, help="delta: time a node has to prove its presence, s")
    g.add_argument("--gamma", type=int, help="gamma: AdaBo cooperation window before a time-out, s")
    g.add_argument("--sigma", type=int, help="sigma: flood propagation delay, s")
    g.add_argument("-K", "--k-tracked", type=int, help="K: tracked slots per node (Base/Adaptive)")
    g.add_argument("--sms-capacity", type=int, help="silent memory slots (Adaptive/AdaBo)")
    g.add_argument("--sms-refresh", type=int, dest="sms_refresh_interval", help="SMS eviction period, s")
    g.add_argument("--setup", type=int, dest="setup_duration", help="AdaBo statistics-only start-up, s")
    g.add_argument("--max-exchanges", type=int, help="AdaBo exchange counter cap for proposers")
    g.add_argument("--booking", dest="booking_assignment",
                   help="'successor' (i -> i+1 mod n) or comma list of tracked IDs per node")
    g.add_argument("--base-cooperation", action="store_true", default=None,
                   help="meeting nodes merge last-seen times of commonly tracked nodes")
    g.add_argument("--no-admin-slot", dest="admin_setup_slot", action="store_false", default=None,
                   help="disable the AdaBo administrator booking slot used until self tokens move")
    g.add_argument("--strict-cap", action="store_true", default=None,
                   help="capped AdaBo nodes also refuse to accept exchanges")
    g.add_argument("--flip-exchange-rule", action="store_true", default=None,
                   help="acceptor keeps the better-scored token (sensitivity option)")
    g.add_argument("--aligned-claims", dest="benchmark_stagger", action="store_false", default=None,
                   help="all benchmark claims at t=0, tau, 2 tau, ... instead of staggered")
    g.add_argument("--benchmark-tracked", type=int, help="benchmark watchers per node (0 = all)")


def _protocol_overrides(args: argparse.Namespace) -> dict:
    keys = ("tau", "delta", "gamma", "sigma", "k_tracked", "sms_capacity", "sms_refresh_interval",
            "setup_duration", "max_exchanges", "base_cooperation", "admin_setup_slot", "strict_cap",
            "flip_exchange_rule", "benchmark_stagger", "benchmark_tracked")
    out = {k: getattr(args, k) for k in keys}
    booking = args.booking_assignment
    if booking is not None and booking != "successor":
        booking = _id_list(booking)
    out["booking_assignment"] = booking
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="capsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"capsim {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="window, filter, relabel and repeat a trace")
    p.add_argument("input", help="canonical time,a,b CSV")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--window", type=_span, metavar="T0:T1", help="keep events in [T0, T1], shift to 0")
    p.add_argument("--id-range", type=_span, metavar="LO:HI", help="keep only node IDs in [LO, HI]")
    p.add_argument("--drop", type=_id_list, default=[], metavar="IDS", help="comma list of original IDs to remove")
    p.add_argument("--drop-inactive", action="store_true", help="remove nodes with no meeting left")
    p.add_argument("--repeat", type=int, default=1, metavar="K", help="concatenate K copies")
    p.add_argument("--symmetrize", action="store_true",
                   help="treat meetings as symmetric (always the case in the canonical format)")

    p = sub.add_parser("stats", help="per-node meeting counts")
    p.add_argument("trace")
    p.add_argument("--quantile", type=float, default=0.1, help="isolated-node quantile (stderr report)")
    p.add_argument("--original-ids", action="store_true", help="label rows with pre-relabel IDs from the sidecar")
    p.add_argument("-o", "--output")

    p = sub.add_parser("simulate", help="run one protocol over a trace")
    p.add_argument("trace")
    p.add_argument("--protocol", choices=[k.value for k in Kind], default=None)
    p.add_argument("--lambda", dest="lam", type=int, help="lambda: alarm time-out, s")
    p.add_argument("--capture", type=_capture, metavar="VICTIM@TIME", help="inject one capture")
    p.add_argument("--measure-from", type=int, default=0, help="ignore messages before this instant, s")
    p.add_argument("--alarm-log", metavar="FILE", help="write the alarm log as JSON lines")
    p.add_argument("-o", "--output", help="result JSON file (default stdout)")
    _add_protocol_flags(p)

    p = sub.add_parser("campaign", help="run a capture-grid campaign")
    p.add_argument("--spec", required=True, help="campaign TOML ('paper.toml' resolves to the bundled one)")
    p.add_argument("--trace", help="override the spec's trace path")
    p.add_argument("--workers", type=int, help="worker processes (0 = one per CPU)")
    p.add_argument("--protocols", type=lambda s: tuple(s.split(",")), help="comma list override")
    p.add_argument("--lambdas", type=lambda s: tuple(_id_list(s)), help="comma list of lambda values, s")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or runs/<spec name>)")
    _add_protocol_flags(p)

    p = sub.add_parser("export", help="convert a campaign result.json")
    p.add_argument("result")
    p.add_argument("--format", action="append", choices=["csv", "json", "plot-data"], dest="formats")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic raw conference-shaped trace")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=2005)
    p.add_argument("--scale", type=float, default=1.0, help="meeting-rate multiplier")
    return parser


def cmd_preprocess(args) -> int:
    tr = T.load_trace(args.input)
    relabel = {i: i for i in range(tr.n)}
    if args.window:
        tr = T.filter_window(tr, *args.window)
    if args.id_range:
        tr, m = T.keep_id_range(tr, *args.id_range)
        relabel = T.compose_relabel(relabel, m)
    if args.drop:
        tr, m = T.remove_nodes(tr, [relabel[i] for i in args.drop if i in relabel])
        relabel = T.compose_relabel(relabel, m)
    if args.drop_inactive:
        tr, m = T.drop_inactive(tr)
        relabel = T.compose_relabel(relabel, m)
    if args.repeat != 1:
        tr = T.repeat_trace(tr, args.repeat)
    T.save_trace(tr, args.output, relabel)
    print(f"{args.output}: n={tr.n} duration={tr.duration} events={len(tr.events)}", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    tr = T.load_trace(args.trace)
    stats = T.meeting_counts(tr, args.quantile)
    labels = None
    if args.original_ids:
        labels = {new: old for old, new in T.load_relabel_map(args.trace).items()}
    body = T.stats_csv(stats, labels)
    if args.output:
        Path(args.output).write_text(body, encoding="utf-8")
    else:
        sys.stdout.write(body)
    iso = [labels.get(i, i) if labels else i for i in stats.isolated]
    print(f"isolated (<= q{args.quantile}): {iso}", file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    tr = T.load_trace(args.trace)
    base = load_protocol_config(args.config) if args.config else ProtocolConfig()
    values = _protocol_overrides(args)
    values["kind"] = args.protocol
    values["lam"] = args.lam
    cfg = protocol_config(values, base)
    result = run_simulation(tr, cfg, args.capture, args.measure_from)
    body = json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(body, encoding="utf-8")
    else:
        sys.stdout.write(body)
    if args.alarm_log:
        with open(args.alarm_log, "w", encoding="utf-8") as fh:
            for rec in result.to_dict()["alarm_log"]:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return 0


def cmd_campaign(args) -> int:
    spec_path = resolve_spec_path(args.spec)
    spec = load_campaign_spec(spec_path)
    changes = {}
    if args.trace:
        changes["trace"] = args.trace
    if args.protocols:
        changes["protocols"] = args.protocols
    if args.lambdas:
        changes["lambdas"] = args.lambdas
    proto = spec.protocol
    if args.config:
        proto = load_protocol_config(args.config)
    proto = protocol_config(_protocol_overrides(args), proto)
    spec = replace(spec, protocol=proto, **changes)
    trace_path = Path(spec.trace)
    if not trace_path.exists():
        raise FileNotFoundError(f"trace {trace_path} not found (use --trace)")
    tr = T.load_trace(trace_path)
    outdir = Path(args.out or os.environ.get(OUT_ENV) or Path("runs") / Path(args.spec).stem)
    workers = args.workers if args.workers is not None else spec.workers
    print(f"campaign: {len(spec.protocols)} protocols x {len(spec.lambdas)} lambdas "
          f"x {tr.n * spec.grid_intervals} captures -> {outdir}", file=sys.stderr)
    result = run_campaign(spec, tr, workers=workers)
    # the worker count is an execution detail, not part of the recorded spec
    export(result, outdir)
    write_manifest(outdir, replace(spec, workers=0), trace_path)
    failures = sum(r.failures for r in result.aggregates)
    if failures:
        print(f"{failures} runs failed; see runs.csv", file=sys.stderr)
        return 3
    return 0


def cmd_export(args) -> int:
    result = load_result(args.result)
    for path in export(result, args.out, args.formats or ("csv",)):
        print(path)
    return 0


def cmd_synth(args) -> int:
    tr = infocom_like_raw(seed=args.seed, scale=args.scale)
    Path(args.output).write_text(T.serialize(tr), encoding="utf-8")
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "stats": cmd_stats,
    "simulate": cmd_simulate,
    "campaign": cmd_campaign,
    "export": cmd_export,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except DATA_ERRORS as exc:
        print(f"capsim: data error: {exc}", file=sys.stderr)
        return 2
    except (SimulationError, OSError, RuntimeError) as exc:
        print(f"capsim: runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
