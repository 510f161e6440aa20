"""Command-line entry point: run scenarios, grade traces, compare pipeline modes.

Exit status: 0 when every graded row passes (or is NA), 1 when any row fails
(unless ``--no-fail-exit``), 2 on unreadable or invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from typing import Optional, Sequence

from . import __version__
from .grading import RequirementReport, format_json, format_text, grade, metrics, parse_json
from .netsim.pipeline import PipelineMode
from .risk import RequirementProfile
from .scenario import BUILTIN_NAMES, ConfigError, builtin_scenario, dump_scenario, load_scenario, run
from .scenario.config import ScenarioConfig
from .trace import TraceError, read_trace, write_trace

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("v2vru")


class InputError(Exception):
    pass


def _load_config(ref: str) -> ScenarioConfig:
    if ref in BUILTIN_NAMES and not os.path.exists(ref):
        return builtin_scenario(ref)
    if not os.path.exists(ref):
        raise InputError(f"{ref}: no such file and not a builtin scenario ({', '.join(BUILTIN_NAMES)})")
    return load_scenario(ref)


def _load_profile(ref: str) -> RequirementProfile:
    if ref == "default":
        return RequirementProfile()
    try:
        with open(ref, encoding="utf-8") as fp:
            data = json.load(fp)
    except OSError as exc:
        raise InputError(f"{ref}: {exc.strerror}") from None
    allowed = {f.name for f in fields(RequirementProfile)}
    if not isinstance(data, dict) or set(data) - allowed:
        raise InputError(f"{ref}: profile must be an object with keys from {sorted(allowed)}")
    return RequirementProfile(**data)


def _write(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fp:
            fp.write(text)


def _configure(cfg: ScenarioConfig, mode: Optional[str], seed: Optional[int]) -> ScenarioConfig:
    changes = {}
    if mode is not None:
        changes["pipeline"] = PipelineMode(mode)
    if seed is not None:
        changes["seed"] = seed
    return cfg.with_(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _configure(_load_config(args.scenario), args.mode, args.seed)
    trace = run(cfg)
    if args.out in (None, "-"):
        write_trace(trace, sys.stdout)
    else:
        write_trace(trace, args.out)
    log.info("%s: %d events", cfg.name, len(trace))
    return EXIT_OK


def _exit_for(report: RequirementReport, fail_exit: bool) -> int:
    return EXIT_FAIL if report.failed and fail_exit else EXIT_OK


def cmd_grade(args) -> int:
    profile = _load_profile(args.profile)
    trace = read_trace(args.trace)
    m, report = grade(trace, profile)
    _write(format_text(report) if args.format == "text" else format_json(report, m), args.out)
    return _exit_for(report, args.fail_exit)


def cmd_report(args) -> int:
    try:
        with open(args.report, encoding="utf-8") as fp:
            report, m = parse_json(fp.read())
    except OSError as exc:
        raise InputError(f"{args.report}: {exc.strerror}") from None
    except (KeyError, TypeError) as exc:
        raise InputError(f"{args.report}: malformed report ({exc})") from None
    _write(format_text(report) if args.format == "text" else format_json(report, m), args.out)
    return _exit_for(report, args.fail_exit)


def _fmt_ms(v) -> str:
    return "-" if v is None else f"{v:.1f}"


def cmd_compare(args) -> int:
    base = _configure(_load_config(args.scenario), None, args.seed)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    try:
        modes = [PipelineMode(m) for m in modes]
    except ValueError as exc:
        raise InputError(str(exc)) from None
    rows = []
    for mode in modes:
        m = metrics(run(base.with_(pipeline=mode)))
        leads = [v for v in m.lead_times_s.values() if v is not None]
        rows.append({
            "mode": mode.value,
            "deliveries": m.deliveries,
            "p50_ms": m.latency_ms.p50 if m.latency_ms else None,
            "p99_ms": m.latency_ms.p99 if m.latency_ms else None,
            "max_ms": m.latency_ms.max if m.latency_ms else None,
            # uplink plus downlink: the age of a warning's input when it arrives
            "warning_path_ms": (m.vam_latency_ms.max + m.denm_latency_ms.max)
            if m.vam_latency_ms and m.denm_latency_ms else None,
            "warning_denms": m.warning_denms,
            "min_lead_s": min(leads) if leads else None,
        })
    if args.format == "json":
        _write(json.dumps({"scenario": base.name, "modes": rows}, indent=2) + "\n", args.out)
        return EXIT_OK
    cols = ["mode", "deliveries", "p50_ms", "p99_ms", "max_ms", "warning_path_ms", "warning_denms", "min_lead_s"]
    lines = [f"scenario: {base.name}", "  ".join(f"{c:>15}" for c in cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            cells.append(f"{v:>15}" if isinstance(v, (str, int)) and not isinstance(v, bool)
                         else f"{_fmt_ms(v):>15}")
        lines.append("  ".join(cells))
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_scenarios(args) -> int:
    if args.action == "list":
        for name in BUILTIN_NAMES:
            cfg = builtin_scenario(name)
            print(f"{name:<24} {len(cfg.actors):>5} actors  {cfg.duration_s:>5g} s  {cfg.description}")
        return EXIT_OK
    if not args.name:
        raise InputError("scenarios emit needs a scenario name")
    try:
        cfg = builtin_scenario(args.name)
    except KeyError as exc:
        raise InputError(exc.args[0]) from None
    _write(dump_scenario(cfg) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="v2vru", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    modes = [m.value for m in PipelineMode]

    r = sub.add_parser("run", help="run a scenario and write its trace")
    r.add_argument("scenario", help="scenario JSON file or builtin name")
    r.add_argument("--mode", choices=modes)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="trace file (default: stdout)")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("grade", help="grade a trace against the requirement profile")
    g.add_argument("trace")
    g.add_argument("--profile", default="default", help="'default' or a JSON file of overrides")
    g.add_argument("--format", choices=["text", "json"], default="text")
    g.add_argument("--out")
    g.add_argument("--no-fail-exit", dest="fail_exit", action="store_false",
                   help="exit 0 even when a requirement fails")
    g.set_defaults(func=cmd_grade)

    c = sub.add_parser("compare", help="run a scenario under several pipeline modes")
    c.add_argument("scenario")
    c.add_argument("--modes", default="central,edge")
    c.add_argument("--seed", type=int)
    c.add_argument("--format", choices=["text", "json"], default="text")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("scenarios", help="list or emit builtin scenarios")
    s.add_argument("action", choices=["list", "emit"])
    s.add_argument("name", nargs="?")
    s.add_argument("--out")
    s.set_defaults(func=cmd_scenarios)

    rep = sub.add_parser("report", help="render a saved JSON report")
    rep.add_argument("report")
    rep.add_argument("--format", choices=["text", "json"], default="text")
    rep.add_argument("--out")
    rep.add_argument("--no-fail-exit", dest="fail_exit", action="store_false")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (InputError, ConfigError, TraceError) as exc:
        print(f"v2vru: error: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"v2vru: error: {exc.filename}: {exc.strerror}", file=sys.stderr)
    except (json.JSONDecodeError, ValueError) as exc:
        print(f"v2vru: error: invalid input: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
