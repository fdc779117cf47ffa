"""Command line front end.

Subcommands:

    twoweight constants <file>   every constant of one measure pair
    twoweight norm <file>        the bilinear-form norm alone
    twoweight verify <file>      verdict lines; exit 1 on any failure
    twoweight ensemble           print generated pairs in the ingest schema
    twoweight report --out DIR   run the default battery, write report files

Numeric settings come from ``--config <json>`` (same keys as
ReportConfig) overridden field by field by explicit flags; ``report``
echoes the effective configuration so runs are reproducible from their
own output.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

from .ensembles import ENSEMBLE_KINDS, make_ensemble
from .report import (
    FAIL,
    INTERVAL_MODES,
    ReportConfig,
    VERDICT_NAMES,
    config_from_mapping,
    default_battery,
    examine_pair,
    format_instance,
    ingest,
    load_config,
    run_report,
)

_CONFIG_FLAGS = (
    "scale_exponent",
    "gamma",
    "r",
    "interval_mode",
    "tolerance",
    "budget_seconds",
    "seed",
)


def _add_shared(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="JSON", help="config file; flags override it")
    parser.add_argument("--scale-exponent", type=int, default=None, metavar="M")
    parser.add_argument("--gamma", type=float, default=None, help="goodness exponent in (0,1)")
    parser.add_argument("--r", type=int, default=None, help="goodness depth threshold")
    parser.add_argument("--interval-mode", choices=INTERVAL_MODES, default=None)
    parser.add_argument("--tolerance", type=float, default=None, help="identity residual tolerance")
    parser.add_argument("--budget-seconds", type=float, default=None, help="per-instance budget")
    parser.add_argument("--seed", type=int, default=None)


def _effective_config(args: argparse.Namespace) -> ReportConfig:
    base = load_config(args.config) if getattr(args, "config", None) else ReportConfig()
    overrides = {name: getattr(args, name, None) for name in _CONFIG_FLAGS}
    for name in ("count", "n"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    kinds = getattr(args, "kind", None)
    if kinds:
        overrides["kinds"] = tuple(kinds)
    return config_from_mapping(overrides, base)


def _examined(path: str, config: ReportConfig):
    sigma, w = ingest(path)
    return examine_pair(sigma, w, config, (config.seed, 0), label=path)


def _print_value(name: str, value) -> None:
    shown = "" if value is None else (repr(value) if isinstance(value, float) else value)
    print(f"{name:22s} {shown}")


def cmd_constants(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    record = _examined(args.file, config)
    for name in (
        "c", "h", "h_star", "h_glob", "h_glob_star", "h_off", "h_off_star", "wbp",
        "a2_star", "a2_star_dual", "a2_simple", "a2_lacey",
        "hardy_a", "hardy_c", "halfline_a", "halfline_c",
        "truncation_sup", "complement_norm",
        "k0", "k1", "k2", "k3", "k4", "k5", "k6",
    ):
        _print_value(name, record[name])
    if record["error"]:
        print(f"error: {record['error']}", file=sys.stderr)
        return 1
    return 0


def cmd_norm(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    record = _examined(args.file, config)
    if record["c"] is None:
        print(f"error: {record['error'] or 'norm not computed'}", file=sys.stderr)
        return 1
    print(repr(record["c"]))
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    record = _examined(args.file, config)
    failed = False
    for name in VERDICT_NAMES:
        state = record[f"verdict_{name}"]
        witness = record["witnesses"].get(name, "")
        suffix = f"  ({witness})" if witness else ""
        print(f"{name:22s} {state}{suffix}")
        failed = failed or state == FAIL
    if record["error"]:
        print(f"error: {record['error']}", file=sys.stderr)
    return 1 if failed else 0


def cmd_ensemble(args: argparse.Namespace) -> int:
    scale = args.scale_exponent if args.scale_exponent is not None else 0
    seed = args.seed if args.seed is not None else 0
    pairs = make_ensemble(args.kind, args.count, args.n, seed, scale)
    blocks = [
        format_instance(sigma, w, label=f"{args.kind}[{i}] n={args.n} seed={seed}")
        for i, (sigma, w) in enumerate(pairs)
    ]
    print("\n".join(blocks), end="")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    print(json.dumps({"config": asdict(config)}, sort_keys=True))
    report = run_report(default_battery(config), config, out_dir=args.out)
    tallies = report.summary["verdicts"]
    failures = 0
    for name in VERDICT_NAMES:
        t = tallies[name]
        failures += t[FAIL]
        print(f"{name:22s} pass={t['pass']:3d} fail={t[FAIL]:3d} n/a={t['not-applicable']:3d}")
    print(f"wrote report.csv, report.json, timings.csv under {args.out}")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twoweight", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("constants", help="all constants of one measure pair")
    p.add_argument("file")
    _add_shared(p)
    p.set_defaults(fn=cmd_constants)

    p = sub.add_parser("norm", help="the form norm of one measure pair")
    p.add_argument("file")
    _add_shared(p)
    p.set_defaults(fn=cmd_norm)

    p = sub.add_parser("verify", help="verdicts for one measure pair; exit 1 on failure")
    p.add_argument("file")
    _add_shared(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("ensemble", help="print generated pairs in the ingest schema")
    p.add_argument("--kind", choices=ENSEMBLE_KINDS, required=True)
    p.add_argument("--n", type=int, required=True, help="size parameter of the kind")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--scale-exponent", type=int, default=None, metavar="M")
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("report", help="run the battery and write report files")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--count", type=int, default=None, help="instances per kind")
    p.add_argument("--n", type=int, default=None, help="size parameter per instance")
    p.add_argument(
        "--kind",
        action="append",
        choices=ENSEMBLE_KINDS,
        default=None,
        help="restrict to a kind (repeatable)",
    )
    _add_shared(p)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
