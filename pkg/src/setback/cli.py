"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 stage failure.
``MARTINI_LOG`` sets the log level (DEBUG, INFO, WARNING, ERROR; default WARNING).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import REPORT_FORMATS, load_config, read_toml
from .errors import ConfigError, SetbackError
from .pipeline import CORE_STAGES, STAGES, run_pipeline

log = logging.getLogger("setback")

LOG_ENV = "MARTINI_LOG"


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").strip().upper()
    numeric = int(level) if level.isdigit() else logging.getLevelName(level)
    if not isinstance(numeric, int):
        numeric = logging.WARNING
    logging.basicConfig(level=numeric, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _format_list(text: str) -> list[str]:
    items = [x.strip() for x in text.split(",") if x.strip()]
    bad = [x for x in items if x not in REPORT_FORMATS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown format(s) {bad}; choose from {', '.join(REPORT_FORMATS)}")
    return items


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides [paths] out)")
    common.add_argument("--seed", type=int, help="RNG seed (clustering; campus generation for synth)")

    overrides = argparse.ArgumentParser(add_help=False)
    overrides.add_argument("--delta", type=_float_list, help="occupied thresholds, e.g. 0.05,0.10,0.15")
    overrides.add_argument("--tau", type=int, help="thermal lag in hours")
    overrides.add_argument("--k-override", type=int, help="use this k for every dataset instead of the elbow")
    overrides.add_argument("--mode", choices=("centroid", "actual"), help="savings base profile")
    overrides.add_argument("--format", type=_format_list, help=f"report formats: {','.join(REPORT_FORMATS)}")

    parser = _Parser(prog="setback", description="WiFi- and meter-driven HVAC setback schedules and savings estimates.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic campus (wifi.csv, meter.csv, truth.json)")
    synth.add_argument("--days", type=int, help="number of days (overrides [campus] days)")

    for stage in STAGES:
        sub.add_parser(stage, parents=[common, overrides], help=f"run the {stage} stage")

    run = sub.add_parser("run", parents=[common, overrides], help="run several stages in order")
    pick = run.add_mutually_exclusive_group()
    pick.add_argument("--all", action="store_true", help="every stage including sweep and report (default)")
    pick.add_argument("--stages", type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
                      help=f"comma-separated subset of {','.join(STAGES)}")
    run.add_argument("--core", action="store_true", help=f"only {','.join(CORE_STAGES)}")
    return parser


def _overrides(args) -> dict:
    ov: dict[str, dict] = {"paths": {}, "cluster": {}, "savings": {}, "report": {}}
    if args.out is not None:
        ov["paths"]["out"] = str(args.out.resolve())
    if args.seed is not None:
        ov["cluster"]["seed"] = args.seed
    if getattr(args, "k_override", None) is not None:
        ov["cluster"]["k_override"] = args.k_override
    if getattr(args, "delta", None) is not None:
        ov["savings"]["delta"] = args.delta
    if getattr(args, "tau", None) is not None:
        ov["savings"]["tau"] = args.tau
    if getattr(args, "mode", None) is not None:
        ov["savings"]["mode"] = args.mode
    if getattr(args, "format", None) is not None:
        ov["report"]["formats"] = args.format
    return ov


def _cmd_synth(args) -> int:
    from .synth import gen_campus, specs_from_config, write_campus

    cfg = read_toml(args.config) if args.config else {}
    specs, days, seed, start = specs_from_config(cfg)
    days = args.days if args.days is not None else days
    seed = args.seed if args.seed is not None else seed
    out = args.out or (Path(args.config).resolve().parent / cfg["campus"]["out"] if "out" in cfg.get("campus", {}) else None)
    if out is None:
        raise ConfigError("synth needs --out or [campus] out")
    paths = write_campus(gen_campus(specs, days, seed, start), out)
    for name, p in paths.items():
        print(f"{name}\t{p}")
    return 0


def _cmd_stages(args, stages) -> int:
    cfg = load_config(args.config, _overrides(args))
    manifest = run_pipeline(cfg, stages)
    for stage in (s for s in STAGES if s in stages):
        for name in manifest.outputs(stage):
            print(f"{stage}\t{cfg.out_dir / name}")
    return 0


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "run":
            stages = args.stages or (list(CORE_STAGES) if args.core else list(STAGES))
            return _cmd_stages(args, stages)
        return _cmd_stages(args, [args.command])
    except SetbackError as exc:
        print(f"setback: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
