"""Command line entry point: ``eaic run|compare|plot|validate``.

Exit codes: 0 pass, 1 invariant violation, 2 config error, 3 divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import scenario as sc

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="output directory (default: output.dir of the config)")
    p.add_argument("--controller", choices=sc.CONTROLLER_KINDS, help="override controller.kind")
    p.add_argument("--dt", type=float, help="override world.dt [s]")
    p.add_argument("--seed", type=int, help="reserved; scenarios are deterministic")
    p.add_argument("--strict", action="store_true", help="abort on the first invariant violation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eaic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run one scenario and write log, report and figures")
    run.add_argument("--config", required=True, help="YAML file or bundled preset name")
    run.add_argument("--no-figures", action="store_true")
    _add_common(run)

    cmp_ = sub.add_parser("compare", help="run several scenarios over the same world")
    cmp_.add_argument("--config", action="append", help="repeatable; default: the three bundled presets")
    cmp_.add_argument("--parallel", action="store_true")
    _add_common(cmp_)

    plot = sub.add_parser("plot", help="render figures and series files from a log")
    plot.add_argument("--log", required=True)
    plot.add_argument("--config", help="config of the run, used to draw the workbench height")
    plot.add_argument("--out", default=None)

    val = sub.add_parser("validate", help="check a config file and list every problem")
    val.add_argument("--config", required=True)
    return parser


def _load(path: str, args) -> sc.ScenarioConfig:
    cfg = sc.load_config(path)
    overrides = {}
    if getattr(args, "controller", None):
        overrides["controller.kind"] = args.controller
    if getattr(args, "dt", None) is not None:
        overrides["world.dt"] = args.dt
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return cfg.with_overrides(**overrides) if overrides else cfg


def _workbench(cfg: sc.ScenarioConfig) -> float:
    world = sc.build_world(cfg)
    return world.contact.z_workbench


def _figures(log_path: Path, cfg: sc.ScenarioConfig | None, out: Path, title: str) -> list[Path]:
    from .plotting import render_figures

    z_wb = _workbench(cfg) if cfg is not None else None
    groups = sc.extract_plot_series(log_path, z_workbench=z_wb, out_dir=out)
    return render_figures(groups, out, title)


def _print_errors(err: sc.ConfigError) -> None:
    for key, reason in err.errors:
        print(f"config error: {key}: {reason}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = _load(args.config, args)
    out = Path(args.out or cfg["output.dir"])
    result = sc.run_scenario(cfg, out, strict=args.strict)
    report_path = out / f"{cfg.name}_report.json"
    report_path.write_text(result.report.to_json() + "\n")
    if not args.no_figures:
        _figures(result.log_path, cfg, out / "figures" / cfg.name, cfg.name)
    r = result.report
    print(f"{cfg.name}: log {result.log_path}, report {report_path}")
    print(
        f"  contact-loss impact {r.peak_impact_contact_loss:.3f} N, after release {r.peak_impact_after_release:.3f} N, "
        f"violations {r.violations}"
    )
    return EXIT_OK if r.passed else EXIT_VIOLATION


def cmd_compare(args) -> int:
    paths = args.config or list(sc.PRESETS)
    configs = [_load(p, args) for p in paths]
    out = Path(args.out or configs[0]["output.dir"])
    comparison = sc.compare(configs, out, parallel=args.parallel, strict=args.strict)
    (out / "comparison.json").write_text(comparison.to_json() + "\n")
    (out / "comparison.txt").write_text(comparison.to_text())
    print(comparison.to_text(), end="")
    return EXIT_OK if all(r.passed for r in comparison.reports) else EXIT_VIOLATION


def cmd_plot(args) -> int:
    log_path = Path(args.log)
    if not log_path.exists():
        print(f"no such log: {log_path}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = sc.load_config(args.config) if args.config else None
    out = Path(args.out) if args.out else log_path.parent / "figures" / log_path.stem
    for p in _figures(log_path, cfg, out, log_path.stem):
        print(p)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = sc.load_config(args.config)
    print(f"{args.config}: ok ({cfg.kind})")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "compare": cmd_compare, "plot": cmd_plot, "validate": cmd_validate}[args.verb]
    try:
        return handler(args)
    except sc.ConfigError as err:
        _print_errors(err)
        return EXIT_CONFIG
    except sc.InvariantViolation as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return EXIT_VIOLATION
    except sc.ScenarioDivergence as err:
        print(f"run diverged: {err} (partial log: {err.log_path})", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
