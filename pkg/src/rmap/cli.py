"""Command-line entry point: ``rmap run | compare | check | presets``.

Exit codes: 0 success, 1 solver or sampler failure (partial outputs are
flushed), 2 invalid configuration or refused overwrite.
"""

import argparse
import json
import logging
import sys

from rmap.config import PRESETS, load_config, preset_text
from rmap.errors import ConfigError
from rmap.experiments import (
    OUTPUT_ENV,
    ExperimentFailure,
    OutputExistsError,
    compare_chains,
    default_output_root,
    format_report,
    run_experiment,
)

log = logging.getLogger("rmap")


def _parser():
    p = argparse.ArgumentParser(prog="rmap", description="Randomized MAP posterior sampling experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a YAML config or preset name")
    r.add_argument("--config", required=True, help=f"config file or preset ({', '.join(PRESETS)})")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--workers", type=int, default=1, help="worker processes for rMAP/RTO sampling")
    r.add_argument("--out", default=None, help=f"output root (default ${OUTPUT_ENV} or ./rmap-runs)")
    r.add_argument("--force", action="store_true", help="overwrite an existing run directory")

    c = sub.add_parser("compare", help="compare two or more chain files")
    c.add_argument("chains", nargs="+", help="chain prefixes or .json/.csv paths")
    c.add_argument("--json", action="store_true", help="print the full report as JSON")

    k = sub.add_parser("check", help="finite-difference and dot-product self-tests")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--meshes", type=int, nargs="+", default=[8, 16], help="Helmholtz mesh sizes")

    s = sub.add_parser("presets", help="list presets or print one")
    s.add_argument("name", nargs="?", choices=PRESETS)
    return p


def _cmd_run(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        manifest = run_experiment(cfg, args.out or default_output_root(), args.seed, args.workers, args.force)
    except OutputExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExperimentFailure as exc:
        print(f"error: {exc} (partial outputs in {exc.manifest_path})", file=sys.stderr)
        return 1
    print(json.dumps({k: manifest[k] for k in ("directory", "config_hash", "seed", "summary")}, indent=1, sort_keys=True))
    return 0


def _cmd_compare(args):
    try:
        report = compare_chains(args.chains)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=1, sort_keys=True) if args.json else format_report(report))
    return 0


def _cmd_check(args):
    from rmap.checks import default_suite

    results = default_suite(args.seed, tuple(args.meshes))
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def _cmd_presets(args):
    if args.name:
        print(preset_text(args.name), end="")
    else:
        print("\n".join(PRESETS))
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "compare": _cmd_compare, "check": _cmd_check, "presets": _cmd_presets}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
