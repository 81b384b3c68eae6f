"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..synthpop import ConfigurationError, observable_bounds
from .config import ExperimentConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seromrp", description="Prevalence estimation experiments under imperfect tests.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="execute an experiment config")
    r.add_argument("config")
    r.add_argument("--output", help="results directory (overrides output_dir)")
    r.add_argument("--workers", type=int, help="worker processes (overrides config and env)")

    s = sub.add_parser("resume", help="finish an incomplete grid from its manifest")
    s.add_argument("manifest")
    s.add_argument("--workers", type=int)

    m = sub.add_parser("summarize", help="aggregate results.csv into summary.csv/json")
    m.add_argument("results_dir")

    b = sub.add_parser("bounds", help="interval that the positive-test rate must lie in")
    b.add_argument("--sens", type=float, required=True)
    b.add_argument("--spec", type=float, required=True)

    v = sub.add_parser("validate", help="check a config file without running it")
    v.add_argument("config")
    return p


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import runner

    try:
        if args.command == "bounds":
            if not (0.0 <= args.sens <= 1.0 and 0.0 <= args.spec <= 1.0):
                raise ConfigurationError("sensitivity and specificity must lie in [0, 1]")
            b = observable_bounds(args.sens, args.spec)
            print("undefined" if b is None else f"[{_fmt(b[0])}, {_fmt(b[1])}]")
        elif args.command == "validate":
            cfg = ExperimentConfig.load(args.config)
            print(f"ok: {cfg.experiment}, {len(runner.tasks(cfg)) if cfg.experiment != 'real_data' else 1} tasks")
        elif args.command == "run":
            cfg = ExperimentConfig.load(args.config)
            if args.workers is not None and args.workers < 1:
                raise ConfigurationError("--workers must be positive")
            out = runner.run_experiment(cfg, args.output, workers=args.workers)
            print(out)
        elif args.command == "resume":
            out = runner.resume(args.manifest, workers=args.workers)
            print(out)
        elif args.command == "summarize":
            rows = runner.summarize_dir(args.results_dir)
            print(f"{len(rows)} summary rows written to {args.results_dir}")
    except ConfigurationError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001 - any other failure is a runtime failure
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
