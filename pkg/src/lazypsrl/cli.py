"""Command-line entry point.

Exit codes: 0 success, 1 runtime or validation failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import SWEEPABLE, ConfigError, load_config, with_override
from .harness import EpisodeError, run_experiment, write_outputs
from .validation import format_table, run_validation

logger = logging.getLogger("lazypsrl")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage already; keep the message on stderr.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lazypsrl", description="Lazy PSRL simulator and property checks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--threads", type=_positive_int, default=1, help="parallel seeds")

    sweep = sub.add_parser("sweep", help="run one experiment per parameter value")
    sweep.add_argument("config")
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out")
    sweep.add_argument("--threads", type=_positive_int, default=1)

    val = sub.add_parser("validate", help="run the property suites")
    val.add_argument("--family", required=True, choices=("tabular", "linear"))
    val.add_argument("--trials", type=int, default=100)
    val.add_argument("--seed", type=int, default=0)
    return p


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    result = run_experiment(cfg, threads=args.threads)
    summary = write_outputs(out, result, cfg)
    print(f"wrote {out}: final mean regret {summary['final_mean_regret']:.6g} over {len(cfg.seeds)} seeds")
    return EXIT_OK


def _parse_values(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("values", f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise ConfigError("values", "empty list")
    return values


def _value_label(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(v)


def cmd_sweep(args) -> int:
    if args.param not in SWEEPABLE:
        raise ConfigError("param", f"{args.param!r} is not sweepable (choose from {', '.join(SWEEPABLE)})")
    base = load_config(args.config)
    values = _parse_values(args.values)
    configs = [with_override(base, args.param, v) for v in values]
    out = args.out or base.output_dir
    rows = []
    for v, cfg in zip(values, configs):
        result = run_experiment(cfg, threads=args.threads)
        sub_dir = os.path.join(out, f"{args.param}={_value_label(v)}")
        write_outputs(sub_dir, result, cfg)
        rows.append((v, result))
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        fh.write(f"{args.param},T,final_mean,final_std,fingerprint\n")
        for v, res in rows:
            fh.write(f"{_value_label(v)},{res.T},{float(res.mean_regret[-1])!r},{float(res.std_regret[-1])!r},{res.fingerprint}\n")
    print(f"wrote {out}/sweep.csv with {len(rows)} rows")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.trials < 1:
        raise ConfigError("trials", "must be at least 1")
    results = run_validation(args.family, args.trials, args.seed)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failing: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except EpisodeError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_FAIL
    except (RuntimeError, ValueError, OSError, ArithmeticError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
