import argparse
import sys
from pathlib import Path

from .utils import CONFIG, load_config_file
from .logger import Logger
from . import harness, synthgen

COMMANDS = ['generate', 'select', 'fit', 'evaluate', 'pipeline', 'compare']


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(description="Permutation-test variable selection with Lasso/Ridge baselines")
    parser.add_argument('commands', nargs='+', choices=COMMANDS, help='Commands to run in sequence')
    parser.add_argument('--config', help="Flat 'key = value' file; explicit flags override it")
    parser.add_argument('--seed', type=int, help='Seed for generation, split, permutations and CV folds')
    parser.add_argument('-o', '--out', '--output', dest='output', default='./output', help='Output directory')
    parser.add_argument('--data', '--input', dest='data', help='Input data CSV (default: <out>/data.csv)')
    parser.add_argument('--truth', help='Ground-truth CSV of informative variables (optional)')
    parser.add_argument('--threads', type=int, default=CONFIG['threads'],
                        help=f"Worker threads for the permutation stage and Lasso CV (default: {CONFIG['threads']})")

    # Logging options
    parser.add_argument('-v', '--verbose', action='store_true', help='Enable verbose logging (debug level)')
    parser.add_argument('-q', '--quiet', action='store_true', help='Suppress info messages (warning level only)')

    # Generator
    parser.add_argument('--n-samples', type=int, help='Samples to generate (default: 250)')
    parser.add_argument('--n-components', type=int, help='Mixture components (default: 6)')
    parser.add_argument('--n-levels', type=int, help='Concentration levels per component (default: 3)')
    parser.add_argument('--n-reps', type=int, help='Repetitions per sample (default: 5)')
    parser.add_argument('--n-vars', type=int, help='Variables per repetition (default: 130)')
    parser.add_argument('--noise-sigma', type=float, help='Gaussian noise standard deviation (default: 2e-4)')
    parser.add_argument('--peak-width', type=float, help='Gaussian width of generated peaks (default: 2.0)')

    # Selection
    parser.add_argument('--fraction', type=float, help='Training fraction (default: 0.75)')
    parser.add_argument('--perm-mode', choices=['exact', 'monte_carlo', 'auto'], help='Permutation mode')
    parser.add_argument('--n-perm', type=int, help='Random permutations in monte_carlo mode')
    parser.add_argument('--pvalues',
                        help='P-value matrix CSV: reused when present, otherwise computed and written there')
    parser.add_argument('--alpha', type=float, help='FDR level (default: 0.05)')
    parser.add_argument('--family-mode', choices=['per_variable', 'global'], help='BH family')
    parser.add_argument('--cutoffs', help="Comma-separated significance-count cutoffs or 'auto'")
    parser.add_argument('--percentile-scale', choices=['range', 'quantile'],
                        help='Auto cutoffs as percentiles of the count range or of the count distribution'
                             ' (default: range)')
    parser.add_argument('--lasso-folds', type=int, help='CV folds for the Lasso penalty')
    parser.add_argument('--n-lambdas', type=int, help='Lasso grid size per response (default: 100)')
    parser.add_argument('--lambda-min-ratio', type=float,
                        help='Smallest Lasso lambda as a fraction of lambda_max (default: 1e-4, 1e-2 when n <= p)')
    parser.add_argument('--ridge-folds', type=int, help='CV folds for the Ridge penalty')

    # Compare
    parser.add_argument('--report', help='Existing report.json to compare (default: <out>/report.json)')
    return parser


def _coerce_config(parser, values):
    """Map config-file strings onto parser destinations; raises UsageError."""
    actions = {}
    for action in parser._actions:
        if action.dest in ('help', 'commands', 'config'):
            continue
        actions[action.dest] = action
        for option in action.option_strings:
            actions.setdefault(option.lstrip('-').replace('-', '_'), action)
    defaults = {}
    for key, value in values.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        action = actions[key]
        key = action.dest
        if action.nargs == 0:
            lowered = value.lower()
            if lowered not in ('true', 'false', 'yes', 'no', '1', '0'):
                raise UsageError(f"config key {key!r} expects a boolean, got {value!r}")
            defaults[key] = lowered in ('true', 'yes', '1')
            continue
        try:
            converted = action.type(value) if action.type else value
        except (TypeError, ValueError):
            raise UsageError(f"config key {key!r}: invalid value {value!r}") from None
        if action.choices and converted not in action.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        defaults[key] = converted
    return defaults


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = load_config_file(args.config)
        except (OSError, ValueError) as e:
            raise UsageError(str(e)) from None
        parser.set_defaults(**_coerce_config(parser, values))
        args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        raise UsageError(f"--threads must be >= 1, got {args.threads}")
    return parser, args


def dispatch(command, args, logger):
    if command == 'generate':
        return synthgen.run(args, CONFIG, logger)
    elif command == 'select':
        return harness.run_select(args, CONFIG, logger)
    elif command == 'fit':
        return harness.run_fit(args, CONFIG, logger)
    elif command == 'evaluate':
        return harness.run_evaluate(args, CONFIG, logger)
    elif command == 'pipeline':
        return harness.run(args, CONFIG, logger)
    elif command == 'compare':
        return harness.run_compare(args, CONFIG, logger)
    raise UsageError(f"unknown command {command!r}")


def cli_main(argv=None):
    """Run the CLI; returns 0 on success, 1 on usage errors, 2 on runtime failures."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, args = parse_args(argv)
    except UsageError as e:
        build_parser().print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    logger = Logger(Path(args.output) / CONFIG['files']['log'], verbose=args.verbose, quiet=args.quiet)
    try:
        for command in args.commands:
            logger.log('DEBUG', f"Running {command}")
            dispatch(command, args, logger)
    except KeyboardInterrupt:
        logger.log('WARN', "Interrupted by user")
        return 2
    except Exception as e:
        logger.log('ERROR', str(e))
        return 2
    finally:
        logger.close()
    return 0


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
