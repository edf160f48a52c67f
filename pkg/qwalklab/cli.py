"""
QWalkLab: cli - the ``qwalklab`` console entry point.
"""

import argparse
import logging
import sys
from typing import List, Optional, Sequence

from cloudpathlib import AnyPath

from qwalklab.exceptions import ConfigException, QWalkLabException
from qwalklab.experiment import RUN_STAGES, run, run_scenario
from qwalklab.presets import config
from qwalklab.sources import ScenarioConfig, from_preset, load_scenario
from qwalklab.verify import list_checks, verify_all

logger = logging.getLogger(__name__)

# stages run by each single-scenario subcommand
COMMAND_STAGES = {
    "classify": ("classify",),
    "spectrum": ("classify", "spectrum"),
    "measure": ("classify", "measure"),
    "sweep": ("classify", "sweep"),
}

EXIT_OK, EXIT_CHECK_FAILURE, EXIT_CONFIG_ERROR = 0, 1, 2

MODULES = ("rw-model", "arc-space", "spectral", "measures", "scenario-cli")


def resolve_scenario(reference: str) -> ScenarioConfig:
    """
    Load a scenario file, or a bundled scenario when ``reference`` names one
    and no such file exists.
    """

    if reference in config and not AnyPath(reference).exists():
        return from_preset(reference)
    return load_scenario(reference)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qwalklab",
        description=(
            "Localization experiments for quantum walks of half-line random walks."
        ),
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log stage progress at INFO level"
    )
    parser.add_argument(
        "--output-root",
        default=None,
        help="root for output directories (QWALKLAB_OUTPUT_ROOT wins when set)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    for command, help_text in (
        ("classify", "classify recurrence and write classification.csv"),
        ("spectrum", "decompose every truncation and write spectrum_N*.csv"),
        ("measure", "compute limit measures and write measures_N*.csv"),
        ("sweep", "write the sup-norm gap for every (N, T) pair"),
    ):
        subparser = commands.add_parser(command, help=help_text)
        subparser.add_argument("config", help="scenario file or bundled scenario name")

    run_parser = commands.add_parser("run", help="run scenarios with all their checks")
    run_parser.add_argument(
        "configs", nargs="+", help="scenario files or bundled scenario names"
    )

    verify_parser = commands.add_parser("verify", help="run the acceptance suite")
    verify_parser.add_argument(
        "--filter", choices=MODULES, default=None, help="only checks of this module"
    )
    verify_parser.add_argument(
        "--list", action="store_true", help="print check names without running them"
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, dispatch and map outcomes to exit codes:
    0 success, 1 failing checks, 2 configuration errors.
    """

    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO)

    try:
        if args.command == "verify":
            checks = list_checks(args.filter)
            if args.list:
                for check in checks:
                    print(f"{check.name}\t{check.module}\t{check.description}")
                return EXIT_OK
            report = verify_all(module=args.filter, output_root=args.output_root)
            for record in report.records:
                status = "PASS" if record.passed else "FAIL"
                print(f"{status}\t{record.name}\t{record.detail}")
            return EXIT_OK if report.passed else EXIT_CHECK_FAILURE

        if args.command == "run":
            scenarios: List[ScenarioConfig] = [
                resolve_scenario(reference) for reference in args.configs
            ]
            return run(scenarios, output_root=args.output_root, stages=RUN_STAGES)

        result = run_scenario(
            resolve_scenario(args.config),
            output_root=args.output_root,
            stages=COMMAND_STAGES[args.command],
        )
        for path in result.files:
            print(path)
        return EXIT_OK

    except ConfigException as exc:
        print(f"qwalklab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except QWalkLabException as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CHECK_FAILURE


if __name__ == "__main__":
    sys.exit(main())
