"""
`selftest`: numerical release gate
"""
import argparse
import logging
from pathlib import Path

from mttrack.commands.common import load_run_config, write_json
from mttrack.core.error_utils import handle_cli_errors
from mttrack.core.exceptions import SelfTestFailure
from mttrack.services.selftest import CHECKS, run_selftest

logger = logging.getLogger(__name__)

REPORT_FILE = "selftest.json"


def register(subparsers) -> None:
    parser = subparsers.add_parser("selftest", help="Run gradient, attention, memory and metric checks")
    parser.add_argument("--only", nargs="+", choices=[name for name, _, _ in CHECKS], help="Run only these checks")
    parser.add_argument("--inject-fault", choices=["softmax"], help="Corrupt an op to confirm the checks catch it")
    parser.set_defaults(handler=cmd_selftest)


@handle_cli_errors(context="self-test")
def cmd_selftest(args: argparse.Namespace) -> int:
    run = load_run_config(args)
    out = Path(run.output_dir)
    run.echo(str(out))
    report = run_selftest(only=args.only, fault=args.inject_fault)
    write_json(out / REPORT_FILE, report.model_dump(mode="json"))
    for check in report.checks:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name:<28} max error {check.max_error}  ({check.seconds:.1f} s)")
    if not report.passed:
        failed = [c.name for c in report.checks if not c.passed]
        raise SelfTestFailure(
            user_message=f"Self-test failed: {', '.join(failed)}.",
            details={"failed": failed, "report": str(out / REPORT_FILE)},
        )
    return 0
