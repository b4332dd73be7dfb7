"""
`eval`: score results.txt files against ground truth
"""
import argparse
import json
import logging
from pathlib import Path
from typing import Dict, List

from mttrack.commands.common import load_run_config, load_sequences
from mttrack.commands.track import RESULTS_FILE, SUMMARY_FILE
from mttrack.core.error_utils import handle_cli_errors
from mttrack.core.exceptions import DataIOError, InputError, UsageError
from mttrack.services.evaluation import MetricsReport, TrackResult, combine_reports, compute_metrics, write_report
from mttrack.services.sequence_io import Sequence, read_boxes

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Compute precision/success metrics")
    parser.add_argument("--results", required=True, help="Directory holding <sequence>/results.txt")
    parser.add_argument(
        "--data",
        nargs="+",
        help="Sequence directories; several roots are scored as separate benchmarks and averaged",
    )
    parser.set_defaults(handler=cmd_eval)


def read_results(results_dir: Path, sequences: List[Sequence]) -> Dict[str, TrackResult]:
    if not results_dir.is_dir() or not any(results_dir.glob(f"*/{RESULTS_FILE}")):
        raise InputError(
            user_message=f"No sequences: '{results_dir}' holds no <sequence>/{RESULTS_FILE} files.",
            details={"path": str(results_dir)},
        )
    missing = [seq.name for seq in sequences if not (results_dir / seq.name / RESULTS_FILE).exists()]
    if missing:
        raise DataIOError(
            user_message=f"Missing results for {len(missing)} sequence(s): {', '.join(missing)}.",
            details={"missing": missing},
        )
    results = {}
    for seq in sequences:
        summary_path = results_dir / seq.name / SUMMARY_FILE
        summary = json.loads(summary_path.read_text()) if summary_path.exists() else {}
        boxes = read_boxes(results_dir / seq.name / RESULTS_FILE)
        results[seq.name] = TrackResult(boxes=boxes, scores=summary.get("scores", [None] * len(boxes)), fps=summary.get("fps"))
    return results


def evaluate(results_dir: Path, sequences: List[Sequence]) -> MetricsReport:
    results = read_results(results_dir, sequences)
    return compute_metrics(
        results,
        {seq.name: seq.gt for seq in sequences},
        attributes={seq.name: seq.attributes for seq in sequences},
    )


@handle_cli_errors(context="evaluation")
def cmd_eval(args: argparse.Namespace) -> int:
    roots = args.data or []
    run = load_run_config(args, {"data_dir": roots[0] if roots else None})
    if not run.data_dir:
        raise UsageError(user_message="eval needs --data (or data_dir in the config file).")
    roots = roots or [run.data_dir]
    out = Path(run.output_dir)
    run.echo(str(out))
    results_dir = Path(args.results)

    if len(roots) == 1:
        report = evaluate(results_dir, load_sequences(roots[0]))
        write_report(report, out)
    else:
        reports = {}
        for root in roots:
            name = Path(root).name
            reports[name] = evaluate(results_dir, load_sequences(root))
            write_report(reports[name], out / name)
        report = combine_reports(reports)
        write_report(report, out, name="overall")
    logger.info(f"AUC {report.aggregate.auc:.3f}, precision@20 {report.aggregate.precision_at_20:.3f}")
    return 0
