"""
`track`: one-pass tracking over sequences, optionally sweeping ablation, tau and memory length
"""
import argparse
import itertools
import logging
from pathlib import Path
from typing import List, Optional

from mttrack.commands.common import build_model, load_run_config, load_sequences, write_json
from mttrack.core.config import AblationFlags, RunConfig, TrackerConfig
from mttrack.core.error_utils import handle_cli_errors
from mttrack.services.evaluation import TrackResult, write_report
from mttrack.services.ope_runner import run_ope
from mttrack.services.sequence_io import write_boxes
from mttrack.services.tracker_service import SequenceRunner

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.txt"
SUMMARY_FILE = "summary.json"


def register(subparsers) -> None:
    parser = subparsers.add_parser("track", help="Track sequences and write per-frame boxes")
    parser.add_argument("--checkpoint", help="Trained checkpoint; untrained weights are used without one")
    parser.add_argument("--data", help="Sequence directory or directory of sequences")
    parser.add_argument("--ablation", nargs="+", help="baseline, temcor, mt, no-encoder, no-filter or full")
    parser.add_argument("--tau", nargs="+", type=float, help="Memory update threshold(s)")
    parser.add_argument("--n-hist", nargs="+", type=int, help="Memory length(s)")
    parser.set_defaults(handler=cmd_track)


def setting_tag(tracker: TrackerConfig) -> str:
    return f"{tracker.ablation.name}_tau{tracker.tau:g}_n{tracker.n_hist}"


def sweep_settings(
    base: TrackerConfig,
    ablations: Optional[List[str]],
    taus: Optional[List[float]],
    n_hists: Optional[List[int]],
) -> List[TrackerConfig]:
    flags = [AblationFlags.preset(name) for name in ablations] if ablations else [base.ablation]
    grid = itertools.product(flags, taus or [base.tau], n_hists or [base.n_hist])
    return [base.model_copy(update={"ablation": a, "tau": t, "n_hist": n}) for a, t, n in grid]


def summarize(name: str, result: TrackResult, tracker: TrackerConfig) -> dict:
    scores = [s for s in result.scores if s is not None]
    return {
        "sequence": name,
        "frames": len(result.boxes),
        "fps": result.fps,
        "ablation": tracker.ablation.name,
        "tau": tracker.tau,
        "n_hist": tracker.n_hist,
        "memory_updates": sum(1 for s in scores if s > tracker.tau),
        "scores": result.scores,
    }


def run_setting(run: RunConfig, tracker: TrackerConfig, sequences, out: Path) -> None:
    model = build_model(run, tracker)
    run.model_copy(update={"tracker": model.cfg}).echo(str(out))
    results, report = run_ope(lambda: SequenceRunner(model), sequences, threads=run.threads)
    for name, result in sorted(results.items()):
        write_boxes(out / name / RESULTS_FILE, result.boxes)
        write_json(out / name / SUMMARY_FILE, summarize(name, result, model.cfg))
    write_report(report, out)
    logger.info(
        f"{setting_tag(model.cfg)}: AUC {report.aggregate.auc:.3f}, "
        f"precision@20 {report.aggregate.precision_at_20:.3f} over {len(results)} sequences"
    )


@handle_cli_errors(context="tracking")
def cmd_track(args: argparse.Namespace) -> int:
    run = load_run_config(args, {"checkpoint": args.checkpoint, "data_dir": args.data})
    sequences = load_sequences(run.data_dir)
    settings = sweep_settings(run.tracker, args.ablation, args.tau, args.n_hist)
    out = Path(run.output_dir)
    for tracker in settings:
        # a single setting writes straight into the output directory
        target = out / setting_tag(tracker) if len(settings) > 1 else out
        run_setting(run, tracker, sequences, target)
    return 0
