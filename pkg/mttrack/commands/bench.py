"""
`bench`: FPS, per-stage timing and parameter accounting
"""
import argparse
import logging
from pathlib import Path

from mttrack.commands.common import build_model, load_run_config, load_sequences, write_json
from mttrack.core.error_utils import handle_cli_errors
from mttrack.services.benchmark import BenchmarkService

logger = logging.getLogger(__name__)

REPORT_FILE = "bench.json"


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="Time the tracker on one sequence")
    parser.add_argument("--checkpoint")
    parser.add_argument("--data", help="Sequence directory (the first sequence of a root is used)")
    parser.add_argument("--frames", type=int, help="Number of tracked frames to time")
    parser.set_defaults(handler=cmd_bench)


@handle_cli_errors(context="benchmark")
def cmd_bench(args: argparse.Namespace) -> int:
    run = load_run_config(args, {"checkpoint": args.checkpoint, "data_dir": args.data})
    out = Path(run.output_dir)
    run.echo(str(out))
    seq = load_sequences(run.data_dir)[0]
    model = build_model(run)
    report = BenchmarkService(model).run(
        seq,
        frames=args.frames,
        checkpoint=Path(run.checkpoint) if run.checkpoint else None,
    )
    write_json(out / REPORT_FILE, report.model_dump(mode="json"))
    print(f"{report.fps:.1f} FPS over {report.frames} frames")
    for stage, ms in report.stage_ms.items():
        print(f"  {stage:<22} {ms:8.2f} ms")
    for part, count in report.parameters.analytic.items():
        print(f"  {part:<34} {count:>10,d}")
    print(f"  matmuls per frame: {report.matmuls.per_frame_reuse} with logits reuse, {report.matmuls.per_frame_no_reuse} without")
    print(f"  tracker state: {report.state_bytes:,d} bytes")
    return 0
