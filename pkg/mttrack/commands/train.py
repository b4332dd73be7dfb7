"""
`train`: toy-scale training on a directory of sequences
"""
import argparse
import csv
import logging
from dataclasses import asdict, fields
from pathlib import Path

from mttrack.commands.common import load_run_config, load_sequences
from mttrack.core.config import AblationFlags
from mttrack.core.error_utils import handle_cli_errors
from mttrack.core.exceptions import DataIOError
from mttrack.services.checkpoint_service import save_checkpoint
from mttrack.services.trainer import StepRecord, TrainResult, toy_train

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "model.mttk"
LOSS_FILE = "loss.csv"


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train the tracker at toy scale")
    parser.add_argument("--data", help="Sequence directory or directory of sequences")
    parser.add_argument("--checkpoint-out", help=f"Checkpoint path (default <out>/{CHECKPOINT_FILE})")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--samples-per-epoch", type=int)
    parser.add_argument("--ablation", help="Train one ablation variant (baseline, temcor, mt, no-encoder, no-filter, full)")
    parser.set_defaults(handler=cmd_train)


def write_loss_trace(path: Path, result: TrainResult) -> Path:
    columns = [f.name for f in fields(StepRecord)]
    try:
        with path.open("w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns)
            writer.writeheader()
            for record in result.trace:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(record).items()})
    except OSError as e:
        raise DataIOError(user_message=f"Could not write the loss trace '{path}'.", technical_message=str(e))
    return path


@handle_cli_errors(context="training")
def cmd_train(args: argparse.Namespace) -> int:
    overrides = {
        "data_dir": args.data,
        "train.epochs": args.epochs,
        "train.batch_size": args.batch_size,
        "train.samples_per_epoch": args.samples_per_epoch,
    }
    if args.ablation:
        overrides["tracker.ablation"] = AblationFlags.preset(args.ablation).model_dump()
    run = load_run_config(args, overrides)
    out = Path(run.output_dir)
    run.echo(str(out))

    sequences = load_sequences(run.data_dir)
    result = toy_train(sequences, run)

    checkpoint = Path(args.checkpoint_out) if args.checkpoint_out else out / CHECKPOINT_FILE
    extra = {
        "steps": len(result.trace),
        "final_loss": result.losses[-1] if result.losses else None,
        "sequences": sorted(s.name for s in sequences),
    }
    save_checkpoint(result.model, checkpoint, extra)
    write_loss_trace(out / LOSS_FILE, result)
    if result.losses:
        logger.info(f"Loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f} over {len(result.losses)} steps")
    return 0
