"""
Helpers shared by the command handlers
"""
import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from mttrack.core.config import RunConfig, TrackerConfig
from mttrack.core.exceptions import DataIOError, InputError, UsageError
from mttrack.models.tracker_model import MTTrackModel
from mttrack.services.checkpoint_service import load_model
from mttrack.services.sequence_io import GT_FILE, Sequence, discover_sequences, load_sequence

logger = logging.getLogger(__name__)


def load_run_config(args: argparse.Namespace, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults < --config file < global flags < command flags"""
    merged = {
        "tracker.seed": args.seed,
        "output_dir": args.out,
        "threads": args.threads,
    }
    merged.update(overrides or {})
    return RunConfig.load(args.config, merged)


def load_sequences(path: Optional[str], what: str = "--data") -> List[Sequence]:
    """`path` is either one sequence directory or a directory of sequence directories"""
    if not path:
        raise UsageError(user_message=f"{what} is required (or set data_dir in the config file).")
    root = Path(path)
    if (root / GT_FILE).exists():
        return [load_sequence(root)]
    sequences = [load_sequence(d) for d in discover_sequences(root)]
    if not sequences:
        raise InputError(user_message=f"No sequences found under '{root}'.", details={"path": str(root)})
    return sequences


def build_model(run: RunConfig, tracker: Optional[TrackerConfig] = None) -> MTTrackModel:
    """Model from the configured checkpoint, or freshly initialised weights when there is none"""
    tracker = tracker or run.tracker
    if run.checkpoint:
        return load_model(Path(run.checkpoint), tracker)
    logger.warning("No checkpoint given, tracking with untrained weights")
    return MTTrackModel(tracker)


def write_json(path: Path, payload: Any) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise DataIOError(user_message=f"Could not write '{path}'.", technical_message=str(e), details={"path": str(path)})
    return path
