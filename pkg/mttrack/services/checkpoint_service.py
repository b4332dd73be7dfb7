"""
Model checkpoints.

Layout (little-endian):
    b"MTTK" | uint32 format version | uint32 header length | JSON header | fp32 payload

The header holds the tracker config and, per tensor, its name, shape and
element offset into the payload. Keys are sorted and no timestamps are
stored, so equal models give byte-identical files.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from mttrack.core.config import TrackerConfig
from mttrack.core.exceptions import DataIOError, DimensionError, VersionError
from mttrack.models.tracker_model import MTTrackModel

logger = logging.getLogger(__name__)

MAGIC = b"MTTK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")

# keys that change parameter shapes or values; everything else may be overridden at load time
ARCHITECTURE_KEYS = (
    "search_size",
    "template_size",
    "stride",
    "channels",
    "backbone_channels",
    "head_channels",
    "heads",
    "enc_layers",
    "dec_layers",
    "reduction",
)


def checkpoint_bytes(model: MTTrackModel, extra: Optional[Dict[str, Any]] = None) -> bytes:
    state = model.state_dict()
    tensors = []
    offset = 0
    for name in sorted(state):
        array = state[name]
        tensors.append({"name": name, "shape": list(array.shape), "offset": offset})
        offset += array.size
    header = {
        "config": model.cfg.model_dump(mode="json"),
        "extra": extra or {},
        "tensors": tensors,
        "total": offset,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(state[t["name"]], dtype="<f4").tobytes() for t in tensors)
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + payload


def save_checkpoint(model: MTTrackModel, path: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(checkpoint_bytes(model, extra))
    except OSError as e:
        raise DataIOError(user_message=f"Could not write checkpoint '{path}'.", technical_message=str(e))
    logger.info(f"Checkpoint written to {path} ({model.num_parameters()} parameters)")
    return path


def read_checkpoint(path: Path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Return (header, name -> fp32 array)"""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise DataIOError(user_message=f"Checkpoint '{path}' does not exist.", details={"path": str(path)})
    if len(blob) < _PREFIX.size:
        raise VersionError(user_message=f"'{path}' is too short to be a checkpoint.")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise VersionError(user_message=f"'{path}' is not a tracker checkpoint.", details={"magic": magic.hex()})
    if version != FORMAT_VERSION:
        raise VersionError(
            user_message=f"Checkpoint '{path}' has format version {version}, this build reads version {FORMAT_VERSION}.",
            details={"version": version},
        )
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise VersionError(user_message=f"Checkpoint '{path}' has a corrupt header.", technical_message=str(e))
    payload = np.frombuffer(blob, dtype="<f4", offset=start + header_len)
    if payload.size != header["total"]:
        raise VersionError(
            user_message=f"Checkpoint '{path}' is truncated: {payload.size} of {header['total']} values.",
        )
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        state[entry["name"]] = payload[entry["offset"]:entry["offset"] + count].reshape(entry["shape"]).copy()
    return header, state


def load_model(path: Path, runtime: Optional[TrackerConfig] = None) -> MTTrackModel:
    """
    Rebuild the model stored in a checkpoint.

    `runtime` supplies the non-architecture settings (tau, n_hist, post-processing,
    ablation, dtype); its architecture keys must agree with the checkpoint.
    A different `n_hist` resamples the calibration weight.
    """
    header, state = read_checkpoint(path)
    stored = TrackerConfig.model_validate(header["config"])
    cfg = stored
    if runtime is not None:
        mismatched = [k for k in ARCHITECTURE_KEYS if getattr(runtime, k) != getattr(stored, k)]
        if mismatched:
            raise VersionError(
                user_message=f"Checkpoint '{path}' was trained with a different architecture ({', '.join(mismatched)}).",
                details={k: {"checkpoint": getattr(stored, k), "config": getattr(runtime, k)} for k in mismatched},
            )
        cfg = runtime.model_copy(update={"n_hist": stored.n_hist})

    model = MTTrackModel(cfg)
    try:
        model.load_state_dict(state)
    except DimensionError as e:
        raise VersionError(
            user_message=f"Checkpoint '{path}' does not match the model layout: {e.user_message}",
            details=e.details,
        )
    if runtime is not None and runtime.n_hist != stored.n_hist:
        model.resize_memory(runtime.n_hist)
    logger.info(f"Loaded checkpoint {path} ({cfg.ablation.name}, n_hist={model.cfg.n_hist}, tau={cfg.tau})")
    return model
