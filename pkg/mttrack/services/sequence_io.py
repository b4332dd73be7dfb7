"""
Sequence directories in the OTB/UAV123 layout:

    <name>/img/0001.png ...          zero-padded, 1-based frame numbers
    <name>/groundtruth_rect.txt      one "x,y,w,h" line per frame (comma or tab)
    <name>/meta.json                 optional: attribute tags and generator details
"""
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Union

import cv2
import numpy as np

from mttrack.core.exceptions import DataIOError, FormatError, InputError
from mttrack.models.bbox import BBox

logger = logging.getLogger(__name__)

GT_FILE = "groundtruth_rect.txt"
META_FILE = "meta.json"
IMAGE_DIR = "img"
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")

Frame = Union[Path, np.ndarray]

_DELIMITER = re.compile(r"\s*[,\t]\s*")


@dataclass
class Sequence:
    name: str
    frames: List[Frame]
    gt: List[BBox]
    attributes: List[str] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) != len(self.gt):
            raise FormatError(
                user_message=f"Sequence '{self.name}' has {len(self.frames)} frames but {len(self.gt)} ground-truth boxes.",
                details={"frames": len(self.frames), "boxes": len(self.gt)},
            )
        if len(self.frames) < 2:
            raise InputError(user_message=f"Sequence '{self.name}' needs at least 2 frames, has {len(self.frames)}.")

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, index: int) -> np.ndarray:
        item = self.frames[index]
        if isinstance(item, np.ndarray):
            return item
        image = cv2.imread(str(item), cv2.IMREAD_COLOR)
        if image is None:
            raise DataIOError(user_message=f"Could not read frame '{item}'.", details={"path": str(item)})
        return image

    def iter_frames(self) -> Iterator[np.ndarray]:
        for i in range(len(self.frames)):
            yield self.frame(i)


def format_number(value: float) -> str:
    """Shortest text that parses back to the same float"""
    return np.format_float_positional(float(value), trim="-")


def format_box(bbox: BBox) -> str:
    return ",".join(format_number(v) for v in bbox.to_corner())


def parse_boxes(text: str, source: str = "<text>") -> List[BBox]:
    boxes = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = _DELIMITER.split(line)
        if len(fields) != 4:
            raise FormatError(
                user_message=f"{source}:{number}: expected 4 values 'x,y,w,h', got {len(fields)} in '{line}'.",
                line=number,
                details={"file": source},
            )
        try:
            values = [float(v) for v in fields]
            boxes.append(BBox.from_corner(*values))
        except (ValueError, InputError) as e:
            raise FormatError(
                user_message=f"{source}:{number}: cannot parse box '{line}'.",
                technical_message=str(e),
                line=number,
                details={"file": source},
            )
    return boxes


def read_boxes(path: Path) -> List[BBox]:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataIOError(user_message=f"Box file '{path}' does not exist.", details={"path": str(path)})
    return parse_boxes(text, source=str(path))


def write_boxes(path: Path, boxes: List[BBox]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(format_box(b) + "\n" for b in boxes))
    except OSError as e:
        raise DataIOError(user_message=f"Could not write '{path}'.", technical_message=str(e))


def _frame_number(path: Path) -> int:
    digits = re.sub(r"\D", "", path.stem)
    return int(digits) if digits else -1


def list_frames(image_dir: Path) -> List[Path]:
    frames = [p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
    return sorted(frames, key=lambda p: (_frame_number(p), p.name))


def load_sequence(directory: Union[str, Path]) -> Sequence:
    directory = Path(directory)
    image_dir = directory / IMAGE_DIR
    if not image_dir.is_dir():
        raise DataIOError(
            user_message=f"Sequence '{directory}' has no '{IMAGE_DIR}' directory.",
            details={"path": str(directory)},
        )
    frames = list_frames(image_dir)
    gt = read_boxes(directory / GT_FILE)
    if len(frames) != len(gt):
        raise FormatError(
            user_message=f"Sequence '{directory.name}' has {len(frames)} frames but {len(gt)} ground-truth lines.",
            details={"frames": len(frames), "boxes": len(gt)},
        )
    meta: Dict[str, Any] = {}
    meta_path = directory / META_FILE
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as e:
            raise FormatError(
                user_message=f"'{meta_path}' is not valid JSON.",
                technical_message=str(e),
                line=e.lineno,
            )
    return Sequence(
        name=directory.name,
        frames=list(frames),
        gt=gt,
        attributes=list(meta.get("attributes", [])),
        meta=meta,
    )


def write_sequence(seq: Sequence, directory: Union[str, Path]) -> Path:
    """Write frames as PNG (lossless) plus ground truth and metadata; returns the sequence directory"""
    directory = Path(directory)
    image_dir = directory / IMAGE_DIR
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
        width = max(4, len(str(len(seq))))
        for i in range(len(seq)):
            target = image_dir / f"{i + 1:0{width}d}.png"
            if not cv2.imwrite(str(target), seq.frame(i)):
                raise OSError(f"cv2.imwrite failed for {target}")
    except OSError as e:
        raise DataIOError(
            user_message=f"Could not write sequence '{seq.name}' to '{directory}'.",
            technical_message=str(e),
            details={"path": str(directory)},
        )
    write_boxes(directory / GT_FILE, seq.gt)
    meta = dict(seq.meta)
    meta["attributes"] = list(seq.attributes)
    (directory / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def discover_sequences(root: Union[str, Path]) -> List[Path]:
    """Sequence directories directly under `root`, sorted by name"""
    root = Path(root)
    if not root.is_dir():
        raise DataIOError(user_message=f"Data directory '{root}' does not exist.", details={"path": str(root)})
    return sorted(p for p in root.iterdir() if (p / GT_FILE).exists())
