"""
Structured-text records
Poses, relative actions, action chunks and attention-mask bitmaps.
Floats are written with 17 significant digits so every record reloads exactly.
"""
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .attention_masks import AttentionMask
from .errors import InputValidationError
from .schemas import Pose, RelAction
from .signal_pipeline import ActionChunk

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
ALLOWED_CELL = "#"
BLOCKED_CELL = "."


def _floats(values) -> str:
    return " ".join(FLOAT_FORMAT % float(v) for v in values)


def _parse_floats(line: str, tag: str, count: int) -> list:
    tokens = line.split()
    if not tokens or tokens[0] != tag:
        raise InputValidationError(f"expected a '{tag}' record, got {line!r}")
    if len(tokens) != count + 1:
        raise InputValidationError(f"'{tag}' record needs {count} values, got {len(tokens) - 1}")
    try:
        return [float(t) for t in tokens[1:]]
    except ValueError as e:
        raise InputValidationError(f"bad number in '{tag}' record: {e}") from e


# Pose / relative action
def format_pose(pose: Pose) -> str:
    """`pose px py pz qw qx qy qz gripper`"""
    return "pose " + _floats([*pose.position, *pose.rotation, pose.gripper])


def parse_pose(line: str) -> Pose:
    v = _parse_floats(line, "pose", 8)
    return Pose(position=tuple(v[:3]), rotation=tuple(v[3:7]), gripper=v[7])


def format_rel_action(action: RelAction) -> str:
    return "rel_action " + _floats(action.as_vector())


def parse_rel_action(line: str) -> RelAction:
    return RelAction.from_vector(_parse_floats(line, "rel_action", 10))


# Action chunks
def write_chunk(chunk: ActionChunk, path: Union[str, Path]):
    """One action per row, preceded by a `model_hz=` header comment"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, chunk.actions, fmt=FLOAT_FORMAT, header=f"model_hz={chunk.model_hz!r}")


def read_chunk(path: Union[str, Path], model_hz: Optional[float] = None) -> ActionChunk:
    path = Path(path)
    if not path.exists():
        raise InputValidationError(f"chunk file not found: {path}")

    header_hz = None
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().lstrip("# ").strip()
    if first.startswith("model_hz="):
        header_hz = float(first.partition("=")[2])

    try:
        actions = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise InputValidationError(f"{path}: {e}") from e

    hz = model_hz if model_hz is not None else header_hz
    if hz is None:
        raise InputValidationError(f"{path}: no model_hz header and none given")
    return ActionChunk(actions, hz)


# Mask bitmaps
def mask_to_bitmap(mask: AttentionMask) -> str:
    """Row-major, `#` allowed, `.` disallowed, one query row per line"""
    rows = np.where(mask.allowed, ALLOWED_CELL, BLOCKED_CELL)
    return "\n".join("".join(row) for row in rows) + "\n"


def mask_from_bitmap(text: str) -> AttentionMask:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        return AttentionMask(np.zeros((0, 0), dtype=bool))
    width = len(lines[0])
    if any(len(line) != width for line in lines) or width != len(lines):
        raise InputValidationError(f"bitmap must be square, got {len(lines)} rows of widths "
                                   f"{sorted({len(line) for line in lines})}")
    bad = set("".join(lines)) - {ALLOWED_CELL, BLOCKED_CELL}
    if bad:
        raise InputValidationError(f"unexpected bitmap characters: {''.join(sorted(bad))}")
    return AttentionMask(np.array([[c == ALLOWED_CELL for c in line] for line in lines]))


def write_mask(mask: AttentionMask, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(mask_to_bitmap(mask), encoding="utf-8")
    logger.debug("Wrote %dx%d mask bitmap to %s", mask.size, mask.size, path)


def read_mask(path: Union[str, Path]) -> AttentionMask:
    return mask_from_bitmap(Path(path).read_text(encoding="utf-8"))
