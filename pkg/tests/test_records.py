import numpy as np
import pytest

from wam_runtime.attention_masks import AttentionMask
from wam_runtime.errors import InputValidationError
from wam_runtime.records import (
    format_pose,
    format_rel_action,
    mask_from_bitmap,
    mask_to_bitmap,
    parse_pose,
    parse_rel_action,
    read_chunk,
    write_chunk,
)
from wam_runtime.schemas import Pose, RelAction
from wam_runtime.signal_pipeline import ActionChunk


def test_pose_record():
    pose = Pose(position=(0.1, -0.2, 1 / 3), rotation=(1.0, 0.0, 0.0, 0.0), gripper=0.04)
    line = format_pose(pose)
    assert line.startswith("pose 0.10000000000000001 ")
    assert parse_pose(line) == pose


def test_rel_action_record():
    action = RelAction.from_vector([0.1, 0.2, 0.3, 1, 0, 0, 0, 1, 0, -0.5])
    assert parse_rel_action(format_rel_action(action)) == action


@pytest.mark.parametrize("line", [
    "pose 1 2 3",
    "rel_action 1 2 3 4 5 6 7 8 9 10",
    "pose 0 0 0 1 0 0 0 x",
])
def test_bad_records_rejected(line):
    with pytest.raises(InputValidationError):
        parse_pose(line)


def test_chunk_file(tmp_path, rng):
    chunk = ActionChunk(rng.normal(size=(5, 10)), 12.5)
    path = tmp_path / "c" / "chunk.txt"
    write_chunk(chunk, path)
    back = read_chunk(path)
    assert back.model_hz == 12.5
    np.testing.assert_array_equal(back.actions, chunk.actions)
    assert read_chunk(path, model_hz=5.0).model_hz == 5.0


def test_chunk_file_errors(tmp_path):
    with pytest.raises(InputValidationError):
        read_chunk(tmp_path / "missing.txt")
    bare = tmp_path / "bare.txt"
    bare.write_text(" ".join(["0"] * 10) + "\n", encoding="utf-8")
    with pytest.raises(InputValidationError, match="model_hz"):
        read_chunk(bare)
    assert read_chunk(bare, model_hz=10.0).horizon == 1


def test_bitmap_round_trip():
    allowed = np.array([[True, False], [True, True]])
    text = mask_to_bitmap(AttentionMask(allowed))
    assert text == "#.\n##\n"
    np.testing.assert_array_equal(mask_from_bitmap(text).allowed, allowed)


@pytest.mark.parametrize("text", ["##\n#\n", "###\n###\n", "#x\n##\n"])
def test_bad_bitmaps_rejected(text):
    with pytest.raises(InputValidationError):
        mask_from_bitmap(text)
