"""
End-effector pose math
Quaternion / rotation-matrix / 6D conversions, gripper normalization and the
absolute <-> relative action mapping used as the model's action representation.

Quaternions are (w, x, y, z), right-handed, active rotations.
"""
import logging
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InputValidationError
from .schemas import QUAT_TOLERANCE, GripperRange, Pose, RelAction

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-8
ACTION_DIM = 10


class GripperValue(NamedTuple):
    value: float
    clamped: bool


class RelativeResult(NamedTuple):
    action: RelAction
    gripper_clamped: bool


class RelativeChunk(NamedTuple):
    actions: np.ndarray  # (n, 10)
    clamped: np.ndarray  # (n,) bool


class AbsoluteChunk(NamedTuple):
    positions: np.ndarray  # (n, 3)
    quaternions: np.ndarray  # (n, 4) wxyz
    grippers: np.ndarray  # (n,)


# Rotation conversions
def _check_unit(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != 4:
        raise InputValidationError(f"quaternion must have 4 components, got shape {q.shape}")
    norms = np.linalg.norm(q, axis=-1)
    if not np.all(np.isfinite(norms)) or np.any(np.abs(norms - 1.0) > QUAT_TOLERANCE):
        raise InputValidationError(
            f"quaternion norm must be 1 within {QUAT_TOLERANCE}, got {np.ravel(norms)[:4]}"
        )
    return q / norms[..., None]


def quat_to_matrix(q) -> np.ndarray:
    """(..., 4) wxyz unit quaternion -> (..., 3, 3) rotation matrix"""
    q = _check_unit(q)
    # scipy expects scalar-last
    return Rotation.from_quat(np.roll(q, -1, axis=-1).reshape(-1, 4)).as_matrix().reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(matrix) -> np.ndarray:
    """(..., 3, 3) rotation matrix -> (..., 4) wxyz quaternion with w >= 0"""
    matrix = np.asarray(matrix, dtype=np.float64)
    xyzw = Rotation.from_matrix(matrix.reshape(-1, 3, 3)).as_quat()
    q = np.roll(xyzw, 1, axis=-1)
    q = np.where(q[:, :1] < 0, -q, q)
    return q.reshape(matrix.shape[:-2] + (4,))


def quat_to_rot6d(q) -> np.ndarray:
    """First two columns of the rotation matrix, concatenated column by column"""
    matrix = quat_to_matrix(q)
    return np.concatenate([matrix[..., :, 0], matrix[..., :, 1]], axis=-1)


def rot6d_to_matrix(r6) -> np.ndarray:
    """
    Gram-Schmidt reconstruction of a rotation matrix from its 6D representation.

    The first column is normalized, the second has its projection on the first
    removed and is normalized, the third is their cross product.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise InputValidationError(f"6D rotation must have 6 components, got shape {r6.shape}")
    a, b = r6[..., :3], r6[..., 3:]

    a_norm = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(~np.isfinite(a_norm)) or np.any(a_norm <= DEGENERATE_NORM):
        raise InputValidationError("6D rotation has a degenerate first column")
    x = a / a_norm

    y = b - np.sum(x * b, axis=-1, keepdims=True) * x
    y_norm = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(y_norm <= DEGENERATE_NORM):
        raise InputValidationError("6D rotation columns are parallel or the second is zero")
    y = y / y_norm

    z = np.cross(x, y, axis=-1)
    return np.stack([x, y, z], axis=-1)


def rotation_angle_between(r1, r2) -> np.ndarray:
    """Geodesic angle in radians between rotation matrices"""
    rel = np.swapaxes(np.asarray(r1), -1, -2) @ np.asarray(r2)
    cos = (np.trace(rel, axis1=-2, axis2=-1) - 1.0) / 2.0
    return np.arccos(np.clip(cos, -1.0, 1.0))


# Gripper
def normalize_gripper(g: float, grip_range: GripperRange) -> GripperValue:
    """Affine map of [raw_min, raw_max] onto [-1, 1]; out-of-range values clamp"""
    span = grip_range.raw_max - grip_range.raw_min
    value = 2.0 * (g - grip_range.raw_min) / span - 1.0
    clamped = bool(value < -1.0 or value > 1.0)
    if clamped:
        logger.debug("Gripper value %s outside [%s, %s], clamping", g, grip_range.raw_min, grip_range.raw_max)
        value = min(1.0, max(-1.0, value))
    return GripperValue(float(value), clamped)


def denormalize_gripper(g_norm: float, grip_range: GripperRange) -> float:
    span = grip_range.raw_max - grip_range.raw_min
    return float((g_norm + 1.0) / 2.0 * span + grip_range.raw_min)


# Pose <-> relative action
def to_relative(abs_pose: Pose, ref: Pose, grip_range: GripperRange) -> RelativeResult:
    """Component-wise difference from the reference: p_i - p_s, R_s^-1 R_i, normalized gripper"""
    r_ref = quat_to_matrix(ref.rotation)
    r_abs = quat_to_matrix(abs_pose.rotation)
    r_rel = r_ref.T @ r_abs

    delta = np.asarray(abs_pose.position) - np.asarray(ref.position)
    grip = normalize_gripper(abs_pose.gripper, grip_range)
    rot6d = np.concatenate([r_rel[:, 0], r_rel[:, 1]])

    action = RelAction(
        delta_position=tuple(float(v) for v in delta),
        rotation6d=tuple(float(v) for v in rot6d),
        gripper_norm=grip.value,
    )
    return RelativeResult(action, grip.clamped)


def to_absolute(rel: RelAction, ref: Pose, grip_range: GripperRange) -> Pose:
    r_ref = quat_to_matrix(ref.rotation)
    r_abs = r_ref @ rot6d_to_matrix(rel.rotation6d)
    position = np.asarray(ref.position) + np.asarray(rel.delta_position)

    return Pose(
        position=tuple(float(v) for v in position),
        rotation=tuple(float(v) for v in matrix_to_quat(r_abs)),
        gripper=denormalize_gripper(rel.gripper_norm, grip_range),
    )


def relative_chunk(positions, quaternions, grippers, ref: Pose, grip_range: GripperRange) -> RelativeChunk:
    """Vectorized to_relative over n absolute poses sharing one reference"""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    grippers = np.asarray(grippers, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(positions)):
        raise InputValidationError("positions must be finite")

    r_ref = quat_to_matrix(ref.rotation)
    r_rel = r_ref.T[None] @ quat_to_matrix(quaternions).reshape(-1, 3, 3)

    span = grip_range.raw_max - grip_range.raw_min
    g_norm = 2.0 * (grippers - grip_range.raw_min) / span - 1.0
    clamped = (g_norm < -1.0) | (g_norm > 1.0)
    if clamped.any():
        logger.debug("Clamped %d gripper values", int(clamped.sum()))

    out = np.empty((positions.shape[0], ACTION_DIM))
    out[:, :3] = positions - np.asarray(ref.position)
    out[:, 3:6] = r_rel[:, :, 0]
    out[:, 6:9] = r_rel[:, :, 1]
    out[:, 9] = np.clip(g_norm, -1.0, 1.0)
    return RelativeChunk(out, clamped)


def absolute_chunk(rel, ref: Pose, grip_range: GripperRange) -> AbsoluteChunk:
    rel = np.asarray(rel, dtype=np.float64).reshape(-1, ACTION_DIM)
    r_abs = quat_to_matrix(ref.rotation)[None] @ rot6d_to_matrix(rel[:, 3:9])
    span = grip_range.raw_max - grip_range.raw_min
    return AbsoluteChunk(
        positions=np.asarray(ref.position)[None] + rel[:, :3],
        quaternions=matrix_to_quat(r_abs),
        grippers=(rel[:, 9] + 1.0) / 2.0 * span + grip_range.raw_min,
    )
