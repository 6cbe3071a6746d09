"""
Action chunk signal pipeline
Savitzky-Golay smoothing at doubled temporal resolution and
frequency-aware interpolation from model rate to control rate.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.signal import savgol_coeffs, savgol_filter

from .errors import InputValidationError
from .schemas import SavGolConfig, UpsampleKind

logger = logging.getLogger(__name__)

ACTION_DIM = 10


@dataclass(frozen=True, eq=False)
class ActionChunk:
    """H actions of dimension 10 sampled at model_hz"""
    actions: np.ndarray
    model_hz: float

    def __post_init__(self):
        actions = np.array(self.actions, dtype=np.float64)
        if actions.ndim != 2 or actions.shape[1] != ACTION_DIM:
            raise InputValidationError(f"actions must have shape (H, {ACTION_DIM}), got {actions.shape}")
        if actions.shape[0] < 1:
            raise InputValidationError("action chunk must hold at least one action")
        if not self.model_hz > 0:
            raise InputValidationError(f"model_hz must be positive, got {self.model_hz}")
        actions.setflags(write=False)
        object.__setattr__(self, "actions", actions)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def __len__(self):
        return self.horizon


class SmoothResult(NamedTuple):
    chunk: ActionChunk
    skipped: bool


def savgol_coefficients(window: int, polyorder: int) -> np.ndarray:
    """Center-point weights of the least-squares polynomial fit"""
    if window < 3 or window % 2 == 0:
        raise InputValidationError(f"window must be an odd integer >= 3, got {window}")
    if not 0 <= polyorder < window:
        raise InputValidationError(f"polyorder must be in [0, {window}), got {polyorder}")
    return savgol_coeffs(window, polyorder, use="dot")


def _cubic_midpoints(x: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive rows from 4-point Lagrange stencils"""
    mid = np.empty((x.shape[0] - 1, x.shape[1]))
    mid[1:-1] = (-x[:-3] + 9.0 * x[1:-2] + 9.0 * x[2:-1] - x[3:]) / 16.0
    mid[0] = (5.0 * x[0] + 15.0 * x[1] - 5.0 * x[2] + x[3]) / 16.0
    mid[-1] = (5.0 * x[-1] + 15.0 * x[-2] - 5.0 * x[-3] + x[-4]) / 16.0
    return mid


def upsample_2x(chunk: ActionChunk, kind: UpsampleKind = UpsampleKind.LINEAR) -> ActionChunk:
    """Insert one midpoint between every pair of actions: H -> 2H-1, rate doubled"""
    x = chunk.actions
    if x.shape[0] < 2:
        raise InputValidationError(f"upsampling needs at least 2 actions, got {x.shape[0]}")

    if kind == UpsampleKind.CUBIC and x.shape[0] >= 4:
        mid = _cubic_midpoints(x)
    else:
        mid = (x[:-1] + x[1:]) / 2.0

    out = np.empty((2 * x.shape[0] - 1, x.shape[1]))
    out[0::2] = x
    out[1::2] = mid
    return ActionChunk(out, chunk.model_hz * 2.0)


def smooth_chunk(chunk: ActionChunk, cfg: SavGolConfig = SavGolConfig()) -> SmoothResult:
    """
    Upsample 2x, filter each dimension, take every second sample.

    A chunk whose upsampled length is below the window comes back unchanged
    with skipped=True.
    """
    if chunk.horizon < 2 or 2 * chunk.horizon - 1 < cfg.window:
        logger.debug("Chunk of %d actions too short for window %d, not smoothing", chunk.horizon, cfg.window)
        return SmoothResult(chunk, True)

    dense = upsample_2x(chunk, cfg.upsample)
    filtered = savgol_filter(dense.actions, cfg.window, cfg.polyorder, axis=0, mode="mirror")
    return SmoothResult(ActionChunk(filtered[0::2], chunk.model_hz), False)


def interpolated_length(horizon: int, model_hz: float, control_hz: float) -> int:
    return max(1, int(math.floor(horizon * control_hz / model_hz + 0.5)))


def interpolation_grid(horizon: int, n_out: int) -> np.ndarray:
    """Source-index position of each output sample; endpoints land exactly on 0 and H-1"""
    if n_out == 1:
        return np.zeros(1)
    return np.linspace(0.0, horizon - 1.0, n_out)


def freq_interpolate(chunk: ActionChunk, control_hz: float) -> ActionChunk:
    """Resample a model-rate chunk to round(H * control_hz / model_hz) actions at control_hz"""
    if not control_hz > 0:
        raise InputValidationError(f"control_hz must be positive, got {control_hz}")

    h = chunk.horizon
    n_out = interpolated_length(h, chunk.model_hz, control_hz)
    grid = interpolation_grid(h, n_out)
    src = np.arange(h, dtype=np.float64)

    out = np.empty((n_out, chunk.actions.shape[1]))
    for dim in range(chunk.actions.shape[1]):
        out[:, dim] = np.interp(grid, src, chunk.actions[:, dim])
    return ActionChunk(out, control_hz)


def render_chunk(chunk: ActionChunk, cfg: SavGolConfig, control_hz: float) -> SmoothResult:
    """Smooth then interpolate to the control rate"""
    smoothed, skipped = smooth_chunk(chunk, cfg)
    return SmoothResult(freq_interpolate(smoothed, control_hz), skipped)
