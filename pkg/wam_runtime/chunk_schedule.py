"""
Asynchronous chunk fusion
Delay estimation, frozen prefix and decay-weighted blending of the unexecuted
tail of the active chunk with a freshly generated chunk.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Union

import numpy as np

from .errors import InputValidationError
from .schemas import FusionConfig
from .signal_pipeline import ActionChunk

logger = logging.getLogger(__name__)

DELAY_EPSILON = 1e-9
DECAY_NORM = math.expm1(1.0)


def steps_of_delay(delta: float, control_period: float) -> int:
    """Inference delay in action steps, d = ceil(delta / period)"""
    if delta < 0 or not math.isfinite(delta):
        raise InputValidationError(f"delay must be a finite value >= 0, got {delta}")
    if not control_period > 0:
        raise InputValidationError(f"control period must be positive, got {control_period}")
    return max(0, math.ceil(delta / control_period - DELAY_EPSILON))


def decay_g(rho: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """g(rho) = rho (e^rho - 1) / (e - 1) on [0, 1]"""
    r = np.asarray(rho, dtype=np.float64)
    if np.any(~np.isfinite(r)) or np.any(r < 0.0) or np.any(r > 1.0):
        raise InputValidationError(f"rho must lie in [0, 1], got {rho}")
    g = r * np.expm1(r) / DECAY_NORM
    return float(g) if g.ndim == 0 else g


def fusion_weights(d: int, L: int, horizon: int) -> np.ndarray:
    """
    Per-index weight on the old chunk.

    1 on the frozen prefix [0, d), 1 - g((i - d) / (L - d)) on [d, L), 0 from L on.
    """
    if not 0 <= d <= L <= horizon:
        raise InputValidationError(f"need 0 <= d <= L <= horizon, got d={d}, L={L}, horizon={horizon}")
    weights = np.zeros(horizon)
    weights[:d] = 1.0
    if L > d:
        rho = (np.arange(d, L) - d) / (L - d)
        weights[d:L] = 1.0 - decay_g(rho)
    return weights


def resolve_fusion_end(d: int, horizon: int, cfg: FusionConfig) -> int:
    """Configured L clipped to [d, horizon], or d + min(horizon - d, fusion_window)"""
    d = min(d, horizon)
    if cfg.fusion_end_L is not None:
        return min(max(cfg.fusion_end_L, d), horizon)
    return d + min(horizon - d, cfg.fusion_window)


def fuse_chunks(remain, fresh: ActionChunk, weights) -> ActionChunk:
    """a_i = w_i * remain_i + (1 - w_i) * fresh_i; remain may be shorter than fresh"""
    remain = np.asarray(remain.actions if isinstance(remain, ActionChunk) else remain, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    h = fresh.horizon
    if weights.shape != (h,):
        raise InputValidationError(f"expected {h} weights, got shape {weights.shape}")
    if remain.ndim != 2 or remain.shape[1] != fresh.actions.shape[1]:
        raise InputValidationError(f"remaining actions have shape {remain.shape}")
    if np.any(weights < 0.0) or np.any(weights > 1.0):
        raise InputValidationError("weights must lie in [0, 1]")

    overlap = min(remain.shape[0], h)
    if np.any(weights[overlap:] != 0.0):
        first = overlap + int(np.flatnonzero(weights[overlap:])[0])
        raise InputValidationError(f"nonzero weight at index {first} with no remaining old action")

    out = fresh.actions.copy()
    w = weights[:overlap, None]
    out[:overlap] = w * remain[:overlap] + (1.0 - w) * fresh.actions[:overlap]
    return ActionChunk(out, fresh.model_hz)


class DelayQueue:
    def __init__(self, capacity: int = 10, cold_start_delay: float = 0.0):
        """Bounded FIFO of recent inference delays in seconds"""
        if capacity < 1:
            raise InputValidationError(f"capacity must be >= 1, got {capacity}")
        if cold_start_delay < 0:
            raise InputValidationError(f"cold start delay must be >= 0, got {cold_start_delay}")
        self.capacity = capacity
        self.cold_start_delay = cold_start_delay
        self.recent_delays = deque(maxlen=capacity)

    def push(self, delay: float):
        if delay < 0 or not math.isfinite(delay):
            raise InputValidationError(f"delay must be a finite value >= 0, got {delay}")
        self.recent_delays.append(float(delay))

    def extend(self, delays: Iterable[float]):
        for delay in delays:
            self.push(delay)

    def __len__(self):
        return len(self.recent_delays)

    def estimate(self) -> float:
        return estimate_delay(self)


def estimate_delay(q: DelayQueue) -> float:
    """max(Q), or the cold-start delay while Q is empty"""
    if not q.recent_delays:
        return q.cold_start_delay
    return max(q.recent_delays)


@dataclass
class ExecutionState:
    """Active chunk and the number s of its actions already executed"""
    active_chunk: ActionChunk
    executed_count: int = 0

    def __post_init__(self):
        if not 0 <= self.executed_count <= self.active_chunk.horizon:
            raise InputValidationError(
                f"executed count {self.executed_count} outside [0, {self.active_chunk.horizon}]"
            )

    def remaining(self) -> np.ndarray:
        return self.active_chunk.actions[self.executed_count:]

    def advance(self, n: int = 1):
        self.executed_count = min(self.active_chunk.horizon, self.executed_count + n)

    @property
    def exhausted(self) -> bool:
        return self.executed_count >= self.active_chunk.horizon


class FusionPlan(NamedTuple):
    chunk: ActionChunk
    weights: np.ndarray
    s: int
    d: int
    L: int
    overlap: int


def plan_fusion(state: ExecutionState, fresh: ActionChunk, d: int, cfg: FusionConfig) -> FusionPlan:
    """
    Align fresh index i with old index s + i and blend over the overlap.

    Weights past the overlap are forced to zero.
    """
    if d < 0:
        raise InputValidationError(f"delay steps must be >= 0, got {d}")
    remain = state.remaining()
    h = fresh.horizon
    overlap = min(remain.shape[0], h)
    d = min(d, h)

    if not cfg.enabled:
        return FusionPlan(fresh, np.zeros(h), state.executed_count, d, d, overlap)

    L = resolve_fusion_end(d, h, cfg)
    weights = fusion_weights(d, L, h)
    if overlap < h and np.any(weights[overlap:] != 0.0):
        logger.debug("Old chunk has %d actions left, zeroing weights from index %d", overlap, overlap)
        weights[overlap:] = 0.0

    fused = fuse_chunks(remain, fresh, weights)
    return FusionPlan(fused, weights, state.executed_count, d, L, overlap)


# Per-denoising-step variant (experimental)
@dataclass(frozen=True, eq=False)
class ActionPrior:
    """Old-chunk values and weights re-imposed on the action latent after every sampler step"""
    values: np.ndarray  # (H, 10)
    weights: np.ndarray  # (H,)

    def guide(self, action: np.ndarray, t: float, noise: np.ndarray) -> np.ndarray:
        """w * ((1 - t) prior + t noise) + (1 - w) * x on the flattened action latent"""
        x = action.reshape(self.values.shape)
        eps = noise.reshape(self.values.shape)
        w = self.weights[:, None]
        target = (1.0 - t) * self.values + t * eps
        return (w * target + (1.0 - w) * x).reshape(action.shape)


def build_action_prior(state: ExecutionState, d: int, cfg: FusionConfig,
                       horizon: Optional[int] = None) -> ActionPrior:
    remain = state.remaining()
    h = horizon or state.active_chunk.horizon
    overlap = min(remain.shape[0], h)
    d = min(d, h)
    weights = fusion_weights(d, resolve_fusion_end(d, h, cfg), h)
    weights[overlap:] = 0.0
    values = np.zeros((h, state.active_chunk.actions.shape[1]))
    values[:overlap] = remain[:overlap]
    return ActionPrior(values, weights)
