"""
Pydantic schemas for configuration and record validation
"""
import math
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# Enums
class SimMode(str, Enum):
    DISCRETE_EVENT = "discrete_event"
    REAL_TIME = "real_time"


class LaunchPolicy(str, Enum):
    MAX_RATE = "max_rate"
    FIXED_PERIOD = "fixed_period"


class PipelineOrder(str, Enum):
    FUSE_FIRST = "fuse_smooth_interpolate"
    SMOOTH_FIRST = "smooth_fuse_interpolate"


class FusionMode(str, Enum):
    POST_HOC = "post_hoc"
    PER_STEP = "per_step"  # experimental


class LatencyMode(str, Enum):
    JOINT = "joint"
    V2A = "v2a"


class CfgTarget(str, Enum):
    VIDEO = "video"
    ACTION = "action"
    BOTH = "both"


class PredictionMode(str, Enum):
    """Distributions sampled from the one shared model"""
    VLA = "vla"        # actions from observation and instruction
    WM = "wm"          # video from observation and actions
    IDM = "idm"        # actions from observed video
    VGM = "vgm"        # video from observation and instruction
    JOINT = "joint"    # video and actions together


class MaskKind(str, Enum):
    STAGE1 = "stage1"
    STAGE2 = "stage2"
    NONAR_V2A = "v2a"
    AR = "ar"


class UpsampleKind(str, Enum):
    LINEAR = "linear"
    CUBIC = "cubic"


QUAT_TOLERANCE = 1e-6


# Poses
class GripperRange(BaseModel):
    model_config = ConfigDict(frozen=True)

    raw_min: float = 0.0
    raw_max: float = 1.0

    @model_validator(mode="after")
    def _check_order(self):
        if not self.raw_min < self.raw_max:
            raise ValueError(f"raw_min ({self.raw_min}) must be below raw_max ({self.raw_max})")
        return self


class Pose(BaseModel):
    """Absolute end-effector state; rotation is a (w, x, y, z) unit quaternion"""
    model_config = ConfigDict(frozen=True)

    position: Tuple[float, float, float]
    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    gripper: float = 0.0

    @field_validator("position")
    @classmethod
    def _finite_position(cls, v):
        if not all(math.isfinite(c) for c in v):
            raise ValueError(f"position must be finite, got {v}")
        return v

    @field_validator("rotation")
    @classmethod
    def _unit_rotation(cls, v):
        norm = math.sqrt(sum(c * c for c in v))
        if not math.isfinite(norm) or abs(norm - 1.0) > QUAT_TOLERANCE:
            raise ValueError(f"rotation quaternion norm {norm} is not within {QUAT_TOLERANCE} of 1")
        return tuple(c / norm for c in v)


class RelAction(BaseModel):
    """Relative 10-dim action: delta position, 6D rotation, normalized gripper"""
    model_config = ConfigDict(frozen=True)

    delta_position: Tuple[float, float, float]
    rotation6d: Tuple[float, float, float, float, float, float]
    gripper_norm: float = Field(ge=-1.0, le=1.0)

    def as_vector(self) -> np.ndarray:
        return np.array([*self.delta_position, *self.rotation6d, self.gripper_norm], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "RelAction":
        values = [float(x) for x in vec]
        if len(values) != 10:
            raise ValueError(f"relative action must have 10 components, got {len(values)}")
        return cls(delta_position=tuple(values[:3]), rotation6d=tuple(values[3:9]), gripper_norm=values[9])


# Signal pipeline
class SavGolConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    window: int = 5
    polyorder: int = 2
    upsample: UpsampleKind = UpsampleKind.CUBIC

    @model_validator(mode="after")
    def _check_window(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be an odd integer >= 3, got {self.window}")
        if not 0 <= self.polyorder < self.window:
            raise ValueError(f"polyorder must be in [0, window), got {self.polyorder}")
        return self


# Chunk fusion
class FusionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    enabled: bool = True
    fusion_end_L: Optional[int] = Field(default=None, ge=0)
    control_period: Optional[float] = Field(default=None, gt=0)
    fusion_window: int = Field(default=8, ge=0)
    mode: FusionMode = FusionMode.POST_HOC
    queue_capacity: int = Field(default=10, ge=1)
    cold_start_delay: Optional[float] = Field(default=None, ge=0)


# Sampler
class SamplerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    total_steps: int = Field(default=30, ge=1, alias="steps")
    joint_prefix_N: int = Field(default=30, ge=0, alias="joint_prefix")
    cache_threshold_gamma: float = Field(default=0.99, alias="gamma")
    cache_length_k: int = Field(default=0, ge=0, alias="cache_k")
    timeshift_video: float = Field(default=6.0, gt=0)
    timeshift_action: float = Field(default=1.0, gt=0)
    cfg_scale: float = 1.0
    cfg_target: CfgTarget = CfgTarget.VIDEO
    seed: int = 0

    @model_validator(mode="after")
    def _check_prefix(self):
        if self.joint_prefix_N > self.total_steps:
            raise ValueError(
                f"joint_prefix ({self.joint_prefix_N}) cannot exceed steps ({self.total_steps})"
            )
        return self


# Latency model
class LatencyModel(BaseModel):
    """
    End-to-end latency of one inference call.

    joint mode: evals x per_step + overhead, where evals defaults to steps
    v2a mode: joint_prefix x per_step + suffix evals x suffix per-step + overhead
    """
    model_config = ConfigDict(frozen=True)

    name: str = ""
    per_step_ms: float = Field(default=29.3, ge=0)
    fixed_overhead_ms: float = Field(default=0.0, ge=0)
    steps: int = Field(default=30, ge=0)
    mode: LatencyMode = LatencyMode.JOINT
    v2a_suffix_per_step_ms: float = Field(default=0.0, ge=0)
    joint_prefix: int = Field(default=0, ge=0)
    effective_evals: Optional[float] = Field(default=None, ge=0)
    suffix_evals: Optional[float] = Field(default=None, ge=0)
    jitter_ms: float = Field(default=0.0, ge=0)
    spike_prob: float = Field(default=0.0, ge=0, le=1)
    spike_ms: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _check_prefix(self):
        if self.mode == LatencyMode.V2A and self.joint_prefix > self.steps:
            raise ValueError(f"joint_prefix ({self.joint_prefix}) cannot exceed steps ({self.steps})")
        return self


# Toy policy used by the simulator
class PolicyConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode_noise: float = Field(default=0.03, ge=0)
    action_jitter: float = Field(default=0.004, ge=0)
    observation_pull: float = Field(default=0.5, ge=0, le=1)
    pull_decay_steps: float = Field(default=4.0, gt=0)
    video_frames: int = Field(default=2, ge=1)
    video_dim: int = Field(default=8, ge=1)


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    control_hz: float = 50.0
    model_hz: float = 10.0
    horizon_H: int = Field(default=16, ge=1)
    duration: float = Field(default=10.0, gt=0)
    seed: int = 0
    mode: SimMode = SimMode.DISCRETE_EVENT
    launch_policy: LaunchPolicy = LaunchPolicy.MAX_RATE
    launch_period: float = Field(default=0.5, gt=0)
    pipeline_order: PipelineOrder = PipelineOrder.FUSE_FIRST
    handoff_margin: float = Field(default=0.25, ge=0, lt=1)
    plant_kp: float = Field(default=100.0, ge=0)
    plant_kd: float = Field(default=20.0, ge=0)

    sampler: SamplerConfig = SamplerConfig()
    fusion: FusionConfig = FusionConfig()
    smoothing: SavGolConfig = SavGolConfig()
    latency: LatencyModel = LatencyModel()
    policy: PolicyConfig = PolicyConfig()

    @model_validator(mode="after")
    def _check_rates(self):
        if not self.model_hz > 0:
            raise ValueError(f"model_hz must be positive, got {self.model_hz}")
        if self.control_hz < self.model_hz:
            raise ValueError(f"control_hz ({self.control_hz}) must be >= model_hz ({self.model_hz})")
        return self

    @property
    def control_period(self) -> float:
        return 1.0 / self.control_hz

    @property
    def fusion_period(self) -> float:
        """Action-step period used to convert delays into fusion steps"""
        return self.fusion.control_period or 1.0 / self.model_hz


# Attention layout
class TokenLayout(BaseModel):
    """
    Flattened token sequence: text, cond, video (frame, view, row, col), action (frame, slot).

    AR layouts additionally carry one clean video block per frame ahead of the noisy
    video; chunking lists chunk boundaries over frames, starting at 0 and ending at K.
    """
    model_config = ConfigDict(frozen=True)

    n_text: int = Field(default=0, ge=0)
    n_cond: int = Field(default=0, ge=0)
    frames_K: int = Field(default=1, ge=0)
    views_V: int = Field(default=1, ge=0)
    grid_h: int = Field(default=1, ge=0)
    grid_w: int = Field(default=1, ge=0)
    f_va: int = Field(default=1, ge=0)
    tau: int = Field(default=1, ge=0)
    actions_per_frame_Sa: int = Field(default=1, ge=0)
    chunking: Optional[List[int]] = None

    @model_validator(mode="before")
    @classmethod
    def _fill_sa(cls, data):
        if isinstance(data, dict):
            data = dict(data)
            if data.get("actions_per_frame_Sa") is None:
                data["actions_per_frame_Sa"] = data.get("f_va", 1) * data.get("tau", 1)
            elif "f_va" not in data and "tau" not in data:
                data["f_va"] = data["actions_per_frame_Sa"]
                data["tau"] = 1
        return data

    @model_validator(mode="after")
    def _check_layout(self):
        if self.actions_per_frame_Sa != self.f_va * self.tau:
            raise ValueError(
                f"S_a ({self.actions_per_frame_Sa}) must equal f_va*tau ({self.f_va}*{self.tau})"
            )
        if self.chunking is not None:
            bounds = self.chunking
            if len(bounds) < 2 or bounds[0] != 0 or bounds[-1] != self.frames_K:
                raise ValueError(f"chunking must start at 0 and end at K={self.frames_K}, got {bounds}")
            if any(later <= earlier for earlier, later in zip(bounds, bounds[1:])):
                raise ValueError(f"chunk boundaries must be strictly increasing, got {bounds}")
        return self

    @property
    def tokens_per_frame_per_view(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def video_tokens(self) -> int:
        return self.frames_K * self.views_V * self.tokens_per_frame_per_view

    @property
    def action_tokens(self) -> int:
        return self.frames_K * self.actions_per_frame_Sa

    @property
    def n_chunks(self) -> int:
        return len(self.chunking) - 1 if self.chunking else 0


# Metrics
class Metrics(BaseModel):
    max_boundary_jump: float = 0.0
    mean_boundary_jump: float = 0.0
    mean_intra_chunk_jump: float = 0.0
    stall_count: int = 0
    achieved_control_hz: float = 0.0
    tracking_error: float = 0.0
    max_tick_jitter: float = 0.0
    swap_count: int = 0
    bound_violations: int = 0
