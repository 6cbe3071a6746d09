"""
Toy world model
Analytic velocity fields with closed-form flows, a coupled video->action
field, the inference latency model, a double-integrator plant and the toy
policy that drives the closed-loop simulator.
"""
import configparser
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Union

import numpy as np
from pydantic import ValidationError

from .config import PRESETS_DIR
from .denoise_runtime import LatentState, noise_state, sample_joint, sample_v2a
from .errors import ConfigError, InputValidationError
from .schemas import LatencyMode, LatencyModel, PolicyConfig, SamplerConfig
from .signal_pipeline import ACTION_DIM, ActionChunk

logger = logging.getLogger(__name__)

TABLE3_PRESETS = PRESETS_DIR / "table3.ini"


# Velocity fields
@dataclass(frozen=True)
class LinearField:
    """v(x, t) = a x + b elementwise, for both modalities"""
    a: float = 0.0
    b: float = 0.0
    concurrency_safe: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise InputValidationError(f"field coefficients must be finite, got a={self.a}, b={self.b}")

    def velocity(self, x: np.ndarray) -> np.ndarray:
        return self.a * x + self.b

    def eval(self, state: LatentState, condition=None):
        return self.velocity(state.video), self.velocity(state.action)

    def context(self, state: LatentState, condition=None):
        return state.video.copy()

    def eval_action(self, state: LatentState, context, condition=None) -> np.ndarray:
        return self.velocity(state.action)


@dataclass(frozen=True, eq=False)
class CoupledField:
    """
    Video follows its own linear field; action adds coupling @ video.

    In action-only mode the video term comes from the frozen context.
    """
    coupling: np.ndarray  # (action_dim, video_dim)
    video_field: LinearField = LinearField()
    action_field: LinearField = LinearField()
    concurrency_safe: bool = True

    def __post_init__(self):
        coupling = np.array(self.coupling, dtype=np.float64)
        if coupling.ndim != 2:
            raise InputValidationError(f"coupling must be a matrix, got shape {coupling.shape}")
        object.__setattr__(self, "coupling", coupling)

    def _check(self, state: LatentState):
        if self.coupling.shape != (state.action.shape[0], state.video.shape[0]):
            raise InputValidationError(
                f"coupling shape {self.coupling.shape} does not match latents "
                f"({state.action.shape[0]}, {state.video.shape[0]})"
            )

    def eval(self, state: LatentState, condition=None):
        self._check(state)
        v_action = self.action_field.velocity(state.action) + self.coupling @ state.video
        return self.video_field.velocity(state.video), v_action

    def context(self, state: LatentState, condition=None):
        return state.video.copy()

    def eval_action(self, state: LatentState, context, condition=None) -> np.ndarray:
        return self.action_field.velocity(state.action) + self.coupling @ context


@dataclass(frozen=True, eq=False)
class GoalField:
    """v = (x - target) / t; Euler integration to t=0 lands on the target"""
    video_target: np.ndarray
    action_target: np.ndarray
    concurrency_safe: bool = True

    def eval(self, state: LatentState, condition=None):
        return ((state.video - self.video_target) / state.t_video,
                (state.action - self.action_target) / state.t_action)

    def context(self, state: LatentState, condition=None):
        return state.video.copy()

    def eval_action(self, state: LatentState, context, condition=None) -> np.ndarray:
        return (state.action - self.action_target) / state.t_action


def exact_endpoint(field: LinearField, x0, duration: float):
    """Closed-form solution of dx/dt = a x + b after duration"""
    x0 = np.asarray(x0, dtype=np.float64)
    if field.a == 0.0:
        out = x0 + field.b * duration
    else:
        growth = math.exp(field.a * duration)
        out = growth * x0 + math.expm1(field.a * duration) * field.b / field.a
    return float(out) if np.ndim(out) == 0 else out


# Latency
class LatencyEstimate(NamedTuple):
    latency_s: float
    frequency_hz: float


class LatencyPreset(NamedTuple):
    model: LatencyModel
    reported_latency: Optional[float]
    reported_frequency: Optional[float]
    reported_speedup: Optional[float]
    reported_per_step: bool


def latency_of(model: LatencyModel) -> LatencyEstimate:
    """
    End-to-end latency of one call.

    joint: evals x per_step + overhead, evals defaulting to steps
    v2a:   prefix x per_step + suffix evals x suffix per-step + overhead
    """
    if model.mode == LatencyMode.V2A:
        suffix = model.suffix_evals if model.suffix_evals is not None else model.steps - model.joint_prefix
        ms = model.joint_prefix * model.per_step_ms + suffix * model.v2a_suffix_per_step_ms
    else:
        evals = model.effective_evals if model.effective_evals is not None else model.steps
        ms = evals * model.per_step_ms
    latency = (ms + model.fixed_overhead_ms) / 1000.0
    return LatencyEstimate(latency, 1.0 / latency if latency > 0 else math.inf)


def sample_delay(model: LatencyModel, rng: np.random.Generator) -> float:
    """Nominal latency plus gaussian jitter and occasional spikes, in seconds"""
    delay = latency_of(model).latency_s
    if model.jitter_ms > 0:
        delay += rng.normal(0.0, model.jitter_ms) / 1000.0
    if model.spike_prob > 0 and rng.random() < model.spike_prob:
        delay += model.spike_ms / 1000.0
    return max(0.0, delay)


def worst_case_delay(model: LatencyModel) -> float:
    """Upper bound used for the startup horizon check: nominal + 3 sigma + spike"""
    delay = latency_of(model).latency_s + 3.0 * model.jitter_ms / 1000.0
    if model.spike_prob > 0:
        delay += model.spike_ms / 1000.0
    return delay


def _optional_float(section: configparser.SectionProxy, key: str) -> Optional[float]:
    raw = section.get(key, fallback=None)
    if raw is None or raw.strip().lower() in ("", "none", "--"):
        return None
    return float(raw)


def load_latency_presets(path: Optional[Union[str, Path]] = None) -> List[LatencyPreset]:
    """One LatencyModel per section, in file order"""
    path = Path(path) if path is not None else TABLE3_PRESETS
    if not path.exists():
        raise ConfigError(f"preset file not found: {path}")

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e

    reported_keys = ("reported_latency", "reported_frequency", "reported_speedup", "reported_per_step")
    presets = []
    for name in parser.sections():
        section = parser[name]
        fields = {k: v for k, v in section.items() if k not in reported_keys}
        fields.setdefault("name", name)
        try:
            model = LatencyModel.model_validate(fields)
        except ValidationError as e:
            raise ConfigError(f"{path} [{name}]: {e}") from e
        presets.append(LatencyPreset(
            model=model,
            reported_latency=_optional_float(section, "reported_latency"),
            reported_frequency=_optional_float(section, "reported_frequency"),
            reported_speedup=_optional_float(section, "reported_speedup"),
            reported_per_step=section.getboolean("reported_per_step", fallback=True),
        ))
    logger.debug("Loaded %d latency presets from %s", len(presets), path)
    return presets


# Plant
@dataclass(frozen=True, eq=False)
class ToyPlant:
    """Double integrator per action dimension"""
    position: np.ndarray
    velocity: np.ndarray
    control_period: float

    def __post_init__(self):
        if not self.control_period > 0:
            raise InputValidationError(f"control period must be positive, got {self.control_period}")
        object.__setattr__(self, "position", np.array(self.position, dtype=np.float64))
        object.__setattr__(self, "velocity", np.array(self.velocity, dtype=np.float64))

    @classmethod
    def at_rest(cls, position, control_period: float) -> "ToyPlant":
        position = np.asarray(position, dtype=np.float64)
        return cls(position, np.zeros_like(position), control_period)


def plant_step(plant: ToyPlant, action) -> ToyPlant:
    """velocity += action dt; position += velocity dt"""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != plant.position.shape:
        raise InputValidationError(f"action shape {action.shape} != plant shape {plant.position.shape}")
    dt = plant.control_period
    velocity = plant.velocity + action * dt
    position = plant.position + velocity * dt
    if not (np.all(np.isfinite(position)) and np.all(np.isfinite(velocity))):
        raise InputValidationError("plant state became non-finite")
    return ToyPlant(position, velocity, dt)


def pd_control(plant: ToyPlant, target, kp: float, kd: float) -> np.ndarray:
    return kp * (np.asarray(target) - plant.position) - kd * plant.velocity


# Policy
def goal_trajectory(t) -> np.ndarray:
    """10-dim relative-action reference: position sinusoids, yaw wobble as 6D, gripper ramp"""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    out = np.zeros((t.shape[0], ACTION_DIM))
    out[:, 0] = 0.10 * np.sin(0.8 * t)
    out[:, 1] = 0.05 * np.sin(1.3 * t + 0.5)
    out[:, 2] = 0.03 * (1.0 - np.cos(0.6 * t))
    yaw = 0.4 * np.sin(0.5 * t)
    out[:, 3] = np.cos(yaw)
    out[:, 4] = np.sin(yaw)
    out[:, 6] = -np.sin(yaw)
    out[:, 7] = np.cos(yaw)
    out[:, 9] = np.tanh(np.sin(0.3 * t) * 2.0)
    return out


class ToyPolicy:
    def __init__(self, policy: PolicyConfig, sampler: SamplerConfig, horizon: int, model_hz: float, seed: int = 0):
        """Goal-conditioned chunk generator sampled through the flow-matching runtime"""
        self.policy = policy
        self.sampler = sampler
        self.horizon = horizon
        self.model_hz = model_hz
        self.seed = seed

    def _targets(self, observation: np.ndarray, time: float, rng: np.random.Generator) -> np.ndarray:
        cfg = self.policy
        steps = np.arange(self.horizon)
        goal = goal_trajectory(time + steps / self.model_hz)
        mode = rng.normal(0.0, cfg.mode_noise, ACTION_DIM)
        jitter = rng.normal(0.0, cfg.action_jitter, (self.horizon, ACTION_DIM))
        pull = cfg.observation_pull * (observation - goal[0])
        decay = np.exp(-steps / cfg.pull_decay_steps)[:, None]
        return goal + mode[None, :] + jitter + decay * pull[None, :]

    def generate(self, observation, time: float, request: int, prior=None) -> ActionChunk:
        """
        Chunk for an observation captured at `time`.

        Randomness depends only on (seed, request) so replays are exact.
        """
        observation = np.asarray(observation, dtype=np.float64).reshape(ACTION_DIM)
        rng = np.random.default_rng([self.seed, request])
        target = self._targets(observation, time, rng)

        video_dim = self.policy.video_frames * self.policy.video_dim
        video_target = np.sin(time + np.arange(video_dim))
        field = GoalField(video_target, target.reshape(-1))
        init = noise_state(self.sampler, video_dim, target.size, rng)

        if self.sampler.joint_prefix_N < self.sampler.total_steps:
            result = sample_v2a(field, init, self.sampler, prior=prior)
        else:
            result = sample_joint(field, init, self.sampler, prior=prior)
        return ActionChunk(result.state.action.reshape(self.horizon, ACTION_DIM), self.model_hz)
