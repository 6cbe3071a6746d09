"""
Flow-matching sampler
Euler integration of the joint video/action latent from noise (t=1) to data
(t=0) with per-modality timeshift, a joint-prefix / action-only-suffix
schedule, the single-modality prediction modes, velocity caching and
classifier-free guidance. Also hosts the training-side helpers: timestep
sampling, conditioning augmentations and the dual-objective loss.
"""
import logging
from dataclasses import dataclass
from typing import Any, List, NamedTuple, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from .chunk_schedule import ActionPrior
from .errors import InputValidationError
from .schemas import CfgTarget, PredictionMode, SamplerConfig

logger = logging.getLogger(__name__)

NORM_EPSILON = 1e-12


@dataclass(frozen=True, eq=False)
class LatentState:
    """Noisy video and action latents with independent timesteps"""
    video: np.ndarray
    action: np.ndarray
    t_video: float = 1.0
    t_action: float = 1.0

    def __post_init__(self):
        for name in ("video", "action"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(arr)):
                raise InputValidationError(f"{name} latent contains non-finite values")
            object.__setattr__(self, name, arr)
        for name in ("t_video", "t_action"):
            t = getattr(self, name)
            if not 0.0 <= t <= 1.0:
                raise InputValidationError(f"{name} must lie in [0, 1], got {t}")


@runtime_checkable
class VelocityField(Protocol):
    """Model interface: joint velocity, frozen visual context, action-only velocity"""
    concurrency_safe: bool

    def eval(self, state: LatentState, condition: Any) -> Tuple[np.ndarray, np.ndarray]:
        ...

    def context(self, state: LatentState, condition: Any) -> Any:
        ...

    def eval_action(self, state: LatentState, context: Any, condition: Any) -> np.ndarray:
        ...


@dataclass
class CacheState:
    """Per-call velocity cache; never shared between inference calls"""
    last_velocity: Optional[np.ndarray] = None
    skips_remaining: int = 0
    eval_count: int = 0
    skipped_count: int = 0
    degenerate_count: int = 0

    def reset(self):
        self.last_velocity = None
        self.skips_remaining = 0


class Similarity(NamedTuple):
    value: float
    degenerate: bool


class SampleResult(NamedTuple):
    state: LatentState
    cache: CacheState
    context_builds: int


# Timesteps
def timeshift_map(t, shift: float):
    """t' = shift t / (1 + (shift - 1) t); fixes 0 and 1"""
    if not shift > 0:
        raise InputValidationError(f"timeshift must be positive, got {shift}")
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InputValidationError(f"t must lie in [0, 1], got {t}")
    out = shift * arr / (1.0 + (shift - 1.0) * arr)
    return float(out) if out.ndim == 0 else out


def timestep_grid(steps: int, shift: float) -> np.ndarray:
    """steps + 1 shifted timesteps from 1 down to 0"""
    if steps < 1:
        raise InputValidationError(f"steps must be >= 1, got {steps}")
    u = 1.0 - np.arange(steps + 1) / steps
    return timeshift_map(u, shift)


def sample_train_timesteps(rng: np.random.Generator, cfg: SamplerConfig, size=None):
    """Independent uniform draws per modality pushed through each modality's timeshift"""
    u_video = rng.random(size)
    u_action = rng.random(size)
    return timeshift_map(u_video, cfg.timeshift_video), timeshift_map(u_action, cfg.timeshift_action)


def rectified_flow_pair(x0, noise, t) -> Tuple[np.ndarray, np.ndarray]:
    """x_t = (1 - t) x0 + t noise with velocity target noise - x0"""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise InputValidationError(f"shape mismatch: {x0.shape} vs {noise.shape}")
    return (1.0 - t) * x0 + t * noise, noise - x0


def noise_state(cfg: SamplerConfig, video_dim: int, action_dim: int,
                rng: Optional[np.random.Generator] = None) -> LatentState:
    """Pure-noise starting latent at t=1"""
    rng = rng or np.random.default_rng(cfg.seed)
    return LatentState(rng.standard_normal(video_dim), rng.standard_normal(action_dim), 1.0, 1.0)


# Cache and guidance
def cosine_similarity(v_t, v_prev) -> Similarity:
    v_t = np.asarray(v_t, dtype=np.float64).reshape(-1)
    v_prev = np.asarray(v_prev, dtype=np.float64).reshape(-1)
    n1 = np.linalg.norm(v_t)
    n2 = np.linalg.norm(v_prev)
    if n1 <= NORM_EPSILON or n2 <= NORM_EPSILON:
        return Similarity(0.0, True)
    value = float(np.dot(v_t, v_prev) / (n1 * n2))
    return Similarity(min(1.0, max(-1.0, value)), False)


def cfg_combine(v_uncond, v_cond, scale: float) -> np.ndarray:
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    v_cond = np.asarray(v_cond, dtype=np.float64)
    if v_uncond.shape != v_cond.shape:
        raise InputValidationError(f"shape mismatch: {v_uncond.shape} vs {v_cond.shape}")
    return v_uncond + scale * (v_cond - v_uncond)


def _guided(target: CfgTarget, modality: CfgTarget) -> bool:
    return target == CfgTarget.BOTH or target == modality


def _velocity(model: VelocityField, state: LatentState, condition, context, cfg: Optional[SamplerConfig]) -> np.ndarray:
    """One real evaluation; joint returns video||action, action-only returns action"""
    scale = cfg.cfg_scale if cfg is not None else 1.0
    target = cfg.cfg_target if cfg is not None else CfgTarget.VIDEO

    if context is None:
        v_video, v_action = model.eval(state, condition)
        v_video = np.asarray(v_video, dtype=np.float64)
        v_action = np.asarray(v_action, dtype=np.float64)
        if scale != 1.0:
            u_video, u_action = model.eval(state, None)
            if _guided(target, CfgTarget.VIDEO):
                v_video = cfg_combine(u_video, v_video, scale)
            if _guided(target, CfgTarget.ACTION):
                v_action = cfg_combine(u_action, v_action, scale)
        return np.concatenate([v_video, v_action])

    v_action = np.asarray(model.eval_action(state, context, condition), dtype=np.float64)
    if scale != 1.0 and _guided(target, CfgTarget.ACTION):
        v_action = cfg_combine(model.eval_action(state, context, None), v_action, scale)
    return v_action


def cached_eval(model: VelocityField, state: LatentState, cache: CacheState, gamma: float, k: int,
                condition=None, context=None, cfg: Optional[SamplerConfig] = None) -> np.ndarray:
    """
    Velocity for this step, reusing the last one while skips remain.

    A real evaluation whose cosine similarity with the previous one exceeds
    gamma schedules k skips.
    """
    if cache.skips_remaining > 0 and cache.last_velocity is not None:
        cache.skips_remaining -= 1
        cache.skipped_count += 1
        return cache.last_velocity

    v = _velocity(model, state, condition, context, cfg)
    expected = state.action.shape[0] + (state.video.shape[0] if context is None else 0)
    if v.shape[0] != expected:
        raise InputValidationError("velocity dimensions do not match the latent state")
    cache.eval_count += 1

    if k > 0 and cache.last_velocity is not None:
        sim = cosine_similarity(v, cache.last_velocity)
        if sim.degenerate:
            cache.degenerate_count += 1
            logger.debug("Zero-norm velocity, cache gate not fired")
        elif sim.value > gamma:
            cache.skips_remaining = k
    cache.last_velocity = v
    return v


# Samplers
def _integrate(model: VelocityField, init: LatentState, cfg: SamplerConfig, condition,
               prefix_steps: int, prior: Optional[ActionPrior]) -> SampleResult:
    steps = cfg.total_steps
    if not 0 <= prefix_steps <= steps:
        raise InputValidationError(f"joint prefix {prefix_steps} outside [0, {steps}]")

    tv = timestep_grid(steps, cfg.timeshift_video)
    ta = timestep_grid(steps, cfg.timeshift_action)
    n_video = init.video.shape[0]
    x_v = init.video.copy()
    x_a = init.action.copy()
    cache = CacheState()
    context = None
    context_builds = 0

    for k in range(steps):
        if k == prefix_steps:
            # video freezes here; context built once and reused by the suffix
            context = model.context(LatentState(x_v, x_a, tv[k], ta[k]), condition)
            context_builds += 1
            cache.reset()

        if context is None:
            state = LatentState(x_v, x_a, tv[k], ta[k])
            v = cached_eval(model, state, cache, cfg.cache_threshold_gamma, cfg.cache_length_k,
                            condition, None, cfg)
            x_v = x_v + (tv[k + 1] - tv[k]) * v[:n_video]
            x_a = x_a + (ta[k + 1] - ta[k]) * v[n_video:]
        else:
            state = LatentState(x_v, x_a, tv[prefix_steps], ta[k])
            v = cached_eval(model, state, cache, cfg.cache_threshold_gamma, cfg.cache_length_k,
                            condition, context, cfg)
            x_a = x_a + (ta[k + 1] - ta[k]) * v

        if prior is not None:
            x_a = prior.guide(x_a, ta[k + 1], init.action)

    t_video_end = tv[steps] if context is None else tv[prefix_steps]
    final = LatentState(x_v, x_a, float(t_video_end), float(ta[steps]))
    return SampleResult(final, cache, context_builds)


def sample_joint(model: VelocityField, init: LatentState, cfg: SamplerConfig, condition=None,
                 prior: Optional[ActionPrior] = None) -> SampleResult:
    """Both modalities denoised together for all steps"""
    return _integrate(model, init, cfg, condition, cfg.total_steps, prior)


def sample_v2a(model: VelocityField, init: LatentState, cfg: SamplerConfig, condition=None,
               prior: Optional[ActionPrior] = None) -> SampleResult:
    """
    Joint prefix of joint_prefix_N steps, then action-only steps against the
    video latent frozen at step N.
    """
    return _integrate(model, init, cfg, condition, cfg.joint_prefix_N, prior)


# predicted modality, and whether the other one is held clean (else left at noise)
MODE_ROLES = {
    PredictionMode.VLA: (CfgTarget.ACTION, False),
    PredictionMode.WM: (CfgTarget.VIDEO, True),
    PredictionMode.IDM: (CfgTarget.ACTION, True),
    PredictionMode.VGM: (CfgTarget.VIDEO, False),
}


def _mode_state(x, held, t: float, t_held: float, predict_video: bool) -> LatentState:
    if predict_video:
        return LatentState(x, held, t, t_held)
    return LatentState(held, x, t_held, t)


def sample_mode(model: VelocityField, init: LatentState, cfg: SamplerConfig, mode: PredictionMode,
                condition=None, clean=None) -> SampleResult:
    """
    Sample one prediction mode of the shared model.

    Only the predicted modality is integrated. WM holds `clean` actions and
    IDM holds `clean` video at t=0; VLA and VGM leave the other modality at
    its init noise, t=1. JOINT is `sample_joint`.
    """
    mode = PredictionMode(mode)
    if mode == PredictionMode.JOINT:
        if clean is not None:
            raise InputValidationError("joint mode takes no clean latent")
        return sample_joint(model, init, cfg, condition)

    target, held_clean = MODE_ROLES[mode]
    predict_video = target == CfgTarget.VIDEO
    held = init.action if predict_video else init.video
    if held_clean:
        if clean is None:
            held_name = "action" if predict_video else "video"
            raise InputValidationError(f"{mode.value} mode needs the clean {held_name} latent")
        clean = np.asarray(clean, dtype=np.float64).reshape(-1)
        if clean.shape != held.shape:
            raise InputValidationError(f"clean latent has shape {clean.shape}, expected {held.shape}")
        held, t_held = clean, 0.0
    else:
        if clean is not None:
            raise InputValidationError(f"{mode.value} mode takes no clean latent")
        t_held = 1.0

    steps = cfg.total_steps
    grid = timestep_grid(steps, cfg.timeshift_video if predict_video else cfg.timeshift_action)
    n_video = init.video.shape[0]
    x = (init.video if predict_video else init.action).copy()
    cache = CacheState()

    for k in range(steps):
        state = _mode_state(x, held, grid[k], t_held, predict_video)
        v = cached_eval(model, state, cache, cfg.cache_threshold_gamma, cfg.cache_length_k,
                        condition, None, cfg)
        x = x + (grid[k + 1] - grid[k]) * (v[:n_video] if predict_video else v[n_video:])

    final = _mode_state(x, held, float(grid[steps]), t_held, predict_video)
    return SampleResult(final, cache, 0)


# Training-side helpers
def noisy_condition_augment(z0, rng: np.random.Generator, p: float = 0.5,
                            low: float = 0.3, high: float = 0.7) -> np.ndarray:
    """With probability p, s z0 + (1 - s) eps with s ~ U[low, high]"""
    if not 0.0 <= p <= 1.0:
        raise InputValidationError(f"p must lie in [0, 1], got {p}")
    z0 = np.asarray(z0, dtype=np.float64)
    if rng.random() >= p:
        return z0.copy()
    s = rng.uniform(low, high)
    eps = rng.standard_normal(z0.shape)
    return s * z0 + (1.0 - s) * eps


def view_dropout(views: Sequence, rng: np.random.Generator, p: float = 0.1) -> List:
    """Primary (first) view always kept; each auxiliary dropped with probability p"""
    if not 0.0 <= p <= 1.0:
        raise InputValidationError(f"p must lie in [0, 1], got {p}")
    views = list(views)
    if not views:
        return []
    keep = rng.random(len(views) - 1) >= p
    return [views[0]] + [v for v, kept in zip(views[1:], keep) if kept]


def flow_loss(pred_v, target_v, pred_a, target_a, lambda_v: float = 1.0, lambda_a: float = 1.0) -> float:
    """lambda_v MSE(video) + lambda_a MSE(action); a zero-weight modality is not evaluated"""
    total = 0.0
    for name, pred, target, weight in (("video", pred_v, target_v, lambda_v),
                                       ("action", pred_a, target_a, lambda_a)):
        if weight == 0.0:
            continue
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if pred.shape != target.shape:
            raise InputValidationError(f"{name} prediction shape {pred.shape} != target {target.shape}")
        if pred.size == 0:
            raise InputValidationError(f"{name} prediction is empty")
        total += weight * float(np.mean((pred - target) ** 2))
    return total
