"""
Attention mask construction
Boolean attendability matrices for every training stage and post-training
mode, the H-bridge layer schedule, multiview 3D RoPE positions and a small
reference attention kernel used to check mask semantics.

Token order (non-AR): text, cond, video (frame, view, row, col), action (frame, slot).
Token order (AR):     text, cond, clean video, noisy video, noisy action.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import softmax

from .errors import InputValidationError
from .schemas import MaskKind, TokenLayout

logger = logging.getLogger(__name__)

# Token segment codes
TEXT = 0
COND = 1
VIDEO = 2
CLEAN_VIDEO = 3
ACTION = 4

SEGMENT_NAMES = {TEXT: "text", COND: "cond", VIDEO: "video", CLEAN_VIDEO: "clean_video", ACTION: "action"}


class TokenIndex(NamedTuple):
    segment: np.ndarray  # segment code per token
    frame: np.ndarray  # frame index per token, -1 for text/cond
    chunk: np.ndarray  # chunk index per token, -1 for text/cond


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """allowed[q, k] is True when query q may attend to key k"""
    allowed: np.ndarray
    kind: Optional[MaskKind] = None
    autoregressive: bool = False

    def __post_init__(self):
        allowed = np.array(self.allowed, dtype=bool)
        if allowed.ndim != 2 or allowed.shape[0] != allowed.shape[1]:
            raise InputValidationError(f"attention mask must be square, got shape {allowed.shape}")
        allowed.setflags(write=False)
        object.__setattr__(self, "allowed", allowed)

    @property
    def size(self) -> int:
        return self.allowed.shape[0]

    def density(self) -> float:
        return float(self.allowed.mean()) if self.allowed.size else 0.0


@dataclass(frozen=True)
class LayerSchedule:
    depth: int
    joint_flags: Tuple[bool, ...]

    @property
    def joint_layers(self) -> int:
        return sum(self.joint_flags)


class AttentionOutput(NamedTuple):
    outputs: np.ndarray
    empty_rows: np.ndarray


class Rope3DPosition(NamedTuple):
    temporal: int
    spatial_h: int
    spatial_w: int


# Token layout
def token_index(layout: TokenLayout, autoregressive: bool = False) -> TokenIndex:
    """Segment, frame and chunk of every token in sequence order"""
    per_frame_video = layout.views_V * layout.tokens_per_frame_per_view
    video_frames = np.repeat(np.arange(layout.frames_K), per_frame_video)
    action_frames = np.repeat(np.arange(layout.frames_K), layout.actions_per_frame_Sa)

    blocks = [(TEXT, np.full(layout.n_text, -1)), (COND, np.full(layout.n_cond, -1))]
    if autoregressive:
        blocks.append((CLEAN_VIDEO, video_frames))
    blocks += [(VIDEO, video_frames), (ACTION, action_frames)]

    segment = np.concatenate([np.full(frames.shape[0], code) for code, frames in blocks]).astype(int)
    frame = np.concatenate([frames for _, frames in blocks]).astype(int)

    chunk = np.full(frame.shape[0], -1)
    if layout.chunking is not None:
        bounds = np.asarray(layout.chunking)
        has_frame = frame >= 0
        chunk[has_frame] = np.searchsorted(bounds, frame[has_frame], side="right") - 1
    return TokenIndex(segment, frame, chunk)


def _is_video(segment: np.ndarray) -> np.ndarray:
    return (segment == COND) | (segment == VIDEO) | (segment == CLEAN_VIDEO)


# Masks
def _ar_mask(index: TokenIndex, ar_v2a: bool) -> np.ndarray:
    seg_q, seg_k = index.segment[:, None], index.segment[None, :]
    chunk_q, chunk_k = index.chunk[:, None], index.chunk[None, :]
    context_k = (seg_k == TEXT) | (seg_k == COND)

    context_q = (seg_q == TEXT) | (seg_q == COND)
    clean_q = seg_q == CLEAN_VIDEO
    noisy_q = seg_q == VIDEO
    action_q = seg_q == ACTION

    past_clean = (seg_k == CLEAN_VIDEO) & (chunk_k < chunk_q)
    same_chunk = chunk_k == chunk_q

    allowed = context_q & context_k
    allowed |= clean_q & (context_k | ((seg_k == CLEAN_VIDEO) & (chunk_k <= chunk_q)))

    noisy_keys = context_k | past_clean | ((seg_k == VIDEO) & same_chunk)
    if not ar_v2a:
        noisy_keys = noisy_keys | ((seg_k == ACTION) & same_chunk)
    allowed |= noisy_q & noisy_keys

    allowed |= action_q & (context_k | past_clean | (((seg_k == VIDEO) | (seg_k == ACTION)) & same_chunk))
    return allowed


def build_mask(kind: MaskKind, layout: TokenLayout, ar_v2a: bool = True) -> AttentionMask:
    """
    Mask for one training stage or post-training mode.

    ar_v2a keeps noisy video from attending to noisy action inside an AR chunk.
    """
    kind = MaskKind(kind)
    autoregressive = kind == MaskKind.AR
    if autoregressive and layout.chunking is None:
        raise InputValidationError("AR mask requires a chunked layout")

    index = token_index(layout, autoregressive)
    seg = index.segment
    n = seg.shape[0]

    if kind == MaskKind.STAGE1:
        active = seg != ACTION
        allowed = active[:, None] & active[None, :]
    elif kind == MaskKind.STAGE2:
        allowed = np.ones((n, n), dtype=bool)
    elif kind == MaskKind.NONAR_V2A:
        allowed = ~(_is_video(seg)[:, None] & (seg == ACTION)[None, :])
    else:
        allowed = _ar_mask(index, ar_v2a)
    return AttentionMask(allowed, kind, autoregressive)


def decoupled_mask(layout: TokenLayout, base: Optional[AttentionMask] = None) -> AttentionMask:
    """
    Video and action tokens do not attend to each other in either direction.

    base restricts the result further; text and cond stay visible to both modalities.
    """
    autoregressive = bool(base is not None and base.autoregressive)
    seg = token_index(layout, autoregressive).segment
    video_body = (seg == VIDEO) | (seg == CLEAN_VIDEO)
    action = seg == ACTION

    cross = (_is_video(seg)[:, None] & action[None, :]) | (action[:, None] & video_body[None, :])
    allowed = ~cross
    if base is not None:
        if base.size != seg.shape[0]:
            raise InputValidationError(f"base mask size {base.size} does not match layout ({seg.shape[0]})")
        allowed &= base.allowed
    return AttentionMask(allowed, base.kind if base is not None else None, autoregressive)


def hbridge_schedule(depth: int) -> LayerSchedule:
    """Bottom and top ceil(depth/4) layers decoupled, the middle block joint"""
    if depth < 4:
        raise InputValidationError(f"depth must be >= 4, got {depth}")
    edge = math.ceil(depth / 4)
    flags = tuple(edge <= i < depth - edge for i in range(depth))
    return LayerSchedule(depth, flags)


def layer_masks(schedule: LayerSchedule, layout: TokenLayout, kind: MaskKind) -> List[AttentionMask]:
    """Mode mask on joint layers, its decoupled restriction elsewhere"""
    joint = build_mask(kind, layout)
    decoupled = decoupled_mask(layout, base=joint)
    return [joint if flag else decoupled for flag in schedule.joint_flags]


# Multiview 3D RoPE
def default_view_offsets(layout: TokenLayout) -> List[Tuple[int, int]]:
    """Views side by side along width with a one-view gap"""
    return [(0, 2 * v * layout.grid_w) for v in range(layout.views_V)]


def rope3d_assign(layout: TokenLayout, view_offsets: Optional[Sequence[Tuple[int, int]]] = None) -> np.ndarray:
    """
    (temporal, h, w) position for every video token in sequence order.

    Views are shifted only along the spatial axes; the temporal index is the frame.
    """
    offsets = list(view_offsets) if view_offsets is not None else default_view_offsets(layout)
    if len(offsets) != layout.views_V:
        raise InputValidationError(f"expected {layout.views_V} view offsets, got {len(offsets)}")

    gh, gw = layout.grid_h, layout.grid_w
    for a in range(len(offsets)):
        for b in range(a + 1, len(offsets)):
            (ha, wa), (hb, wb) = offsets[a], offsets[b]
            if ha < hb + gh and hb < ha + gh and wa < wb + gw and wb < wa + gw:
                raise InputValidationError(f"spatial boxes of views {a} and {b} overlap")
    if any(h < 0 or w < 0 for h, w in offsets):
        raise InputValidationError("view offsets must be nonnegative")

    f, v, r, c = np.meshgrid(
        np.arange(layout.frames_K), np.arange(layout.views_V), np.arange(gh), np.arange(gw), indexing="ij"
    )
    off = np.asarray(offsets, dtype=int).reshape(-1, 2)
    positions = np.stack([f, r + off[v, 0], c + off[v, 1]], axis=-1)
    return positions.reshape(-1, 3)


def rope3d_position(positions: np.ndarray, token: int) -> Rope3DPosition:
    t, h, w = (int(x) for x in positions[token])
    return Rope3DPosition(t, h, w)


def _axis_dims(head_dim: int) -> Tuple[int, int, int]:
    if head_dim < 6 or head_dim % 2:
        raise InputValidationError(f"head_dim must be even and >= 6, got {head_dim}")
    dim_hw = 2 * (head_dim // 6)
    return head_dim - 2 * dim_hw, dim_hw, dim_hw


def rope3d_angles(positions, head_dim: int, base: float = 10000.0) -> np.ndarray:
    """Rotation angle per (token, pair); head_dim split across t, h, w, temporal gets the remainder"""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    angles = []
    for axis, dim in enumerate(_axis_dims(head_dim)):
        freqs = 1.0 / (base ** (np.arange(0, dim, 2) / dim))
        angles.append(positions[:, axis, None] * freqs[None, :])
    return np.concatenate(angles, axis=1)


def apply_rope3d(x, positions, base: float = 10000.0) -> np.ndarray:
    """Rotate adjacent channel pairs of x (n, head_dim) by their 3D angles"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != np.asarray(positions).reshape(-1, 3).shape[0]:
        raise InputValidationError(f"x must be (n_tokens, head_dim), got {x.shape}")
    theta = rope3d_angles(positions, x.shape[1], base)
    cos, sin = np.cos(theta), np.sin(theta)
    pairs = x.reshape(x.shape[0], -1, 2)
    x0, x1 = pairs[..., 0], pairs[..., 1]
    out = np.stack([x0 * cos - x1 * sin, x0 * sin + x1 * cos], axis=-1)
    return out.reshape(x.shape)


# Reference kernel
def masked_attention_reference(queries, keys, values, mask) -> AttentionOutput:
    """Softmax over allowed keys only; a query with no allowed key outputs zeros"""
    q = np.asarray(queries, dtype=np.float64)
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    allowed = mask.allowed if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=bool)

    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise InputValidationError("queries, keys and values must be 2-D")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise InputValidationError(f"shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if allowed.shape != (q.shape[0], k.shape[0]):
        raise InputValidationError(f"mask shape {allowed.shape} != ({q.shape[0]}, {k.shape[0]})")

    scale = 1.0 / math.sqrt(q.shape[1])
    out = np.zeros((q.shape[0], v.shape[1]))
    empty = np.zeros(q.shape[0], dtype=bool)
    for i in range(q.shape[0]):
        idx = np.flatnonzero(allowed[i])
        if idx.size == 0:
            empty[i] = True
            continue
        weights = softmax(k[idx] @ q[i] * scale)
        out[i] = weights @ v[idx]
    if empty.any():
        logger.debug("%d queries have no allowed keys", int(empty.sum()))
    return AttentionOutput(out, empty)


def mask_summary(mask: AttentionMask, layout: TokenLayout) -> pd.DataFrame:
    """Allowed-pair density per (query segment, key segment) block"""
    seg = token_index(layout, mask.autoregressive).segment
    if seg.shape[0] != mask.size:
        raise InputValidationError(f"mask size {mask.size} does not match layout ({seg.shape[0]})")
    present = [code for code in SEGMENT_NAMES if np.any(seg == code)]
    names = [SEGMENT_NAMES[code] for code in present]
    table = pd.DataFrame(index=pd.Index(names, name="query"), columns=pd.Index(names, name="key"), dtype=float)
    for qc in present:
        for kc in present:
            block = mask.allowed[np.ix_(seg == qc, seg == kc)]
            table.loc[SEGMENT_NAMES[qc], SEGMENT_NAMES[kc]] = float(block.mean())
    return table
