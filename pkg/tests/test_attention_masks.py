import math

import numpy as np
import pytest
from scipy.special import softmax

from wam_runtime.attention_masks import (
    ACTION,
    COND,
    VIDEO,
    AttentionMask,
    apply_rope3d,
    build_mask,
    decoupled_mask,
    default_view_offsets,
    hbridge_schedule,
    layer_masks,
    mask_summary,
    masked_attention_reference,
    rope3d_angles,
    rope3d_assign,
    rope3d_position,
    token_index,
)
from wam_runtime.errors import InputValidationError
from wam_runtime.records import mask_to_bitmap, read_mask
from wam_runtime.schemas import MaskKind, TokenLayout


def _random_layout(rng):
    frames = int(rng.integers(1, 4))
    cuts = sorted(set(int(c) for c in rng.integers(1, frames + 1, size=frames)) | {frames})
    return TokenLayout(
        n_text=int(rng.integers(0, 3)),
        n_cond=int(rng.integers(0, 3)),
        frames_K=frames,
        views_V=int(rng.integers(1, 3)),
        grid_h=int(rng.integers(1, 3)),
        grid_w=int(rng.integers(1, 3)),
        actions_per_frame_Sa=int(rng.integers(1, 3)),
        chunking=[0] + cuts,
    )


def _qkv(rng, n, dim=8):
    return rng.normal(size=(n, dim)), rng.normal(size=(n, dim)), rng.normal(size=(n, dim))


def _allowed_sets(mask):
    return [set(np.flatnonzero(row)) for row in mask.allowed]


def test_v2a_small_layout_matches_golden(small_layout, golden_dir):
    mask = build_mask(MaskKind.NONAR_V2A, small_layout)
    expected = read_mask(golden_dir / "mask_v2a_small.txt")
    np.testing.assert_array_equal(mask.allowed, expected.allowed)
    assert mask_to_bitmap(mask) == (golden_dir / "mask_v2a_small.txt").read_text()


def test_ar_small_layout_enumeration(small_layout):
    mask = build_mask(MaskKind.AR, small_layout)
    context = {0, 1, 2}
    expected = (
        [context] * 3
        + [context | {3, 4}] * 2
        + [context | {3, 4, 5, 6}] * 2
        + [context | {7, 8}] * 2
        + [context | {3, 4, 9, 10}] * 2
        + [context | {7, 8, 11, 12}] * 2
        + [context | {3, 4, 9, 10, 13, 14}] * 2
    )
    assert mask.size == 15
    assert _allowed_sets(mask) == expected


def test_ar_without_v2a_lets_noisy_video_see_same_chunk_actions(small_layout):
    mask = build_mask(MaskKind.AR, small_layout, ar_v2a=False)
    assert mask.allowed[7, 11] and mask.allowed[9, 13]
    assert not mask.allowed[7, 13]


def test_ar_requires_chunking():
    with pytest.raises(InputValidationError):
        build_mask(MaskKind.AR, TokenLayout(frames_K=2))


def test_stage_masks(small_layout):
    stage1 = build_mask(MaskKind.STAGE1, small_layout)
    seg = token_index(small_layout).segment
    action = seg == ACTION
    assert not stage1.allowed[action].any()
    assert not stage1.allowed[:, action].any()
    assert stage1.allowed[np.ix_(~action, ~action)].all()

    stage2 = build_mask(MaskKind.STAGE2, small_layout)
    assert stage2.allowed.all()
    assert stage2.density() == 1.0


def test_v2a_perturbation_invariance(rng):
    for _ in range(100):
        layout = _random_layout(rng)
        mask = build_mask(MaskKind.NONAR_V2A, layout)
        seg = token_index(layout).segment
        action = seg == ACTION
        video = (seg == COND) | (seg == VIDEO)
        q, k, v = _qkv(rng, mask.size)

        base = masked_attention_reference(q, k, v, mask).outputs
        q2, k2, v2 = q.copy(), k.copy(), v.copy()
        for arr in (q2, k2, v2):
            arr[action] += rng.normal(size=arr[action].shape) * 10.0
        perturbed = masked_attention_reference(q2, k2, v2, mask).outputs

        assert np.array_equal(base[video], perturbed[video])


def test_ar_block_causality(rng):
    for _ in range(100):
        layout = _random_layout(rng)
        mask = build_mask(MaskKind.AR, layout)
        index = token_index(layout, autoregressive=True)
        target = int(rng.integers(0, layout.n_chunks))
        later = index.chunk >= target
        earlier = (index.chunk >= 0) & (index.chunk < target)
        q, k, v = _qkv(rng, mask.size)

        base = masked_attention_reference(q, k, v, mask).outputs
        q2, k2, v2 = q.copy(), k.copy(), v.copy()
        for arr in (q2, k2, v2):
            arr[later] += rng.normal(size=arr[later].shape) * 10.0
        perturbed = masked_attention_reference(q2, k2, v2, mask).outputs

        context = index.chunk < 0
        assert np.array_equal(base[earlier | context], perturbed[earlier | context])


def test_decoupled_mask_blocks_both_directions(small_layout):
    mask = decoupled_mask(small_layout)
    seg = token_index(small_layout).segment
    video = seg == VIDEO
    action = seg == ACTION
    assert not mask.allowed[np.ix_(video, action)].any()
    assert not mask.allowed[np.ix_(action, video)].any()
    assert mask.allowed[:, :3].all()


def test_decoupled_mask_respects_base(small_layout):
    base = build_mask(MaskKind.AR, small_layout)
    mask = decoupled_mask(small_layout, base)
    assert mask.autoregressive
    assert not np.any(mask.allowed & ~base.allowed)


def test_hbridge_quarters():
    for depth in range(4, 129):
        schedule = hbridge_schedule(depth)
        edge = math.ceil(depth / 4)
        assert schedule.depth == depth
        assert schedule.joint_layers == depth - 2 * edge
        assert not any(schedule.joint_flags[:edge])
        assert not any(schedule.joint_flags[depth - edge:])
        assert all(schedule.joint_flags[edge:depth - edge])
    assert hbridge_schedule(8).joint_flags == (False, False, True, True, True, True, False, False)
    with pytest.raises(InputValidationError):
        hbridge_schedule(3)


def test_layer_masks_follow_schedule(small_layout):
    schedule = hbridge_schedule(8)
    masks = layer_masks(schedule, small_layout, MaskKind.NONAR_V2A)
    joint = build_mask(MaskKind.NONAR_V2A, small_layout)
    assert len(masks) == 8
    for flag, mask in zip(schedule.joint_flags, masks):
        if flag:
            np.testing.assert_array_equal(mask.allowed, joint.allowed)
        else:
            assert mask.density() < joint.density()


def test_masked_attention_matches_dense_softmax(rng):
    q, k, v = _qkv(rng, 6)
    full = AttentionMask(np.ones((6, 6), dtype=bool))
    out = masked_attention_reference(q, k, v, full)
    expected = softmax(q @ k.T / math.sqrt(8), axis=1) @ v
    np.testing.assert_allclose(out.outputs, expected, atol=1e-12)
    assert not out.empty_rows.any()


def test_empty_row_outputs_zeros(rng):
    q, k, v = _qkv(rng, 3)
    allowed = np.ones((3, 3), dtype=bool)
    allowed[1] = False
    out = masked_attention_reference(q, k, v, allowed)
    np.testing.assert_array_equal(out.outputs[1], 0.0)
    assert list(out.empty_rows) == [False, True, False]


def test_mask_must_be_square():
    with pytest.raises(InputValidationError):
        AttentionMask(np.ones((2, 3), dtype=bool))


def test_rope_positions_share_time_and_offset_views():
    layout = TokenLayout(frames_K=2, views_V=2, grid_h=2, grid_w=3)
    positions = rope3d_assign(layout)
    assert positions.shape == (layout.video_tokens, 3)
    assert default_view_offsets(layout) == [(0, 0), (0, 6)]

    per_frame = layout.views_V * layout.tokens_per_frame_per_view
    first_view = positions[:6]
    second_view = positions[6:12]
    np.testing.assert_array_equal(first_view[:, 0], second_view[:, 0])
    np.testing.assert_array_equal(second_view[:, 2] - first_view[:, 2], 6)
    assert rope3d_position(positions, per_frame) == (1, 0, 0)


@pytest.mark.parametrize("offsets", [None, [(0, 0), (3, 0), (6, 0)], [(0, 0), (0, 3), (5, 1)]])
def test_three_views_use_disjoint_spatial_positions(offsets):
    layout = TokenLayout(frames_K=2, views_V=3, grid_h=2, grid_w=3)
    positions = rope3d_assign(layout, offsets)
    per_view = layout.tokens_per_frame_per_view

    for frame in range(layout.frames_K):
        start = frame * layout.views_V * per_view
        spatial = [
            {(int(p[1]), int(p[2])) for p in positions[start + v * per_view:start + (v + 1) * per_view]}
            for v in range(layout.views_V)
        ]
        assert all(len(s) == per_view for s in spatial)
        for a in range(layout.views_V):
            for b in range(a + 1, layout.views_V):
                assert not spatial[a] & spatial[b]
        assert {int(p[0]) for p in positions[start:start + layout.views_V * per_view]} == {frame}


def test_rope_rejects_overlapping_views():
    layout = TokenLayout(frames_K=1, views_V=2, grid_h=2, grid_w=3)
    with pytest.raises(InputValidationError):
        rope3d_assign(layout, [(0, 0), (1, 2)])
    with pytest.raises(InputValidationError):
        rope3d_assign(layout, [(0, 0)])


def test_rope_scores_depend_only_on_relative_position(rng):
    q = rng.normal(size=(1, 12))
    k = rng.normal(size=(1, 12))
    p1, p2 = np.array([[3, 1, 4]]), np.array([[1, 5, 2]])
    shift = np.array([[7, 2, 9]])

    score = np.sum(apply_rope3d(q, p1) * apply_rope3d(k, p2))
    shifted = np.sum(apply_rope3d(q, p1 + shift) * apply_rope3d(k, p2 + shift))
    assert score == pytest.approx(shifted, abs=1e-10)


def test_rope_angles_split_head_dim_across_axes():
    theta = rope3d_angles([[2, 0, 0], [0, 3, 5]], head_dim=16)
    assert theta.shape == (2, 8)
    # temporal pairs first (4), then h (2) and w (2)
    np.testing.assert_allclose(theta[0, :4], 2.0 / 10000.0 ** (np.arange(0, 8, 2) / 8))
    np.testing.assert_array_equal(theta[0, 4:], 0.0)
    np.testing.assert_array_equal(theta[1, :4], 0.0)
    np.testing.assert_allclose(theta[1, 4:6], [3.0, 3.0 / 100.0])
    np.testing.assert_allclose(theta[1, 6:], [5.0, 5.0 / 100.0])


def test_rope_preserves_norm(rng):
    x = rng.normal(size=(5, 12))
    positions = rng.integers(0, 10, size=(5, 3))
    np.testing.assert_allclose(np.linalg.norm(apply_rope3d(x, positions), axis=1),
                               np.linalg.norm(x, axis=1), atol=1e-12)
    with pytest.raises(InputValidationError):
        apply_rope3d(rng.normal(size=(5, 7)), positions)


def test_mask_summary_block_densities(small_layout):
    table = mask_summary(build_mask(MaskKind.NONAR_V2A, small_layout), small_layout)
    assert table.loc["video", "action"] == 0.0
    assert table.loc["action", "video"] == 1.0
    assert table.loc["text", "action"] == 1.0
