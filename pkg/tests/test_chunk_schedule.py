import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

from wam_runtime.chunk_schedule import (
    DelayQueue,
    ExecutionState,
    build_action_prior,
    decay_g,
    estimate_delay,
    fuse_chunks,
    fusion_weights,
    plan_fusion,
    resolve_fusion_end,
    steps_of_delay,
)
from wam_runtime.errors import InputValidationError
from wam_runtime.schemas import FusionConfig
from wam_runtime.signal_pipeline import ActionChunk


def _chunk(values, horizon=16):
    return ActionChunk(np.full((horizon, 10), values, dtype=float), 10.0)


def _decay_reference(rho):
    getcontext().prec = 50
    r = Decimal(repr(rho))
    return float(r * (r.exp() - 1) / (Decimal(1).exp() - 1))


def test_decay_matches_high_precision():
    grid = np.linspace(0.0, 1.0, 1000)
    values = decay_g(grid)
    reference = np.array([_decay_reference(float(r)) for r in grid])
    np.testing.assert_allclose(values, reference, rtol=0, atol=1e-12)


def test_decay_endpoints_and_monotonicity():
    assert decay_g(0.0) == 0.0
    assert decay_g(1.0) == 1.0
    grid = np.linspace(0, 1, 501)
    assert np.all(np.diff(decay_g(grid)) > 0)


@pytest.mark.parametrize("rho", [-0.1, 1.5, math.nan])
def test_decay_rejects_out_of_range(rho):
    with pytest.raises(InputValidationError):
        decay_g(rho)


def test_steps_of_delay_rounds_up():
    assert steps_of_delay(0.0, 0.1) == 0
    assert steps_of_delay(0.1, 0.1) == 1
    assert steps_of_delay(0.3, 0.1) == 3
    assert steps_of_delay(0.1001, 0.1) == 2
    with pytest.raises(InputValidationError):
        steps_of_delay(-0.01, 0.1)
    with pytest.raises(InputValidationError):
        steps_of_delay(0.1, 0.0)


def test_weights_example_values():
    w = fusion_weights(2, 6, 8)
    assert list(w[:2]) == [1.0, 1.0]
    assert w[2] == 1.0
    assert list(w[6:]) == [0.0, 0.0]
    for i in range(2, 6):
        assert w[i] == pytest.approx(1.0 - decay_g((i - 2) / 4))


def test_weights_properties_random_triples(rng):
    for _ in range(10_000):
        horizon = int(rng.integers(1, 64))
        L = int(rng.integers(0, horizon + 1))
        d = int(rng.integers(0, L + 1))
        w = fusion_weights(d, L, horizon)

        assert w.shape == (horizon,)
        assert np.all(w[:d] == 1.0)
        assert np.all(w[L:] == 0.0)
        assert np.all((w >= 0.0) & (w <= 1.0))
        assert np.all(np.diff(w) <= 0.0)
        if L > d:
            assert w[d] == 1.0


def test_longer_delay_never_lowers_a_weight(rng):
    for _ in range(2000):
        horizon = int(rng.integers(1, 64))
        L = int(rng.integers(0, horizon + 1))
        d1, d2 = sorted(int(x) for x in rng.integers(0, L + 1, size=2))
        assert np.all(fusion_weights(d2, L, horizon) >= fusion_weights(d1, L, horizon) - 1e-15)


def test_zero_weight_fusion_is_idempotent(rng):
    for _ in range(200):
        remain = rng.normal(size=(int(rng.integers(0, 17)), 10))
        fresh = ActionChunk(rng.normal(size=(16, 10)), 10.0)
        once = fuse_chunks(remain, fresh, np.zeros(16))
        twice = fuse_chunks(remain, once, np.zeros(16))
        np.testing.assert_array_equal(once.actions, fresh.actions)
        np.testing.assert_array_equal(twice.actions, once.actions)


def test_weights_reject_bad_order():
    with pytest.raises(InputValidationError):
        fusion_weights(5, 3, 8)
    with pytest.raises(InputValidationError):
        fusion_weights(0, 9, 8)


def test_zero_delay_zero_window_is_fresh_only():
    cfg = FusionConfig(fusion_window=0)
    state = ExecutionState(_chunk(1.0), 0)
    plan = plan_fusion(state, _chunk(2.0), 0, cfg)
    assert plan.L == 0
    np.testing.assert_array_equal(plan.weights, 0.0)
    np.testing.assert_array_equal(plan.chunk.actions, 2.0)


def test_full_frozen_prefix_copies_old_chunk():
    old = ActionChunk(np.arange(160, dtype=float).reshape(16, 10), 10.0)
    plan = plan_fusion(ExecutionState(old, 0), _chunk(-1.0), 16, FusionConfig())
    np.testing.assert_array_equal(plan.chunk.actions, old.actions)


def test_frozen_prefix_is_bit_equal_to_aligned_old_actions(rng):
    old = ActionChunk(rng.normal(size=(16, 10)), 10.0)
    fresh = ActionChunk(rng.normal(size=(16, 10)), 10.0)
    plan = plan_fusion(ExecutionState(old, 5), fresh, 3, FusionConfig())
    np.testing.assert_array_equal(plan.chunk.actions[:3], old.actions[5:8])
    assert plan.s == 5
    assert plan.overlap == 11


def test_weights_forced_to_zero_beyond_overlap():
    old = _chunk(1.0)
    state = ExecutionState(old, 12)
    plan = plan_fusion(state, _chunk(0.0), 2, FusionConfig(fusion_window=8))
    assert plan.overlap == 4
    np.testing.assert_array_equal(plan.weights[4:], 0.0)
    np.testing.assert_array_equal(plan.chunk.actions[4:], 0.0)


def test_exhausted_chunk_yields_fresh():
    state = ExecutionState(_chunk(1.0), 16)
    assert state.exhausted
    plan = plan_fusion(state, _chunk(3.0), 2, FusionConfig())
    assert plan.overlap == 0
    np.testing.assert_array_equal(plan.chunk.actions, 3.0)


def test_disabled_fusion_returns_fresh_chunk():
    fresh = _chunk(3.0)
    plan = plan_fusion(ExecutionState(_chunk(1.0), 0), fresh, 4, FusionConfig(enabled=False))
    assert plan.chunk is fresh
    assert plan.L == plan.d == 4


def test_fuse_rejects_weight_without_old_action():
    with pytest.raises(InputValidationError):
        fuse_chunks(np.ones((2, 10)), _chunk(0.0, 4), np.array([1.0, 1.0, 0.5, 0.0]))


def test_resolve_fusion_end():
    assert resolve_fusion_end(2, 16, FusionConfig()) == 10
    assert resolve_fusion_end(12, 16, FusionConfig()) == 16
    assert resolve_fusion_end(2, 16, FusionConfig(fusion_end_L=1)) == 2
    assert resolve_fusion_end(2, 16, FusionConfig(fusion_end_L=40)) == 16


def test_delay_queue_is_bounded_and_conservative():
    q = DelayQueue(capacity=3, cold_start_delay=0.2)
    assert estimate_delay(q) == 0.2
    q.extend([0.05, 0.3, 0.1])
    assert q.estimate() == 0.3
    q.extend([0.08, 0.09])
    assert len(q) == 3
    assert q.estimate() == 0.1
    with pytest.raises(InputValidationError):
        q.push(-1.0)


def test_execution_state_advance():
    state = ExecutionState(_chunk(0.0, 4))
    state.advance(3)
    assert state.remaining().shape == (1, 10)
    state.advance(5)
    assert state.exhausted
    with pytest.raises(InputValidationError):
        ExecutionState(_chunk(0.0, 4), 5)


def test_action_prior_pins_frozen_prefix_at_data_time():
    old = ActionChunk(np.arange(160, dtype=float).reshape(16, 10), 10.0)
    prior = build_action_prior(ExecutionState(old, 4), 3, FusionConfig(), 16)
    x = np.zeros(160)
    noise = np.ones(160)

    guided = prior.guide(x, 0.0, noise).reshape(16, 10)
    np.testing.assert_array_equal(guided[:3], old.actions[4:7])
    np.testing.assert_array_equal(guided[12:], 0.0)

    at_noise = prior.guide(x, 1.0, noise).reshape(16, 10)
    np.testing.assert_array_equal(at_noise[:3], 1.0)
