import numpy as np
import pytest

from wam_runtime.errors import InputValidationError
from wam_runtime.schemas import SavGolConfig, UpsampleKind
from wam_runtime.signal_pipeline import (
    ActionChunk,
    freq_interpolate,
    interpolated_length,
    render_chunk,
    savgol_coefficients,
    smooth_chunk,
    upsample_2x,
)


def _poly_chunk(horizon, degree, model_hz=10.0):
    t = np.arange(horizon, dtype=np.float64)
    coeffs = np.linspace(0.5, -0.3, 10)
    actions = np.stack([c * (t / horizon) ** degree + 0.1 * dim for dim, c in enumerate(coeffs)], axis=1)
    return ActionChunk(actions, model_hz)


def test_savgol_coefficients_known_values():
    np.testing.assert_allclose(savgol_coefficients(5, 2), np.array([-3, 12, 17, 12, -3]) / 35.0, atol=1e-15)
    np.testing.assert_allclose(savgol_coefficients(5, 2).sum(), 1.0, atol=1e-15)


@pytest.mark.parametrize("window, polyorder", [(4, 2), (1, 0), (5, 5)])
def test_invalid_filter_settings(window, polyorder):
    with pytest.raises(InputValidationError):
        savgol_coefficients(window, polyorder)


@pytest.mark.parametrize("degree", [0, 1, 2])
@pytest.mark.parametrize("horizon", [8, 16, 33])
def test_smoothing_preserves_low_degree_polynomials_inside(degree, horizon):
    chunk = _poly_chunk(horizon, degree)
    result = smooth_chunk(chunk, SavGolConfig(window=5, polyorder=2))
    assert not result.skipped
    np.testing.assert_allclose(result.chunk.actions[1:-1], chunk.actions[1:-1], atol=1e-9)


def test_linear_midpoints_break_quadratic_preservation():
    chunk = _poly_chunk(16, 2)
    result = smooth_chunk(chunk, SavGolConfig(upsample=UpsampleKind.LINEAR))
    assert np.max(np.abs(result.chunk.actions[1:-1] - chunk.actions[1:-1])) > 1e-9


def test_smoothing_keeps_shape_and_rate():
    chunk = ActionChunk(np.random.default_rng(0).normal(size=(16, 10)), 10.0)
    result = smooth_chunk(chunk)
    assert result.chunk.actions.shape == (16, 10)
    assert result.chunk.model_hz == 10.0


def test_smoothing_reduces_high_frequency_noise():
    rng = np.random.default_rng(3)
    base = _poly_chunk(64, 1).actions
    noisy = ActionChunk(base + rng.normal(0, 0.01, base.shape), 10.0)
    smoothed = smooth_chunk(noisy).chunk
    raw_err = np.abs(noisy.actions - base)[2:-2].mean()
    smooth_err = np.abs(smoothed.actions - base)[2:-2].mean()
    assert smooth_err < raw_err


def test_short_chunk_returned_unchanged_with_flag():
    chunk = ActionChunk(np.ones((2, 10)), 10.0)
    result = smooth_chunk(chunk, SavGolConfig(window=5, polyorder=2))
    assert result.skipped
    assert result.chunk is chunk

    single = ActionChunk(np.ones((1, 10)), 10.0)
    assert smooth_chunk(single).skipped


def test_upsample_doubles_rate_and_keeps_samples():
    chunk = _poly_chunk(6, 3)
    dense = upsample_2x(chunk, UpsampleKind.CUBIC)
    assert dense.horizon == 11
    assert dense.model_hz == 20.0
    np.testing.assert_array_equal(dense.actions[0::2], chunk.actions)

    t = np.arange(11) / 2.0
    expected = np.stack([c * (t / 6) ** 3 + 0.1 * dim for dim, c in enumerate(np.linspace(0.5, -0.3, 10))], axis=1)
    np.testing.assert_allclose(dense.actions, expected, atol=1e-12)


def test_upsample_linear_midpoints():
    chunk = ActionChunk(np.arange(30, dtype=float).reshape(3, 10), 10.0)
    dense = upsample_2x(chunk)
    np.testing.assert_allclose(dense.actions[1], (chunk.actions[0] + chunk.actions[1]) / 2)


def test_interpolation_ratio_and_endpoints():
    chunk = _poly_chunk(16, 1)
    out = freq_interpolate(chunk, 50.0)
    assert out.horizon == 80
    assert out.model_hz == 50.0
    np.testing.assert_array_equal(out.actions[0], chunk.actions[0])
    np.testing.assert_allclose(out.actions[-1], chunk.actions[-1], atol=1e-15)
    # linear input stays linear
    second = np.diff(out.actions, n=2, axis=0)
    np.testing.assert_allclose(second, 0.0, atol=1e-12)


def test_equal_rates_are_identity():
    chunk = _poly_chunk(12, 2)
    out = freq_interpolate(chunk, 10.0)
    np.testing.assert_allclose(out.actions, chunk.actions, atol=1e-12)


def test_single_action_chunk_interpolates_to_hold():
    chunk = ActionChunk(np.full((1, 10), 0.3), 10.0)
    out = freq_interpolate(chunk, 50.0)
    assert out.horizon == interpolated_length(1, 10.0, 50.0)
    np.testing.assert_array_equal(out.actions, np.full((out.horizon, 10), 0.3))


def test_interpolation_preserves_duration(rng):
    for _ in range(1000):
        horizon = int(rng.integers(1, 64))
        model_hz = float(rng.uniform(1.0, 30.0))
        control_hz = model_hz * float(rng.uniform(1.0, 10.0))
        chunk = ActionChunk(np.zeros((horizon, 10)), model_hz)
        out = freq_interpolate(chunk, control_hz)
        assert abs(out.horizon / control_hz - horizon / model_hz) <= 1.0 / control_hz


def test_dimension_order_commutes_with_rendering(rng):
    for _ in range(50):
        horizon = int(rng.integers(3, 40))
        chunk = ActionChunk(rng.normal(size=(horizon, 10)), 10.0)
        perm = rng.permutation(10)
        shuffled = ActionChunk(chunk.actions[:, perm], chunk.model_hz)

        smoothed = smooth_chunk(chunk, SavGolConfig(window=5, polyorder=2)).chunk
        np.testing.assert_allclose(
            smooth_chunk(shuffled, SavGolConfig(window=5, polyorder=2)).chunk.actions,
            smoothed.actions[:, perm], rtol=0, atol=1e-14)
        np.testing.assert_array_equal(
            freq_interpolate(shuffled, 50.0).actions, freq_interpolate(chunk, 50.0).actions[:, perm])


def test_render_chunk_runs_both_stages():
    chunk = _poly_chunk(16, 2)
    result = render_chunk(chunk, SavGolConfig(), 50.0)
    assert not result.skipped
    assert result.chunk.horizon == 80


def test_chunk_rejects_bad_shapes():
    with pytest.raises(InputValidationError):
        ActionChunk(np.zeros((4, 9)), 10.0)
    with pytest.raises(InputValidationError):
        ActionChunk(np.zeros((0, 10)), 10.0)
    with pytest.raises(InputValidationError):
        ActionChunk(np.zeros((4, 10)), 0.0)


def test_chunk_copies_and_freezes_input():
    data = np.zeros((3, 10))
    chunk = ActionChunk(data, 10.0)
    data[0, 0] = 5.0
    assert chunk.actions[0, 0] == 0.0
    with pytest.raises(ValueError):
        chunk.actions[0, 0] = 1.0
