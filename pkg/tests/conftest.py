from pathlib import Path

import numpy as np
import pytest

from wam_runtime.schemas import FusionConfig, LatencyModel, SimConfig, TokenLayout

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def golden_dir():
    return GOLDEN_DIR


@pytest.fixture
def small_layout():
    """2 text, 1 cond, two single-view 1x2 frames, 2 actions per frame, one frame per chunk"""
    return TokenLayout(n_text=2, n_cond=1, frames_K=2, views_V=1, grid_h=1, grid_w=2,
                       actions_per_frame_Sa=2, chunking=[0, 1, 2])


@pytest.fixture
def fast_sim_config():
    """Short discrete-event episode with a cheap sampler"""
    return SimConfig(
        duration=3.0,
        sampler={"steps": 4, "joint_prefix": 4},
        latency=LatencyModel(per_step_ms=29.3, steps=3, jitter_ms=5.0),
        fusion=FusionConfig(),
    )
