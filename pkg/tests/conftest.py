import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from regimecf import extract_pairs, generate_synthetic, stop_and_go_config


@pytest.fixture(scope="session")
def newell_stop_go():
    """One Newell follower behind a stop-and-go leader (noise-free)."""
    cfg = stop_and_go_config(law="newell", n_followers=1, seed=11)
    tset, truth = generate_synthetic(cfg, seed=11)
    pairs = extract_pairs(tset)
    assert len(pairs) == 1
    return tset, truth, pairs[0]


@pytest.fixture(scope="session")
def idm_stop_go():
    """Two IDM followers behind a stop-and-go leader (noise-free)."""
    cfg = stop_and_go_config(law="idm", n_followers=2, seed=5)
    tset, truth = generate_synthetic(cfg, seed=5)
    pairs = extract_pairs(tset)
    assert len(pairs) == 2
    return tset, truth, pairs


def rand_speed_profile(rng, n):
    """Random smooth-ish speed profile for property tests."""
    v = np.abs(10 + np.cumsum(rng.normal(0, 0.3, n)))
    return 0.1 * np.arange(n), v
