import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_cfg():
    from cdsr.config import desk_config
    return desk_config(trunk_channels=8, growth_channels=4, num_blocks=1, embed_dim=8, codebook_length=8,
                       queue_size=16, batch_size=2, lr_patch_size=16, patch_channels=8, pixel_channels=8,
                       patch_size=8)


@pytest.fixture(scope="session")
def tiny_pool():
    g = np.random.default_rng(3)
    base = [g.random((40, 40, 3)) for _ in range(3)]
    # smooth a little so images are not pure noise
    return [np.clip(0.5 * b + 0.5 * np.roll(b, 1, axis=0), 0, 1) for b in base]
