from __future__ import annotations

import numpy as np
import pytest

from moledit.backbone import Model, ModelConfig, pretrain


@pytest.fixture(scope="session")
def copy_task():
    """A default-size model pretrained on a 50-pair copy task, with its pairs."""
    rng = np.random.default_rng(0)
    pairs = []
    for _ in range(50):
        s = [int(t) for t in rng.integers(4, 14, size=rng.integers(3, 7))]
        pairs.append((s, s))
    m = Model(ModelConfig(14, 14, seed=0))
    pretrain(m, pairs, 30, lr=3e-3, seed=0)
    return m, pairs
