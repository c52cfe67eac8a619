import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def generic_bias_point(model, seed=42):
    """Move a model to a generic parameter point for finite-difference work.

    Offsets every bias so no unit sits exactly on a relu/satlu kink and no
    pooling window is a tie of rectified zeros; gradient checks at such a
    point exercise every pullback without straddling non-differentiable
    boundaries.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if name.endswith(".bias"):
            if ".pred." in name:
                p.data = rng.uniform(0.3, 0.6, p.data.shape)
            elif ".target." in name:
                p.data = rng.uniform(0.8, 1.2, p.data.shape)
            else:
                p.data = rng.normal(0.0, 0.3, p.data.shape)
    return model
