import numpy as np
import pytest

from chipletplace.model import (BumpPin, ChipletSpec, DesignInstance, InterposerSpec, Net,
                                PlacementState)


@pytest.fixture
def tiny_design():
    """Two 1x1 chiplets with one net on a 3x1 strip."""
    ip = InterposerSpec(3.0, 1.0, grid_resolution=8, min_spacing=0.1)
    c0 = ChipletSpec(0, 1.0, 1.0, 0.3, 1e6, (BumpPin(0, 0.2, 0.1, 0),))
    c1 = ChipletSpec(1, 1.0, 1.0, 0.3, 1e6, (BumpPin(0, -0.2, 0.1, 0),))
    return DesignInstance(ip, [c0, c1], [Net(0, (0, 0), (1, 0))])


@pytest.fixture
def quad_design():
    """Four bare chiplets (no nets) on a 20x16 interposer."""
    rng = np.random.default_rng(42)
    ip = InterposerSpec(20.0, 16.0, grid_resolution=16)
    chips = [ChipletSpec(i, rng.uniform(2, 4), rng.uniform(2, 4),
                         rng.uniform(0.2, 0.6), rng.uniform(2e5, 3e6))
             for i in range(4)]
    return DesignInstance(ip, chips, [])


@pytest.fixture
def quad_state(quad_design):
    rng = np.random.default_rng(7)
    n = quad_design.n_chiplets
    return PlacementState(rng.uniform(4, 16, n), rng.uniform(4, 12, n),
                          np.array([0.0, 90.0, 180.0, 270.0]))
