import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from molqubit.bath import BathSpin, build_bath

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GAMMA_H = 42.577478
GAMMA_F = 40.078


def random_bath(n, seed, box=0.9, min_dist=0.25, r_dipole=0.8, gamma=GAMMA_H, min_center=0.2):
    """n spin-1/2 nuclei at random positions with a minimum spacing (nm)."""
    rng = np.random.default_rng(seed)
    pos = []
    while len(pos) < n:
        p = rng.uniform(-box, box, 3)
        if np.linalg.norm(p) < min_center:
            continue
        if all(np.linalg.norm(p - q) >= min_dist for q in pos):
            pos.append(p)
    spins = [BathSpin(k, p, "1H", 0.5, gamma, 0, (0, 0, 0)) for k, p in enumerate(pos)]
    return build_bath(spins, r_dipole=r_dipole)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
