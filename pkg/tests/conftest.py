import math

import numpy as np
import pytest

from splatfill.camera import Camera
from splatfill.model import make_model


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_scene(seed, n=200, spread=1.0, scale_lo=0.02, scale_hi=0.15):
    """A randomized model plus a camera framing it, for renderer tests."""
    rng = np.random.default_rng(seed)
    model = make_model(
        positions=rng.uniform(-spread, spread, size=(n, 3)),
        scales=rng.uniform(scale_lo, scale_hi, size=(n, 3)),
        rotations=random_quats(rng, n),
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
        opacities=rng.uniform(0.05, 1.0, size=n),
        trained=rng.random(n) < 0.5,
    )
    cam = Camera(
        position=np.array([0.0, 0.0, -4.0]),
        look_at=np.zeros(3),
        up=np.array([0.0, 1.0, 0.0]),
        vertical_fov=math.radians(45.0),
        width=32,
        height=32,
        near=0.1,
        far=20.0,
    )
    return model, cam


@pytest.fixture
def rng():
    return np.random.default_rng(0)
