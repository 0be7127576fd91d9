import numpy as np
import pytest

from evspad.scene import SceneClip, Trajectory
from evspad.spad import SensorParams


@pytest.fixture
def params():
    return SensorParams()


@pytest.fixture
def const_clip_factory():
    """Constant-flux single-pixel clips for Monte Carlo checks."""
    def make(flux, duration=0.1, pixels=(1, 1)):
        h, w = pixels
        return SceneClip(radiance=np.ones((h, w)), trajectory=Trajectory.identity(),
                         illumination=flux, duration=duration)
    return make
