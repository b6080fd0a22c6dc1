import numpy as np
import pytest

from vec_offload.models import ScenarioConfig, VehicleTask
from vec_offload.scenario import ChannelTrace


def make_task(k=0, **fields):
    fields.setdefault("input_bits", 1e6)
    return VehicleTask(id=k, **fields)


def flat_trace(cfg, gains, active=None):
    """Trace from an explicit K x N gain matrix, every vehicle present unless told otherwise"""
    gains = np.atleast_2d(np.asarray(gains, dtype=float))
    if active is None:
        active = np.ones_like(gains, dtype=bool)
    return ChannelTrace.from_gains(gains, active, cfg)


@pytest.fixture
def five_frames():
    """N = 5 frames, three uplink slots"""
    return ScenarioConfig(mission_time=0.15, fading=False)


@pytest.fixture
def table_defaults():
    return ScenarioConfig()
