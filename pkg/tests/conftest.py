import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from edgevr.env import EnvConfig
from edgevr.media import MediaFactors, QualityLadder, VideoGenSpec, generate_video
from edgevr.net import ThroughputTrace, TraceGenSpec, generate_trace


def flat_ladder(gops=30, levels=4, base=2e7, growth=1.5, psnr0=48.0, step=1.2, dt=1.0, name="flat"):
    """Zero-jitter ladder: identical rows, closed-form entries."""
    lv = np.arange(levels)
    bits = np.tile(base * growth**lv, (gops, 1))
    psnr = np.tile(psnr0 + step * lv, (gops, 1))
    return QualityLadder(bits, psnr, dt, name=name)


def constant_trace(rate_bps=1e9, duration_s=10.0, interval_s=0.1, loop=True):
    n = int(round(duration_s / interval_s))
    return ThroughputTrace(interval_s, np.full(n, rate_bps), loop=loop)


@pytest.fixture
def factors():
    return MediaFactors()


@pytest.fixture
def ladder():
    return flat_ladder()


@pytest.fixture
def videos():
    return [generate_video(VideoGenSpec(gop_count=40, level_count=4, seed=s, name=f"v{s}")) for s in range(3)]


@pytest.fixture
def traces():
    return [generate_trace(TraceGenSpec(duration_s=60, mean_bps=3e8, seed=s)) for s in range(3)]


@pytest.fixture
def env_config(videos, traces):
    return EnvConfig(videos, traces, user_count=3, gop_count=12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
