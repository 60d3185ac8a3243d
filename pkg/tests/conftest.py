import numpy as np
import pytest

from mofo.artifacts import FrameCodec
from mofo.config import NetConfig
from mofo.evalsynth import band_limited_texture
from mofo.flow import Frame


def textured(size=64, seed=0, sigma=2.5):
    return band_limited_texture((size, size), seed, sigma)


def shifted(image, du, dv):
    """Circular shift: content moves by (du, dv), so the true flow is (du, dv)."""
    return np.roll(image, shift=(dv, du), axis=(0, 1))


def write_frames(directory, frames):
    codec = FrameCodec()
    directory.mkdir(parents=True, exist_ok=True)
    for i, pixels in enumerate(frames):
        codec.save(Frame(pixels), directory / f'frame_{i:05d}.pgm')
    return directory


@pytest.fixture
def micro_cfg():
    return NetConfig()


@pytest.fixture
def texture():
    return textured()


@pytest.fixture
def frames_dir(tmp_path):
    """Four frames of a textured square moving right by 2 px per frame."""
    background = textured(48, seed=3, sigma=3.0) * 0.5
    sprite = textured(16, seed=4, sigma=2.0)
    frames = []
    for t in range(4):
        frame = background.copy()
        frame[16:32, 8 + 2 * t:24 + 2 * t] = sprite
        frames.append(frame)
    return write_frames(tmp_path / 'frames', frames)
