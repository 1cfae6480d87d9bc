"""
    Shared fixtures for the gprforge tests.
"""

import os

import numpy as np
import pytest

from gprforge import annotate, radargram
from gprforge.configuration import Configuration
from gprforge.models import BBox, GenConfig, GrayImage

MINIMAL_SCENE = """\
#domain: 2.0 2.0
#cell: 0.01 0.01
#time_window: 1e-7
#material: halfspace 6.0 0.001
#waveform: ricker 1.0 3e8
#source: 0.0
#rx_offset: 0.1
#scan: 0.2 1.8 40
"""


@pytest.fixture(autouse=True)
def fresh_configuration():
    Configuration.set_default(None)
    yield
    Configuration.set_default(None)


@pytest.fixture
def scene_text():
    return MINIMAL_SCENE


@pytest.fixture
def hyperbola_image():
    """Factory for a synthetic radargram image: mid-gray background with a
    bright/dark band along t(x) = sqrt(t0^2 + (slope (x - x0))^2)."""

    def make(width=64, height=64, x0=32, t0=16, slope=1.0, noise=0.0, seed=0, reach=12):
        cols = np.arange(width)
        arrival = np.sqrt(t0**2 + (slope * (cols - x0)) ** 2)
        rows = np.arange(height)[:, None]
        offset = rows - arrival[None, :]
        pixels = 128.0 + 110.0 * np.exp(-(offset**2) / 2.0) - 90.0 * np.exp(-((offset - 2.5) ** 2) / 2.0)
        if noise:
            pixels += np.random.default_rng(seed).normal(0.0, noise, pixels.shape)
        image = GrayImage.from_array(np.clip(np.round(pixels), 0, 255))
        tail = math_tail(t0, slope, reach)
        box = BBox(x0 - reach, max(t0 - 3, 0), min(x0 + reach + 1, width), min(tail + 4, height))
        return image, box

    return make


def math_tail(t0, slope, reach):
    return int(np.ceil(np.sqrt(t0**2 + (slope * reach) ** 2)))


@pytest.fixture
def labelled_dir(tmp_path, hyperbola_image):
    """Directory of `{i}.pgm` + `{i}.txt` pairs with one hyperbola each."""

    def make(count=6, name="data", width=64, height=64, seed=0):
        directory = tmp_path / name
        directory.mkdir()
        rng = np.random.default_rng(seed)
        for i in range(count):
            x0 = int(rng.integers(20, width - 20))
            t0 = int(rng.integers(10, height // 2))
            image, box = hyperbola_image(width, height, x0, t0, noise=4.0, seed=i)
            radargram.write_pgm(image, os.path.join(directory, f"{i}.pgm"))
            annotate.write_labels(os.path.join(directory, f"{i}.txt"), [box])
        return str(directory)

    return make


@pytest.fixture
def tiny_gen_config():
    """Small, fast generator settings: 8 traces over a 1 m wide domain."""
    return GenConfig(
        preset="simulated",
        count=2,
        seed=7,
        domain=(1.0, 0.6),
        cell=(0.04, 0.04),
        time_window=2e-8,
        center_freq=3e8,
        n_traces=8,
        image_height=32,
        eps_r=(4.0, 6.0),
        sigma=(0.001, 0.005),
        objects=(1, 1),
        depth=(0.25, 0.3),
        radius=(0.05, 0.08),
        object_materials=["pec"],
        noise=(0.005, 0.01),
        rx_offset=0.1,
    )
