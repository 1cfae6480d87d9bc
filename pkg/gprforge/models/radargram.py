from dataclasses import dataclass

import numpy as np

from gprforge.models.base import ArrayModel


@dataclass(repr=False, eq=False)
class Radargram(ArrayModel):
    """B-scan: traces[i] is the A-scan at position i, sampled every dt."""

    types = {"traces": "ndarray", "dt": "float", "dx_m": "float", "time_zero": "float"}

    traces: np.ndarray
    dt: float
    dx_m: float
    time_zero: float = 0.0

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=np.float32)

    @property
    def n_traces(self) -> int:
        return self.traces.shape[0]

    @property
    def n_samples(self) -> int:
        return self.traces.shape[1]

    def replace(self, traces) -> "Radargram":
        return Radargram(traces, self.dt, self.dx_m, self.time_zero)


@dataclass(repr=False, eq=False)
class NoiseModel(ArrayModel):
    types = {"per_depth_std": "ndarray", "family": "str"}

    per_depth_std: np.ndarray
    family: str = "pcg64"

    def __post_init__(self):
        self.per_depth_std = np.asarray(self.per_depth_std, dtype=np.float64)


@dataclass(repr=False, eq=False)
class GrayImage(ArrayModel):
    """8-bit image, pixels[row, col]; row 0 is the earliest time."""

    types = {"width": "int", "height": "int", "pixels": "ndarray"}

    width: int
    height: int
    pixels: np.ndarray

    @classmethod
    def from_array(cls, pixels) -> "GrayImage":
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        return cls(pixels.shape[1], pixels.shape[0], pixels)
