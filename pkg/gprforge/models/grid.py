from dataclasses import dataclass

import numpy as np

from gprforge.models.base import ArrayModel


@dataclass(repr=False, eq=False)
class MaterialGrid(ArrayModel):
    """Per-cell material properties, indexed [i (x), j (z)]; row j = 0 is
    the surface row."""

    types = {
        "nx": "int",
        "nz": "int",
        "dx": "float",
        "dz": "float",
        "eps_r": "ndarray",
        "sigma": "ndarray",
        "pec_mask": "ndarray",
    }

    nx: int
    nz: int
    dx: float
    dz: float
    eps_r: np.ndarray
    sigma: np.ndarray
    pec_mask: np.ndarray

    @classmethod
    def uniform(cls, nx, nz, dx, dz, eps_r=1.0, sigma=0.0):
        return cls(
            nx,
            nz,
            dx,
            dz,
            np.full((nx, nz), float(eps_r)),
            np.full((nx, nz), float(sigma)),
            np.zeros((nx, nz), dtype=bool),
        )


@dataclass(repr=False, eq=False)
class FieldState(ArrayModel):
    """Split-field TM state on the padded grid. Ez = ezx + ezz at cell
    centres; hy lives on x-faces, hx on z-faces."""

    types = {"ezx": "ndarray", "ezz": "ndarray", "hx": "ndarray", "hy": "ndarray", "step": "int"}

    ezx: np.ndarray
    ezz: np.ndarray
    hx: np.ndarray
    hy: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, nx, nz):
        return cls(
            np.zeros((nx, nz)),
            np.zeros((nx, nz)),
            np.zeros((nx, nz - 1)),
            np.zeros((nx - 1, nz)),
        )

    @property
    def ez(self) -> np.ndarray:
        return self.ezx + self.ezz


@dataclass(repr=False, eq=False)
class Trace(ArrayModel):
    types = {"samples": "ndarray", "dt": "float", "time_zero": "float"}

    samples: np.ndarray
    dt: float
    time_zero: float = 0.0
