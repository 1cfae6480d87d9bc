from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from gprforge.models.base import Model


@dataclass(repr=False)
class Material(Model):
    types = {"name": "str", "eps_r": "float", "sigma": "float"}

    name: str
    eps_r: float
    sigma: float


FREE_SPACE = Material("free_space", 1.0, 0.0)
PEC = Material("pec", 1.0, 0.0)
BUILTIN_MATERIALS = {FREE_SPACE.name: FREE_SPACE, PEC.name: PEC}
HALFSPACE = "halfspace"


@dataclass(repr=False)
class ObjectSpec(Model):
    """A buried box (x1, z1, x2, z2) or cylinder (xc, zc, r), metres."""

    types = {"shape": "str", "material": "str", "geometry": "tuple"}

    shape: str
    material: str
    geometry: Tuple[float, ...]

    @property
    def is_cylinder(self) -> bool:
        return self.shape == "cylinder"

    def bounds(self) -> Tuple[float, float, float, float]:
        """(xmin, zmin, xmax, zmax) of the object's extent."""
        if self.is_cylinder:
            xc, zc, r = self.geometry
            return (xc - r, zc - r, xc + r, zc + r)
        return tuple(self.geometry)

    def apex(self) -> Tuple[float, float]:
        """Topmost reflecting point (x, z)."""
        if self.is_cylinder:
            xc, zc, r = self.geometry
            return (xc, zc - r)
        x1, z1, x2, _ = self.geometry
        return ((x1 + x2) / 2.0, z1)


@dataclass(repr=False)
class Waveform(Model):
    types = {"kind": "str", "amplitude": "float", "center_freq": "float"}

    kind: str = "ricker"
    amplitude: float = 1.0
    center_freq: float = 3e8


@dataclass(repr=False)
class ScanGeometry(Model):
    types = {"x_start": "float", "x_end": "float", "n_traces": "int"}

    x_start: float
    x_end: float
    n_traces: int

    def spacing(self) -> float:
        if self.n_traces < 2:
            return 0.0
        return (self.x_end - self.x_start) / (self.n_traces - 1)

    def positions(self) -> List[float]:
        step = self.spacing()
        return [self.x_start + i * step for i in range(self.n_traces)]


@dataclass(repr=False)
class Scene(Model):
    types = {
        "domain": "tuple",
        "cell": "tuple",
        "time_window": "float",
        "materials": "list[Material]",
        "objects": "list[ObjectSpec]",
        "waveform": "Waveform",
        "source_depth": "float",
        "rx_offset": "float",
        "scan": "ScanGeometry",
    }

    domain: Tuple[float, float]
    cell: Tuple[float, float]
    time_window: float
    materials: List[Material] = field(default_factory=list)
    objects: List[ObjectSpec] = field(default_factory=list)
    waveform: Waveform = field(default_factory=Waveform)
    source_depth: float = 0.0
    rx_offset: float = 0.0
    scan: Optional[ScanGeometry] = None

    def material(self, name: str) -> Optional[Material]:
        if name in BUILTIN_MATERIALS:
            return BUILTIN_MATERIALS[name]
        return next((m for m in self.materials if m.name == name), None)

    @property
    def halfspace(self) -> Material:
        return self.material(HALFSPACE)

    def positions(self) -> List[float]:
        return self.scan.positions()

    def trace_spacing(self) -> float:
        """Radargram dx_m: scan spacing, or the cell width for one trace."""
        spacing = self.scan.spacing()
        return spacing if spacing > 0 else self.cell[0]
