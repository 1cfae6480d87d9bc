from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from gprforge.models.base import Model

Range = Tuple[float, float]


@dataclass(repr=False)
class GenConfig(Model):
    """Ranges a dataset generator draws each scene from. Physical sizes in
    metres, times in seconds."""

    types = {
        "preset": "str",
        "count": "int",
        "seed": "int",
        "domain": "tuple",
        "cell": "tuple",
        "time_window": "float",
        "center_freq": "float",
        "n_traces": "int",
        "image_height": "int",
        "eps_r": "tuple",
        "sigma": "tuple",
        "objects": "tuple",
        "depth": "tuple",
        "radius": "tuple",
        "object_materials": "list",
        "material_props": "dict",
        "noise": "tuple",
        "clutter": "bool",
        "layers": "tuple",
        "layer_eps_r": "tuple",
        "lateral_gain": "tuple",
        "source_depth": "float",
        "rx_offset": "float",
        "tail_drop": "float",
        "noise_profile": "tuple",
    }

    preset: str = "simulated"
    count: int = 50
    seed: int = 0
    domain: Tuple[float, float] = (3.2, 2.0)
    cell: Tuple[float, float] = (0.02, 0.02)
    time_window: float = 1e-7
    center_freq: float = 3e8
    n_traces: int = 64
    image_height: int = 128
    eps_r: Range = (4.0, 9.0)
    sigma: Range = (0.001, 0.01)
    objects: Tuple[int, int] = (1, 3)
    depth: Range = (0.3, 1.2)
    radius: Range = (0.03, 0.15)
    object_materials: List[str] = field(default_factory=lambda: ["pec"])
    material_props: Dict[str, Tuple[float, float]] = field(
        default_factory=lambda: {"void": (1.0, 0.0)}
    )
    noise: Range = (0.005, 0.02)
    clutter: bool = False
    layers: Tuple[int, int] = (0, 0)
    layer_eps_r: Range = (3.0, 12.0)
    lateral_gain: Range = (1.0, 1.0)
    source_depth: float = 0.0
    rx_offset: float = 0.1
    tail_drop: float = 0.5
    noise_profile: Optional[Tuple[str, int, int]] = None
