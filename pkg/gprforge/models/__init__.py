# flake8: noqa

# domain types, one module per concern
from gprforge.models.boxes import BBox, Detection, HyperbolaFit
from gprforge.models.detector import AnchorSet, DetectorModel
from gprforge.models.gen_config import GenConfig
from gprforge.models.grid import FieldState, MaterialGrid, Trace
from gprforge.models.radargram import GrayImage, NoiseModel, Radargram
from gprforge.models.report import EvalReport, Match
from gprforge.models.scene import (
    BUILTIN_MATERIALS,
    FREE_SPACE,
    HALFSPACE,
    PEC,
    Material,
    ObjectSpec,
    Scene,
    ScanGeometry,
    Waveform,
)

__all__ = [
    "BBox",
    "Detection",
    "HyperbolaFit",
    "AnchorSet",
    "DetectorModel",
    "GenConfig",
    "FieldState",
    "MaterialGrid",
    "Trace",
    "GrayImage",
    "NoiseModel",
    "Radargram",
    "EvalReport",
    "Match",
    "BUILTIN_MATERIALS",
    "FREE_SPACE",
    "HALFSPACE",
    "PEC",
    "Material",
    "ObjectSpec",
    "Scene",
    "ScanGeometry",
    "Waveform",
]
