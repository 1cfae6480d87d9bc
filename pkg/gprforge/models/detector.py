from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from gprforge.models.base import ArrayModel, Model


@dataclass(repr=False, eq=False)
class AnchorSet(ArrayModel):
    """Anchor boxes (N, 4) as xmin, ymin, xmax, ymax; index
    (i * feat_w + j) * 6 + scale * 2 + ratio."""

    types = {"boxes": "ndarray", "feat_w": "int", "feat_h": "int", "stride": "int"}

    boxes: np.ndarray
    feat_w: int
    feat_h: int
    stride: int = 8

    def __len__(self):
        return self.boxes.shape[0]

    def cross_boundary(self, width, height) -> np.ndarray:
        b = self.boxes
        return (b[:, 0] < 0) | (b[:, 1] < 0) | (b[:, 2] > width) | (b[:, 3] > height)


@dataclass(repr=False, eq=False)
class DetectorModel(Model):
    """Shared backbone plus RPN and ROI heads; `config` is the training
    snapshot persisted next to the weights."""

    types = {"backbone": "dict", "rpn": "dict", "roi": "dict", "config": "dict"}

    backbone: Dict[str, np.ndarray]
    rpn: Dict[str, np.ndarray]
    roi: Dict[str, np.ndarray]
    config: Dict = field(default_factory=dict)

    def parameters(self) -> Dict[str, np.ndarray]:
        """All trainable tensors in fixed order, prefixed by section."""
        params = {}
        for section in ("backbone", "rpn", "roi"):
            for name, value in getattr(self, section).items():
                params[f"{section}.{name}"] = value
        return params

    def __eq__(self, other):
        if not isinstance(other, DetectorModel):
            return False
        mine, theirs = self.parameters(), other.parameters()
        return (
            list(mine) == list(theirs)
            and all(np.array_equal(mine[k], theirs[k]) for k in mine)
            and self.config == other.config
        )
