from dataclasses import dataclass
from typing import Optional

from gprforge.models.base import Model


@dataclass(repr=False)
class BBox(Model):
    """Pixel box, [xmin, xmax) x [ymin, ymax)."""

    types = {
        "xmin": "float",
        "ymin": "float",
        "xmax": "float",
        "ymax": "float",
        "class_id": "int",
        "score": "float",
    }

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    class_id: int = 0
    score: Optional[float] = None

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    def is_valid(self) -> bool:
        return self.xmin < self.xmax and self.ymin < self.ymax

    def as_tuple(self):
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    def clip(self, width, height) -> "BBox":
        return BBox(
            min(max(self.xmin, 0), width),
            min(max(self.ymin, 0), height),
            min(max(self.xmax, 0), width),
            min(max(self.ymax, 0), height),
            self.class_id,
            self.score,
        )


@dataclass(repr=False)
class Detection(Model):
    types = {"box": "BBox", "score": "float", "class_id": "int"}

    box: BBox
    score: float
    class_id: int = 0

    def as_bbox(self) -> BBox:
        return BBox(*self.box.as_tuple(), class_id=self.class_id, score=self.score)


@dataclass(repr=False)
class HyperbolaFit(Model):
    """Accumulator peak of the Hough baseline: apex position x0 (m), apex
    two-way time t0 (s), velocity v (m/s)."""

    types = {"x0": "float", "t0": "float", "v": "float", "votes": "int", "box": "BBox"}

    x0: float
    t0: float
    v: float
    votes: int
    box: Optional[BBox] = None
