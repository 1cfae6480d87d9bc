import pprint

import numpy as np


def plain_value(value):
    """Nested models become dicts; arrays are summarized by shape and dtype."""
    if hasattr(value, "to_dict"):
        return value.to_dict()
    if isinstance(value, np.ndarray):
        return f"ndarray{value.shape} {value.dtype}"
    if isinstance(value, (list, tuple)):
        return [plain_value(v) for v in value]
    if isinstance(value, dict):
        return {k: plain_value(v) for k, v in value.items()}
    return value


class Model(object):
    """
    Attributes:
      types (dict): attribute name -> type name, in display order.
    """

    types = {}

    def to_dict(self):
        return {attr: plain_value(getattr(self, attr)) for attr in self.types}

    def to_str(self):
        return pprint.pformat(self.to_dict())

    def __repr__(self):
        return self.to_str()


class ArrayModel(Model):
    """Model whose equality compares ndarray fields bit for bit, dtype
    included."""

    def __eq__(self, other):
        if not isinstance(other, type(self)):
            return False
        for attr in self.types:
            mine, theirs = getattr(self, attr), getattr(other, attr)
            if isinstance(mine, np.ndarray) or isinstance(theirs, np.ndarray):
                mine, theirs = np.asarray(mine), np.asarray(theirs)
                if mine.dtype != theirs.dtype or not np.array_equal(mine, theirs):
                    return False
            elif mine != theirs:
                return False
        return True

    def __ne__(self, other):
        return not self == other
