from typing import Any, Optional, Tuple

import numpy as np
from attrs import frozen


@frozen
class Finite:
    """Every element of an array field must be finite."""

    def __call__(self, instance: Any, attribute: Any, value):
        if value is None:
            return
        if not np.all(np.isfinite(np.asarray(value, dtype=np.float64))):
            raise ValueError(f"{getattr(attribute, 'name', 'Array')} must be finite.")


@frozen
class Shape:
    """Array field must have this shape; ``None`` entries match any length."""

    shape: Tuple[Optional[int], ...]

    def __call__(self, instance: Any, attribute: Any, value):
        actual = np.shape(value)
        if len(actual) != len(self.shape) or any(
            want is not None and want != got for want, got in zip(self.shape, actual)
        ):
            raise ValueError(f"{getattr(attribute, 'name', 'Array')} must have shape {self.shape}; got {actual}.")
