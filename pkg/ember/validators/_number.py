from numbers import Real
from typing import Any, Optional, Union

from attrs import frozen

Numeric = Union[int, float]


@frozen(kw_only=True)
class Number:
    """Limit an ``attrs`` field to a value range.

    Used as ``field(validator=Number(gt=0))``.
    """

    lt: Optional[Numeric] = None
    """Value must be **less than** this value."""

    lte: Optional[Numeric] = None
    """Value must be **less than or equal** this value."""

    gt: Optional[Numeric] = None
    """Value must be **greater than** this value."""

    gte: Optional[Numeric] = None
    """Value must be **greater than or equal** this value."""

    def __call__(self, instance: Any, attribute: Any, value: Numeric):
        if isinstance(value, bool) or not isinstance(value, Real):
            raise TypeError(f"{_name(attribute)} must be a number; got {type(value).__name__}.")

        if self.lt is not None and value >= self.lt:
            raise ValueError(f"{_name(attribute)} must be < {self.lt}")

        if self.lte is not None and value > self.lte:
            raise ValueError(f"{_name(attribute)} must be <= {self.lte}")

        if self.gt is not None and value <= self.gt:
            raise ValueError(f"{_name(attribute)} must be > {self.gt}")

        if self.gte is not None and value < self.gte:
            raise ValueError(f"{_name(attribute)} must be >= {self.gte}")


def _name(attribute) -> str:
    return getattr(attribute, "name", "Value")
