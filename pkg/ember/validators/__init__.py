__all__ = [
    "Finite",
    "Number",
    "Shape",
]

from ember.validators._array import Finite, Shape
from ember.validators._number import Number
