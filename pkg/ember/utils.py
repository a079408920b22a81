import math
from typing import Any, Iterable, Optional, Sequence, Tuple, Union

import numpy as np


def is_iterable(obj) -> bool:
    return isinstance(obj, Iterable) and not isinstance(obj, str)


def to_tuple_converter(value: Union[None, Any, Iterable[Any]]) -> Tuple[Any, ...]:
    """Convert a single element or an iterable of elements into a tuple.

    Intended to be used in an ``attrs.Field``. If :obj:`None` is provided, returns an empty tuple.
    If a single element is provided, returns a tuple containing just that element.
    If an iterable is provided, converts it into a tuple.

    Parameters
    ----------
    value: Optional[Union[Any, Iterable[Any]]]
        An element, an iterable of elements, or None.

    Returns
    -------
    Tuple[Any, ...]: A tuple containing the elements.
    """
    if value is None:
        return ()
    elif is_iterable(value):
        return tuple(value)
    else:
        return (value,)


def to_vec3(value: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """Convert a 3-element sequence into a read-only float64 array.

    Intended to be used as an ``attrs.Field`` converter.
    """
    arr = np.array(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"Expected 3 components; got {arr.shape[0]}.")
    arr.setflags(write=False)
    return arr


def optional_vec3(value: Optional[Sequence[float]]) -> Optional[np.ndarray]:
    if value is None:
        return None
    return to_vec3(value)


def to_readonly_array(value, dtype=np.float64) -> np.ndarray:
    arr = np.array(value, dtype=dtype)
    arr.setflags(write=False)
    return arr


def wrap_angle(angle):
    """Wrap an angle (or array of angles) into ``(-pi, pi]``.

    Parameters
    ----------
    angle: float or numpy.ndarray
        Angle(s) in radians.

    Returns
    -------
    float or numpy.ndarray
        Wrapped angle(s); scalars stay scalars.
    """
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=np.float64), 2 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def parse_vector(text: str, n: int = 3) -> Tuple[float, ...]:
    """Parse a comma separated vector such as ``"1.5,2,0.3"``.

    Raises
    ------
    ValueError
        Wrong number of components or a non-numeric component.
    """
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) != n:
        raise ValueError(f'Expected {n} comma-separated values; got "{text}".')
    values = tuple(float(p) for p in parts)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f'Non-finite component in "{text}".')
    return values
