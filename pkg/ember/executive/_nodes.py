import re
from enum import Enum
from typing import Tuple, Union

from attrs import field, frozen

from ember.exceptions import TreeStructureError

Number = Union[int, float]
Arg = Union[str, Number, Tuple[Number, ...]]

IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*\Z")


class Status(str, Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    RUNNING = "RUNNING"


class NodeKind(str, Enum):
    SEQUENCE = "Sequence"
    FALLBACK = "Fallback"
    PARALLEL = "Parallel"
    INVERTER = "Inverter"
    FORCE_SUCCESS = "ForceSuccess"
    RETRY = "Retry"
    TIMEOUT = "Timeout"
    LEAF = "Leaf"

    @property
    def is_composite(self) -> bool:
        return self in _COMPOSITES

    @property
    def is_decorator(self) -> bool:
        return self in _DECORATORS


_COMPOSITES = frozenset({NodeKind.SEQUENCE, NodeKind.FALLBACK, NodeKind.PARALLEL})
_DECORATORS = frozenset({NodeKind.INVERTER, NodeKind.FORCE_SUCCESS, NodeKind.RETRY, NodeKind.TIMEOUT})
_COUNT_ARG = frozenset({NodeKind.PARALLEL, NodeKind.RETRY, NodeKind.TIMEOUT})


def _to_arg(value) -> Arg:
    if isinstance(value, bool):
        raise TreeStructureError(msg=f"Boolean arguments are not supported: {value!r}.")
    if isinstance(value, (str, int, float)):
        return value
    return tuple(value)


@frozen
class BtNode:
    """Immutable behavior tree node; arity is checked at construction.

    Leaves carry the task id as their first argument.
    """

    kind: NodeKind = field(converter=NodeKind)
    children: Tuple["BtNode", ...] = field(default=(), converter=tuple)
    args: Tuple[Arg, ...] = field(default=(), converter=lambda a: tuple(_to_arg(x) for x in a))

    def __attrs_post_init__(self):
        kind, n = self.kind, len(self.children)
        if kind is NodeKind.LEAF:
            if n:
                raise TreeStructureError(msg=f"Leaf nodes cannot have children; got {n}.")
            if not self.args or not isinstance(self.args[0], str) or not IDENTIFIER.match(self.args[0]):
                raise TreeStructureError(msg="Leaf nodes need a task id as their first argument.")
        elif kind.is_decorator:
            if n != 1:
                raise TreeStructureError(msg=f"{kind.value} must have exactly 1 child; got {n}.")
        elif n < 1:
            raise TreeStructureError(msg=f"{kind.value} must have at least 1 child.")

        if kind in _COUNT_ARG:
            if len(self.args) != 1 or not isinstance(self.args[0], int) or self.args[0] < 1:
                raise TreeStructureError(msg=f"{kind.value} takes one positive integer argument.")
            if kind is NodeKind.PARALLEL and self.args[0] > n:
                raise TreeStructureError(msg=f"Parallel threshold {self.args[0]} exceeds its {n} children.")
        elif kind is not NodeKind.LEAF and self.args:
            raise TreeStructureError(msg=f"{kind.value} takes no arguments.")

        for child in self.children:
            if not isinstance(child, BtNode):
                raise TreeStructureError(msg=f"Children must be BtNode; got {type(child).__name__}.")

    @property
    def task_id(self) -> str:
        if self.kind is not NodeKind.LEAF:
            raise AttributeError("Only leaves have a task id.")
        return self.args[0]  # pyright: ignore[reportReturnType]

    @property
    def count(self) -> int:
        """Threshold, attempts or tick budget of ``Parallel``/``Retry``/``Timeout``."""
        return self.args[0]  # pyright: ignore[reportReturnType]

    @property
    def label(self) -> str:
        if self.kind is NodeKind.LEAF:
            return f"Leaf({self.task_id})"
        return self.kind.value

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


def sequence(*children: BtNode) -> BtNode:
    return BtNode(NodeKind.SEQUENCE, children)


def fallback(*children: BtNode) -> BtNode:
    return BtNode(NodeKind.FALLBACK, children)


def parallel(threshold: int, *children: BtNode) -> BtNode:
    return BtNode(NodeKind.PARALLEL, children, (threshold,))


def inverter(child: BtNode) -> BtNode:
    return BtNode(NodeKind.INVERTER, (child,))


def force_success(child: BtNode) -> BtNode:
    return BtNode(NodeKind.FORCE_SUCCESS, (child,))


def retry(attempts: int, child: BtNode) -> BtNode:
    return BtNode(NodeKind.RETRY, (child,), (attempts,))


def timeout(ticks: int, child: BtNode) -> BtNode:
    return BtNode(NodeKind.TIMEOUT, (child,), (ticks,))


def leaf(task_id: str, *args: Arg) -> BtNode:
    return BtNode(NodeKind.LEAF, (), (task_id, *args))
