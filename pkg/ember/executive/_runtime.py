import logging
from collections.abc import MutableMapping
from enum import Enum
from typing import Any, Callable, Dict, Iterator, Optional, Protocol

from attrs import define, field

from ember.executive._nodes import BtNode, Status

logger = logging.getLogger(__name__)


class Blackboard(MutableMapping):
    """Keyed value store shared by every node of one robot's tree."""

    def __init__(self, store: Optional[Dict[str, Any]] = None):
        self.store: Dict[str, Any] = {}
        if store is not None:
            for k, v in store.items():
                self[k] = v

    def __getitem__(self, key: str) -> Any:
        return self.store[key]

    def __setitem__(self, key: str, value: Any) -> None:
        if not isinstance(key, str):
            raise TypeError(f"Blackboard keys must be str; got {type(key)}.")
        self.store[key] = value

    def __delitem__(self, key: str) -> None:
        del self.store[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self.store)

    def __len__(self) -> int:
        return len(self.store)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k!r}: {v!r}" for k, v in self.store.items())
        return "Blackboard({" + inner + "})"


class Task(Protocol):
    """Long-running action behind a leaf."""

    def start(self, blackboard: Blackboard) -> None: ...

    def update(self, blackboard: Blackboard) -> Status: ...

    def halt(self, blackboard: Blackboard) -> None: ...


TaskFactory = Callable[[BtNode], Task]


class TaskState(str, Enum):
    IDLE = "idle"
    RUNNING = "running"
    FINISHED = "finished"


@define
class TaskHandle:
    """State machine of one leaf: ``idle -> running -> finished``."""

    task_id: str
    path: str
    state: TaskState = TaskState.IDLE
    result: Optional[Status] = None
    starts: int = 0
    """Number of times a task instance was started for this leaf."""

    halts: int = 0
    progress: Dict[str, Any] = field(factory=dict)
    task: Optional[Task] = field(default=None, repr=False)


@define
class TaskRuntime:
    """Maps task ids to factories and owns one :class:`TaskHandle` per leaf path."""

    factories: Dict[str, TaskFactory] = field(factory=dict)
    handles: Dict[str, TaskHandle] = field(factory=dict)

    def register(self, task_id: str, factory: TaskFactory) -> None:
        self.factories[task_id] = factory

    def handle(self, path: str, node: BtNode) -> TaskHandle:
        try:
            return self.handles[path]
        except KeyError:
            pass
        if node.task_id not in self.factories:
            raise KeyError(f'No task registered for "{node.task_id}".')
        handle = TaskHandle(node.task_id, path)
        self.handles[path] = handle
        return handle

    def run(self, path: str, node: BtNode, blackboard: Blackboard) -> Status:
        """Start the leaf's task unless it is already running, then update it once."""
        handle = self.handle(path, node)
        if handle.state is not TaskState.RUNNING:
            handle.task = self.factories[node.task_id](node)
            handle.task.start(blackboard)
            handle.state = TaskState.RUNNING
            handle.result = None
            handle.starts += 1
        assert handle.task is not None
        status = handle.task.update(blackboard)
        if status is not Status.RUNNING:
            handle.state = TaskState.FINISHED
            handle.result = status
        return status

    def halt(self, prefix: str, blackboard: Blackboard) -> None:
        """Cancel every running task at or below ``prefix``."""
        for path in sorted(self.handles):
            if path != prefix and not path.startswith(prefix + "/"):
                continue
            handle = self.handles[path]
            if handle.state is TaskState.RUNNING and handle.task is not None:
                logger.debug("Halting %s", path)
                handle.task.halt(blackboard)
                handle.halts += 1
            handle.state = TaskState.IDLE
