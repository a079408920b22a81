import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from attrs import define, field

from ember.executive._nodes import BtNode, NodeKind, Status
from ember.executive._runtime import Blackboard, TaskRuntime

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ("tick", "node_path", "status")

_INVERT = {Status.SUCCESS: Status.FAILURE, Status.FAILURE: Status.SUCCESS, Status.RUNNING: Status.RUNNING}


def child_path(parent: str, index: int, node: BtNode) -> str:
    return f"{parent}/{index}:{node.label}"


def root_path(node: BtNode) -> str:
    return f"0:{node.label}"


@define
class Executive:
    """Ticks one tree; composite memory and decorator counters live here, keyed by node path."""

    tree: BtNode
    runtime: TaskRuntime
    blackboard: Blackboard = field(factory=Blackboard)
    events: List[Tuple[int, str, str]] = field(factory=list)
    tick_count: int = 0
    _memory: Dict[str, int] = field(factory=dict, init=False, repr=False)
    _parallel: Dict[str, Dict[int, Status]] = field(factory=dict, init=False, repr=False)
    _last: Optional[Status] = field(default=None, init=False, repr=False)
    _current_tick: int = field(default=0, init=False, repr=False)

    @property
    def status(self) -> Optional[Status]:
        """Status returned by the most recent tick."""
        return self._last

    def tick(self, tick: Optional[int] = None) -> Status:
        """Traverse the tree once from the root."""
        if tick is None:
            tick = self.tick_count
        self.tick_count = tick + 1
        self._current_tick = tick
        self._last = self._visit(self.tree, root_path(self.tree))
        return self._last

    def halt(self) -> None:
        """Cancel every running task and forget all composite memory."""
        self._halt(root_path(self.tree))

    def _halt(self, path: str) -> None:
        self.runtime.halt(path, self.blackboard)
        for store in (self._memory, self._parallel):
            for key in [k for k in store if k == path or k.startswith(path + "/")]:
                del store[key]

    def _visit(self, node: BtNode, path: str) -> Status:
        kind = node.kind
        if kind is NodeKind.LEAF:
            status = self.runtime.run(path, node, self.blackboard)
        elif kind is NodeKind.SEQUENCE:
            status = self._ordered(node, path, Status.SUCCESS)
        elif kind is NodeKind.FALLBACK:
            status = self._ordered(node, path, Status.FAILURE)
        elif kind is NodeKind.PARALLEL:
            status = self._parallel_tick(node, path)
        elif kind is NodeKind.INVERTER:
            status = _INVERT[self._visit(node.children[0], child_path(path, 0, node.children[0]))]
        elif kind is NodeKind.FORCE_SUCCESS:
            child = self._visit(node.children[0], child_path(path, 0, node.children[0]))
            status = Status.RUNNING if child is Status.RUNNING else Status.SUCCESS
        elif kind is NodeKind.RETRY:
            status = self._retry(node, path)
        elif kind is NodeKind.TIMEOUT:
            status = self._timeout(node, path)
        else:  # pragma: no cover
            raise NotImplementedError(kind)
        self.events.append((self._current_tick, path, status.value))
        return status

    def _ordered(self, node: BtNode, path: str, proceed: Status) -> Status:
        """Sequence (``proceed=SUCCESS``) or Fallback (``proceed=FAILURE``), both with memory."""
        start = self._memory.get(path, 0)
        for i in range(start, len(node.children)):
            child = node.children[i]
            status = self._visit(child, child_path(path, i, child))
            if status is Status.RUNNING:
                self._memory[path] = i
                return status
            if status is not proceed:
                self._memory.pop(path, None)
                return status
        self._memory.pop(path, None)
        return proceed

    def _parallel_tick(self, node: BtNode, path: str) -> Status:
        results = self._parallel.setdefault(path, {})
        for i, child in enumerate(node.children):
            if i in results:
                continue
            status = self._visit(child, child_path(path, i, child))
            if status is not Status.RUNNING:
                results[i] = status
        successes = sum(s is Status.SUCCESS for s in results.values())
        failures = sum(s is Status.FAILURE for s in results.values())
        threshold = node.count
        if successes >= threshold:
            outcome = Status.SUCCESS
        elif failures > len(node.children) - threshold:
            outcome = Status.FAILURE
        else:
            return Status.RUNNING
        for i, child in enumerate(node.children):
            if i not in results:
                self._halt(child_path(path, i, child))
        del self._parallel[path]
        return outcome

    def _retry(self, node: BtNode, path: str) -> Status:
        child = node.children[0]
        cpath = child_path(path, 0, child)
        attempts_key = path + "/#attempts"
        while True:
            status = self._visit(child, cpath)
            if status is not Status.FAILURE:
                if status is Status.SUCCESS:
                    self._memory.pop(attempts_key, None)
                return status
            attempts = self._memory.get(attempts_key, 0) + 1
            if attempts >= node.count:
                self._memory.pop(attempts_key, None)
                return Status.FAILURE
            self._memory[attempts_key] = attempts
            self._halt(cpath)

    def _timeout(self, node: BtNode, path: str) -> Status:
        child = node.children[0]
        cpath = child_path(path, 0, child)
        ticks_key = path + "/#ticks"
        elapsed = self._memory.get(ticks_key, 0)
        if elapsed >= node.count:
            logger.info("%s expired after %d ticks", path, elapsed)
            self._memory.pop(ticks_key, None)
            self._halt(cpath)
            return Status.FAILURE
        self._memory[ticks_key] = elapsed + 1
        status = self._visit(child, cpath)
        if status is not Status.RUNNING:
            self._memory.pop(ticks_key, None)
        return status

    def write_events(self, file: Union[str, Path]) -> None:
        with Path(file).open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(EVENT_COLUMNS)
            writer.writerows(self.events)


def tick(tree: BtNode, blackboard: Blackboard, runtime: TaskRuntime) -> Status:
    """Tick ``tree`` once with fresh composite memory.

    Sequence and Fallback progress, Retry attempts and Timeout counters start from zero on every
    call, so each call evaluates the tree from its first child again. Running leaf tasks persist in
    ``runtime`` by node path. Keep an :class:`Executive` to carry composite memory across ticks.
    """
    return Executive(tree, runtime, blackboard).tick()
