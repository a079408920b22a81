__all__ = [
    "Blackboard",
    "BtNode",
    "EVENT_COLUMNS",
    "Executive",
    "MISSION_TASKS",
    "NodeKind",
    "Status",
    "Task",
    "TaskFactory",
    "TaskHandle",
    "TaskRuntime",
    "TaskState",
    "build_fire_mission_tree",
    "dump_tree",
    "fallback",
    "force_success",
    "inverter",
    "leaf",
    "load_tree",
    "load_tree_file",
    "parallel",
    "retry",
    "sequence",
    "tick",
    "timeout",
]

from ember.executive._mission import MISSION_TASKS, build_fire_mission_tree
from ember.executive._nodes import (
    BtNode,
    NodeKind,
    Status,
    fallback,
    force_success,
    inverter,
    leaf,
    parallel,
    retry,
    sequence,
    timeout,
)
from ember.executive._parse import dump_tree, load_tree, load_tree_file
from ember.executive._runtime import Blackboard, Task, TaskFactory, TaskHandle, TaskRuntime, TaskState
from ember.executive._tick import EVENT_COLUMNS, Executive, tick
