"""Generic cooperative-task protocol: per-processor list state and phases.

Each processor keeps three shrinking sorted lists (outstanding tasks, active
processors, busy processors) and alternates between a working stage and a
closing stage.  A phase is three rounds: receive, compute, multicast.  These
functions are the plain-Python reference semantics; the round engine runs
the same logic over packed bitsets (see kernels.py) and is cross-checked
against this module in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .graphs import OverlayGraph, compact_threshold, flood_horizon

MAIN = "main"
CLOSING = "closing"


@dataclass
class ProcessorState:
    pid: int                      # 1-based id
    tasks: list[int]
    processors: list[int]
    busy: list[int]
    phase: str = MAIN
    done: bool = False
    selected_processor: int | None = None


@dataclass(frozen=True)
class ListsMessage:
    """List snapshot multicast in round 3; a bare stop signal carries no lists."""

    sender: int
    tasks: tuple[int, ...] | None = None
    processors: tuple[int, ...] | None = None
    busy: tuple[int, ...] | None = None
    stop: bool = False

    @property
    def has_lists(self) -> bool:
        return self.processors is not None


@dataclass
class PhaseResult:
    executed: int | None = None
    targets: list[int] = field(default_factory=list)
    message: ListsMessage | None = None
    stop_target: int | None = None
    halt: bool = False


def init_state(pid: int, p: int, t: int) -> ProcessorState:
    if not (1 <= pid <= p):
        raise ValueError(f"processor id {pid} outside [1, {p}]")
    return ProcessorState(
        pid=pid,
        tasks=list(range(1, t + 1)),
        processors=list(range(1, p + 1)),
        busy=list(range(1, p + 1)),
    )


def merge_update(
    state: ProcessorState,
    received: list[ListsMessage],
    silent_neighbors: set[int],
    include_tasks: bool = True,
) -> ProcessorState:
    """Apply the round-2 list updates from the received messages.

    A processor id is dropped when it is missing from any received
    processor list or when it is a silent neighbor; busy entries are
    additionally confined to the surviving processor list; a task id is
    dropped when missing from any received task list.  Closing phases call
    this with include_tasks=False.
    """
    listed = [m for m in received if m.has_lists]
    if listed:
        proc_keep = set.intersection(*(set(m.processors) for m in listed))
        busy_keep = set.intersection(*(set(m.busy) for m in listed))
    else:
        proc_keep = busy_keep = None
    state.processors = [
        x for x in state.processors
        if (proc_keep is None or x in proc_keep) and x not in silent_neighbors
    ]
    alive = set(state.processors)
    state.busy = [
        x for x in state.busy
        if (busy_keep is None or x in busy_keep) and x in alive
    ]
    if include_tasks and listed:
        task_keep = set.intersection(
            *(set(m.tasks) for m in listed if m.tasks is not None))
        state.tasks = [y for y in state.tasks if y in task_keep]
    return state


def _snapshot(state: ProcessorState, stop: bool = False) -> ListsMessage:
    return ListsMessage(
        sender=state.pid,
        tasks=tuple(state.tasks),
        processors=tuple(state.processors),
        busy=tuple(state.busy),
        stop=stop,
    )


def main_phase(
    state: ProcessorState,
    rule,
    rule_state,
    received: list[ListsMessage],
    silent_neighbors: set[int],
    neighbors: set[int],
) -> PhaseResult:
    """One working phase: merge, perform one task, evaluate the done triggers.

    The order of the compute-round steps is fixed: list merge, task step,
    busy/processors comparison, stop check, and finally the transition
    bookkeeping when done became true.
    """
    assert state.phase == MAIN
    merge_update(state, received, silent_neighbors, include_tasks=True)
    result = PhaseResult()
    if state.tasks:
        task = rule.select_task(state.pid, state.tasks, rule_state)
        state.tasks.remove(task)
        result.executed = task
    else:
        state.done = True
    if state.busy != state.processors:
        state.done = True
    if any(m.stop for m in received):
        state.done = True
    if state.done:
        if state.pid in state.busy:
            state.busy.remove(state.pid)
        state.tasks = []
        state.phase = CLOSING
    result.targets = sorted(neighbors & set(state.processors))
    result.message = _snapshot(state)
    return result


def considers_self_compact(state: ProcessorState, overlay: OverlayGraph, f: int) -> bool:
    """Estimated range (nodes within g(p) hops in the induced subgraph of the
    processor's own list, starting from itself) reaching ceil((p-f)/7)."""
    p = overlay.p
    horizon = flood_horizon(p)
    allowed = set(state.processors) | {state.pid}
    visited = {state.pid}
    frontier = [state.pid]
    for _ in range(horizon):
        nxt = []
        for u in frontier:
            for w in overlay.neighbors(u - 1):
                wid = int(w) + 1
                if wid in allowed and wid not in visited:
                    visited.add(wid)
                    nxt.append(wid)
        if not nxt:
            break
        frontier = nxt
    return len(visited) >= compact_threshold(p, f)


def closing_phase(
    state: ProcessorState,
    rule,
    received: list[ListsMessage],
    silent_neighbors: set[int],
    neighbors: set[int],
    overlay: OverlayGraph,
    f: int,
) -> PhaseResult:
    """One closing phase: merge processor/busy lists, notify one busy
    processor, halt when the busy list is exhausted or the range is too
    small.  Halting never short-circuits the phase: the stop signal and the
    final multicast are still sent."""
    assert state.phase == CLOSING
    merge_update(state, received, silent_neighbors, include_tasks=False)
    result = PhaseResult()
    if not considers_self_compact(state, overlay, f):
        result.halt = True
    if state.busy:
        sel = rule.select_busy(state.pid, state.busy)
        state.selected_processor = sel
        state.busy.remove(sel)
    else:
        state.selected_processor = state.pid
        result.halt = True
    result.stop_target = state.selected_processor
    result.targets = sorted(neighbors & set(state.processors))
    result.message = _snapshot(state, stop=False)
    return result
