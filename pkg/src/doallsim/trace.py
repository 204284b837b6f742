"""Run traces, metrics accounting, and their serialized forms.

A trace records every event needed to recompute the run's metrics offline:
crashes (with delivered-envelope counts), halts, phase transitions, task
executions, per-phase message totals, and optional per-sender delivery
details plus periodic list snapshots.  `account` recomputes RunMetrics from
the logs alone; the engine asserts it matches its running counters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ScheduleError


@dataclass(frozen=True)
class Envelope:
    """One point-to-point message: sender/receiver are 1-based ids."""

    sender: int
    receiver: int
    payload: object
    send_round: int


def crash_apply(decision, outbox: list[Envelope]) -> list[Envelope]:
    """Filter a crashing sender's outgoing envelopes to the delivered subset.

    delivered may be "all", "none", or an explicit list of receiver ids;
    explicit ids must match envelopes actually in the outbox.
    """
    for env in outbox:
        if env.sender != decision.victim:
            raise ScheduleError(
                f"outbox of {env.sender} handed to a decision for {decision.victim}")
    delivered = decision.delivered
    if delivered == "all":
        return list(outbox)
    if delivered == "none":
        return []
    if isinstance(delivered, (list, tuple, set)):
        have = {env.receiver for env in outbox}
        foreign = sorted(set(delivered) - have)
        if foreign:
            raise ScheduleError(
                f"delivered subset names receivers {foreign} with no envelope "
                f"from {decision.victim}")
        keep = set(delivered)
        return [env for env in outbox if env.receiver in keep]
    raise ScheduleError(f"unsupported delivered specification {delivered!r}")


@dataclass(frozen=True)
class RunMetrics:
    work: int
    messages: int
    effort: int
    termination_round: int
    tasks_completed: bool

    def to_dict(self) -> dict:
        return {
            "work": self.work,
            "messages": self.messages,
            "effort": self.effort,
            "termination_round": self.termination_round,
            "tasks_completed": self.tasks_completed,
        }


@dataclass
class Snapshot:
    """State sample at the end of a phase (task lists as packed bitsets)."""

    phase: int
    round: int
    item_words: np.ndarray   # (p, W) uint64
    item_cnt: np.ndarray     # (p,)
    proc_words: np.ndarray   # (p, WP)
    busy_words: np.ndarray   # (p, WP)
    crashed: np.ndarray      # (p,) bool
    halted: np.ndarray
    closing: np.ndarray


@dataclass
class RunTrace:
    p: int
    t: int
    config: dict
    rounds_per_phase: int = 3
    chunk_real: int = 1
    items_total: int = 0
    round_cap: int = 0
    incomplete: bool = False
    termination_round: int = 0
    max_degree: int = 0
    # event arrays (processors 0-based internally; exported 1-based)
    exec_round: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    exec_proc: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    exec_task: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    crash_round: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    crash_proc: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    crash_delivered: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    halt_round: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    halt_proc: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    halt_busy: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    halt_items: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    tr_round: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    tr_proc: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    phase_msgs: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    # messages outside generic phases (preparatory/checkpoint/final stages)
    extra_msg_round: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    extra_msg_count: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    # optional per-sender delivery detail (small runs)
    send_round: np.ndarray | None = None
    send_proc: np.ndarray | None = None
    send_targets: list[np.ndarray] | None = None
    send_stop: np.ndarray | None = None
    snapshots: list[Snapshot] = field(default_factory=list)
    part_bounds: dict = field(default_factory=dict)
    part_events: list[dict] = field(default_factory=list)

    def crashed_rounds(self) -> dict[int, int]:
        """0-based processor -> crash round."""
        return {int(v): int(r) for v, r in zip(self.crash_proc, self.crash_round)}

    def executed_tasks(self) -> np.ndarray:
        return np.unique(self.exec_task)

    def all_tasks_done(self) -> bool:
        if self.t == 0:
            return True
        done = self.executed_tasks()
        return done.size == self.t and done[0] == 1 and done[-1] == self.t


def account(trace: RunTrace) -> RunMetrics:
    """Recompute metrics from the event log alone."""
    t_end = trace.round_cap if trace.incomplete else trace.termination_round
    crashed = trace.crashed_rounds()
    work = 0
    for v in range(trace.p):
        work += min(crashed.get(v, t_end), t_end)
    messages = int(trace.phase_msgs.sum()) + int(trace.extra_msg_count.sum())
    return RunMetrics(
        work=work,
        messages=messages,
        effort=work + messages,
        termination_round=t_end,
        tasks_completed=trace.all_tasks_done() and not trace.incomplete,
    )


def _canon_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_metrics(metrics: RunMetrics, trace: RunTrace, path: str,
                  version_hash: str) -> None:
    doc = metrics.to_dict()
    doc["config"] = trace.config
    doc["version"] = version_hash
    doc["incomplete"] = trace.incomplete
    with open(path, "w") as fh:
        fh.write(_canon_json(doc) + "\n")


def write_trace_ndjson(trace: RunTrace, path: str, version_hash: str) -> None:
    """Newline-delimited JSON, one event per line, in deterministic order."""
    events: list[tuple] = []
    for r, v, tau in zip(trace.exec_round, trace.exec_proc, trace.exec_task):
        events.append((int(r), 2, {"e": "exec", "proc": int(v) + 1, "task": int(tau)}))
    for r, v in zip(trace.tr_round, trace.tr_proc):
        events.append((int(r), 3, {"e": "closing", "proc": int(v) + 1}))
    for r, v, d in zip(trace.crash_round, trace.crash_proc, trace.crash_delivered):
        events.append((int(r), 4, {"e": "crash", "proc": int(v) + 1,
                                   "delivered": int(d)}))
    for r, v, b, it in zip(trace.halt_round, trace.halt_proc,
                           trace.halt_busy, trace.halt_items):
        events.append((int(r), 5, {"e": "halt", "proc": int(v) + 1,
                                   "busy_left": int(b), "items_left": int(it)}))
    if trace.send_round is not None:
        for i in range(len(trace.send_round)):
            rec = {
                "e": "send",
                "proc": int(trace.send_proc[i]) + 1,
                "to": [int(x) + 1 for x in trace.send_targets[i]],
            }
            if trace.send_stop is not None and trace.send_stop[i] >= 0:
                rec["stop_to"] = int(trace.send_stop[i]) + 1
            events.append((int(trace.send_round[i]), 1, rec))
    for ev in trace.part_events:
        events.append((int(ev["round"]), 6, ev))
    events.sort(key=lambda e: (e[0], e[1], _canon_json(e[2])))
    with open(path, "w") as fh:
        header = {
            "e": "run",
            "p": trace.p,
            "t": trace.t,
            "rounds_per_phase": trace.rounds_per_phase,
            "round_cap": trace.round_cap,
            "incomplete": trace.incomplete,
            "termination_round": trace.termination_round,
            "config": trace.config,
            "version": version_hash,
        }
        fh.write(_canon_json(header) + "\n")
        for r, _, rec in events:
            rec = dict(rec)
            rec["round"] = r
            fh.write(_canon_json(rec) + "\n")
