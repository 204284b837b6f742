"""Deterministic synchronous round engine.

run_simulation drives a protocol instance over an overlay graph against an
adversary policy.  Generic (three-round-phase) protocols execute in spans of
whole phases inside the compiled kernel; the engine stops the kernel at
adversary intervention points, snapshot boundaries, and log growth, so the
policy observes global state with phase granularity while individual crash
rounds are honored exactly.  Identical (protocol, graph, adversary, seed)
inputs replay to bit-identical traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .adversaries import AdversaryContext, AdversaryPolicy, CrashDecision
from .errors import ParameterError, ScheduleError
from .graphs import OverlayGraph, compact_threshold, flood_horizon
from .rng import substream
from .rules import (BalanceLoadRule, PermutationRule, derive_pair,
                    load_fixed_permutations, pi2_domain)
from .trace import RunMetrics, RunTrace, Snapshot, account

_RULE_TAG = 0xA110
DETERMINISTIC_TABLE_SEED = 0x0D0A11F1EDBA5E64  # fixed code-shipped permutations


class BalanceLoad:
    name = "balance_load"
    kind = "generic"

    def __init__(self, p: int, t: int):
        self.p, self.t = p, t

    def make_rule(self, run_seed: int):
        return BalanceLoadRule(self.p)

    def to_config(self) -> dict:
        return {"algorithm": self.name}


class RandomizedPermutations:
    """Private pairs drawn uniformly from the run seed."""

    name = "randomized_permutations"
    kind = "generic"

    def __init__(self, p: int, t: int):
        self.p, self.t = p, t

    def make_rule(self, run_seed: int):
        seed = substream(run_seed, _RULE_TAG)
        pairs = [derive_pair(seed, pid, self.p, self.t)
                 for pid in range(1, self.p + 1)]
        return PermutationRule(self.p, self.t, pairs, self.name)

    def to_config(self) -> dict:
        return {"algorithm": self.name}


class DeterministicPermutations:
    """Pairs fixed in advance: from a table file or a pinned table seed,
    independent of the run seed."""

    name = "deterministic_permutations"
    kind = "generic"

    def __init__(self, p: int, t: int, table_path: str | None = None,
                 table_seed: int = DETERMINISTIC_TABLE_SEED):
        self.p, self.t = p, t
        self.table_path = table_path
        self.table_seed = table_seed
        if table_path is not None:
            self.pairs = load_fixed_permutations(table_path, p, t)
        else:
            self.pairs = [derive_pair(table_seed, pid, p, t)
                          for pid in range(1, p + 1)]

    def make_rule(self, run_seed: int):
        return PermutationRule(self.p, self.t, self.pairs, self.name)

    def to_config(self) -> dict:
        cfg = {"algorithm": self.name}
        if self.table_path is not None:
            cfg["permutations"] = {"path": self.table_path}
        else:
            cfg["permutations"] = {"seed": self.table_seed}
        return cfg


def default_round_cap(p: int, t: int, rounds_per_phase: int = 3) -> int:
    """Ten times the worst-case t+p phase bound."""
    return 10 * (t + p + 2) * rounds_per_phase


@dataclass
class TraceOptions:
    log_sends: bool | None = None     # None: on for small runs
    sampling: bool | None = None      # periodic list snapshots
    snapshot_budget: int = 1 << 28    # bytes of snapshot memory allowed

    def resolve(self, p: int, t: int, round_cap: int) -> tuple[bool, bool]:
        log_sends = self.log_sends
        if log_sends is None:
            log_sends = p * (round_cap // 3 + 1) <= 1 << 20
        sampling = self.sampling
        if sampling is None:
            words = max(1, (t + 63) // 64)
            epochs = (round_cap // 3) // flood_horizon(p) + 2
            sampling = p * words * 8 * epochs <= self.snapshot_budget
        return log_sends, sampling


class _Grow:
    """Append-friendly typed buffer."""

    def __init__(self, dtype, cap=1024):
        self.arr = np.zeros(cap, dtype=dtype)

    def grow_to(self, need: int) -> np.ndarray:
        if need > self.arr.size:
            new = np.zeros(max(need, self.arr.size * 2), dtype=self.arr.dtype)
            new[:self.arr.size] = self.arr
            self.arr = new
        return self.arr


class GenericRunner:
    """Array state + kernel driver for one generic protocol execution.

    items are the selectable units (tasks, or chunks of chunk_real tasks);
    phases span chunk_real + 2 rounds.
    """

    def __init__(self, p: int, items_total: int, chunk_real: int, task_total: int,
                 overlay: OverlayGraph, rule, f: int, round_cap: int,
                 log_sends: bool, sampling: bool):
        self.p = p
        self.items_total = items_total
        self.chunk_real = chunk_real
        self.task_total = task_total
        self.overlay = overlay
        self.rule = rule
        self.f = f
        self.round_cap = round_cap
        self.rpp = chunk_real + 2
        self.horizon = flood_horizon(p)
        self.compact_thr = compact_threshold(p, f)
        self.log_sends = log_sends
        self.sampling = sampling

        self.W = max(1, (items_total + 63) // 64)
        self.WP = max(1, (p + 63) // 64)
        self.NB = max(1, (self.W + 63) // 64)
        self.NS = max(1, (self.NB + 63) // 64)

        self.item_words = np.zeros((p, self.W), dtype=np.uint64)
        if items_total:
            full, rem = divmod(items_total, 64)
            self.item_words[:, :full] = np.uint64(0xFFFFFFFFFFFFFFFF)
            if rem:
                self.item_words[:, full] = np.uint64((1 << rem) - 1)
        self.blk = np.zeros((p, self.NB), dtype=np.int32)
        self.sup = np.zeros((p, self.NS), dtype=np.int32)
        self.item_cnt = np.zeros(p, dtype=np.int64)
        for v in range(p):
            kernels.rs_rebuild(self.item_words, self.blk, self.sup,
                               self.item_cnt, v)
        self.proc_words = np.zeros((p, self.WP), dtype=np.uint64)
        fullp, remp = divmod(p, 64)
        self.proc_words[:, :fullp] = np.uint64(0xFFFFFFFFFFFFFFFF)
        if remp:
            self.proc_words[:, fullp] = np.uint64((1 << remp) - 1)
        self.busy_words = self.proc_words.copy()
        self.crashed = np.zeros(p, dtype=np.bool_)
        self.halted = np.zeros(p, dtype=np.bool_)
        self.closing = np.zeros(p, dtype=np.bool_)
        self.selected_proc = np.full(p, -1, dtype=np.int32)

        # overlay in CSR and bitset form
        self.nbr_indptr = overlay.indptr.astype(np.int64)
        self.nbr_indices = overlay.indices.astype(np.int32)
        self.nbr_words = np.zeros((p, self.WP), dtype=np.uint64)
        for v in range(p):
            for u in overlay.neighbors(v):
                self.nbr_words[v, int(u) >> 6] |= np.uint64(1) << np.uint64(int(u) & 63)
        self.max_deg = max(1, overlay.max_degree)

        # selection-rule arrays
        self.rule_kind = rule.kind
        bufsize = 2048
        self.perm_seed = np.zeros(p, dtype=np.uint64)
        self.perm_mode = np.zeros(p, dtype=np.bool_)
        self.perm_thresh = np.zeros(p, dtype=np.uint64)
        self.buf_task = np.zeros((p, bufsize), dtype=np.int64)
        self.buf_key = np.zeros((p, bufsize), dtype=np.uint64)
        self.buf_pos = np.zeros(p, dtype=np.int32)
        self.buf_len = np.zeros(p, dtype=np.int32)
        self.has_keys = False
        self.keys = np.zeros((1, 1), dtype=np.uint64)
        self.pi1_inv = np.zeros((1, 1), dtype=np.int32)
        self.pi2_trigger = 0
        if isinstance(rule, PermutationRule):
            self.pi2_trigger = rule.domain
            self.pi1_inv = np.zeros((p, p), dtype=np.int32)
            explicit = any(pair.pi2_images is not None for pair in rule.pairs)
            if explicit:
                if items_total > rule.domain:
                    raise ParameterError(
                        "explicit permutation tables need the item count within "
                        "the pi2 domain")
                self.has_keys = True
                self.keys = np.zeros((p, items_total + 1), dtype=np.uint64)
            for v in range(p):
                pair = rule.pairs[v]
                inv = np.empty(p + 1, dtype=np.int32)
                inv[pair.pi1] = np.arange(p, dtype=np.int32)
                self.pi1_inv[v] = inv[1:]
                if explicit:
                    self.keys[v, 1:] = pair.pi2_order_keys(items_total)
                else:
                    self.perm_seed[v] = np.uint64(pair.pi2_seed)

        # message double buffers
        self.sent_alive = np.zeros((2, p), dtype=np.bool_)
        self.sent_targets = np.zeros((2, p, self.WP), dtype=np.uint64)
        self.sent_proc = np.zeros((2, p, self.WP), dtype=np.uint64)
        self.sent_busy = np.zeros((2, p, self.WP), dtype=np.uint64)
        self.sent_empty = np.zeros((2, p), dtype=np.bool_)
        self.stop_inbox = np.zeros((2, p), dtype=np.bool_)
        delta_cap = max(4096, 4 * p + 2 * self.max_deg * p)
        self.delta_data = np.zeros((2, delta_cap), dtype=np.int32)
        self.delta_indptr = np.zeros((2, p + 1), dtype=np.int64)

        # logs
        self.exec_round = _Grow(np.int64, max(1024, 4 * p * chunk_real))
        self.exec_proc = _Grow(np.int32, max(1024, 4 * p * chunk_real))
        self.exec_task = _Grow(np.int32, max(1024, 4 * p * chunk_real))
        self.tr_round = _Grow(np.int64, p + 4)
        self.tr_proc = _Grow(np.int32, p + 4)
        self.ha_round = _Grow(np.int64, p + 4)
        self.ha_proc = _Grow(np.int32, p + 4)
        self.ha_busy = _Grow(np.int32, p + 4)
        self.ha_items = _Grow(np.int64, p + 4)
        self.ca_round = _Grow(np.int64, p + 4)
        self.ca_proc = _Grow(np.int32, p + 4)
        self.ca_count = _Grow(np.int32, p + 4)
        self.ca_mask = np.zeros((p + 4, self.WP), dtype=np.uint64)
        self.ca_stop = np.full(p + 4, -1, dtype=np.int32)
        sd_cap = (round_cap // self.rpp + 2) * p if log_sends else 1
        self.sd_round = np.zeros(sd_cap, dtype=np.int64)
        self.sd_proc = np.zeros(sd_cap, dtype=np.int32)
        self.sd_mask = np.zeros((sd_cap, self.WP), dtype=np.uint64)
        self.sd_stop = np.full(sd_cap, -1, dtype=np.int32)
        self.state_i64 = np.zeros(16, dtype=np.int64)
        self.phase_msgs: list[np.ndarray] = []
        self.snapshots: list[Snapshot] = []

        # crash schedule (per-span)
        self._empty_sched = (
            np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int32),
            np.zeros(0, dtype=np.int8), np.zeros(0, dtype=np.uint64),
            np.zeros((0, self.WP), dtype=np.uint64),
        )
        self.phase = 1            # next phase to execute
        self.terminated = False
        self.hit_round_cap = False
        if sampling:
            self._take_snapshot()

    # -- helpers ------------------------------------------------------------

    def processors_of(self, v: int) -> list[int]:
        """1-based list contents of row v's processor list."""
        out = []
        for w in range(self.WP):
            word = int(self.proc_words[v, w])
            while word:
                low = word & -word
                out.append((w << 6) + low.bit_length())
                word ^= low
        return out

    def _take_snapshot(self) -> None:
        self.snapshots.append(Snapshot(
            phase=self.phase - 1,
            round=(self.phase - 1) * self.rpp,
            item_words=self.item_words.copy(),
            item_cnt=self.item_cnt.copy(),
            proc_words=self.proc_words.copy(),
            busy_words=self.busy_words.copy(),
            crashed=self.crashed.copy(),
            halted=self.halted.copy(),
            closing=self.closing.copy(),
        ))

    def _sched_arrays(self, decisions: list[CrashDecision]):
        if not decisions:
            return self._empty_sched
        decisions = sorted(decisions, key=lambda d: (d.round, d.victim))
        n = len(decisions)
        sc_round = np.zeros(n, dtype=np.int64)
        sc_victim = np.zeros(n, dtype=np.int32)
        sc_kind = np.zeros(n, dtype=np.int8)
        sc_seed = np.zeros(n, dtype=np.uint64)
        sc_mask = np.zeros((n, self.WP), dtype=np.uint64)
        for i, d in enumerate(decisions):
            if not (1 <= d.victim <= self.p):
                raise ScheduleError(f"victim {d.victim} out of range")
            sc_round[i] = d.round
            sc_victim[i] = d.victim - 1
            delivered = d.delivered
            send_round = d.round % self.rpp == 0
            if isinstance(delivered, (list, tuple, set)):
                if delivered and not send_round:
                    raise ScheduleError(
                        f"round {d.round} is not a send round; no envelopes exist")
                sc_kind[i] = kernels.DELIVER_MASK
                for rid in delivered:
                    if not (1 <= rid <= self.p):
                        raise ScheduleError(f"delivered id {rid} out of range")
                    sc_mask[i, (rid - 1) >> 6] |= np.uint64(1) << np.uint64((rid - 1) & 63)
            elif delivered == "all":
                sc_kind[i] = kernels.DELIVER_ALL
            elif delivered == "none":
                sc_kind[i] = kernels.DELIVER_NONE
            elif delivered == "half":
                sc_kind[i] = kernels.DELIVER_HALF
                sc_seed[i] = np.uint64(d.seed & ((1 << 64) - 1))
            else:
                raise ScheduleError(f"bad delivered spec {delivered!r}")
        return sc_round, sc_victim, sc_kind, sc_seed, sc_mask

    def _verify_explicit_delivery(self, decisions: list[CrashDecision]) -> None:
        """A scripted delivered subset must name real envelopes."""
        explicit = {(d.round, d.victim - 1): d for d in decisions
                    if isinstance(d.delivered, (list, tuple, set))}
        if not explicit:
            return
        n = int(self.state_i64[kernels.SI_CA])
        for i in range(n):
            key = (int(self.ca_round.arr[i]), int(self.ca_proc.arr[i]))
            d = explicit.pop(key, None)
            if d is None:
                continue
            actual = set()
            for w in range(self.WP):
                word = int(self.ca_mask[i, w])
                while word:
                    low = word & -word
                    actual.add((w << 6) + low.bit_length())
                    word ^= low
            if self.ca_stop[i] >= 0:
                actual.add(int(self.ca_stop[i]) + 1)
            foreign = sorted(set(d.delivered) - actual)
            if foreign:
                raise ScheduleError(
                    f"delivered subset for processor {d.victim} at round "
                    f"{d.round} names receivers {foreign} with no envelope")

    # -- span execution -----------------------------------------------------

    def run_phases(self, max_phases: int, decisions: list[CrashDecision]) -> int:
        """Execute up to max_phases phases; returns kernel status."""
        sched = self._sched_arrays(decisions)
        ca_need = int(self.state_i64[kernels.SI_CA]) + len(decisions) + 1
        self.ca_round.grow_to(ca_need)
        self.ca_proc.grow_to(ca_need)
        self.ca_count.grow_to(ca_need)
        if ca_need > self.ca_mask.shape[0]:
            grown = np.zeros((max(ca_need, 2 * self.ca_mask.shape[0]), self.WP),
                             dtype=np.uint64)
            grown[:self.ca_mask.shape[0]] = self.ca_mask
            self.ca_mask = grown
            grown_stop = np.full(self.ca_mask.shape[0], -1, dtype=np.int32)
            grown_stop[:self.ca_stop.shape[0]] = self.ca_stop
            self.ca_stop = grown_stop
        while True:
            span_msgs = np.zeros(max_phases, dtype=np.int64)
            status, done = kernels.run_phases(
                self.p, self.WP, self.chunk_real, self.items_total,
                self.chunk_real, self.task_total,
                self.phase, max_phases, self.round_cap,
                self.rule_kind, self.pi2_trigger, self.horizon, self.compact_thr,
                self.nbr_indptr, self.nbr_indices, self.nbr_words, self.max_deg,
                self.item_words, self.blk, self.sup, self.item_cnt,
                self.proc_words, self.busy_words,
                self.crashed, self.halted, self.closing, self.selected_proc,
                self.perm_mode, self.perm_thresh, self.perm_seed,
                self.buf_task, self.buf_key, self.buf_pos, self.buf_len,
                self.has_keys, self.keys, self.pi1_inv,
                self.sent_alive, self.sent_targets, self.sent_proc,
                self.sent_busy, self.sent_empty,
                self.delta_data, self.delta_indptr, self.stop_inbox,
                *sched,
                self.exec_round.arr, self.exec_proc.arr, self.exec_task.arr,
                self.tr_round.arr, self.tr_proc.arr,
                self.ha_round.arr, self.ha_proc.arr, self.ha_busy.arr,
                self.ha_items.arr,
                self.ca_round.arr, self.ca_proc.arr, self.ca_count.arr,
                self.ca_mask, self.ca_stop,
                self.log_sends, self.sd_round, self.sd_proc, self.sd_mask,
                self.sd_stop,
                span_msgs, self.state_i64,
            )
            if done:
                self.phase_msgs.append(span_msgs[:done].copy())
                self.phase += done
                max_phases -= done
            if status == kernels.GROW_EXEC:
                need = int(self.state_i64[kernels.SI_EXEC]) \
                    + 4 * self.p * self.chunk_real
                self.exec_round.grow_to(need)
                self.exec_proc.grow_to(need)
                self.exec_task.grow_to(need)
                continue
            if status == kernels.GROW_DELTA:
                prev_total = int(self.delta_indptr[:, self.p].max())
                need = 2 * (self.p + self.max_deg * prev_total + 16)
                grown = np.zeros((2, need), dtype=np.int32)
                grown[:, :self.delta_data.shape[1]] = self.delta_data
                self.delta_data = grown
                continue
            if status == kernels.TERMINATED:
                self.terminated = True
            elif status == kernels.ROUND_CAP:
                self.hit_round_cap = True
            self._verify_explicit_delivery(decisions)
            return status

    # -- views for adversaries ----------------------------------------------

    def is_active(self, pid: int) -> bool:
        return not (self.crashed[pid - 1] or self.halted[pid - 1])

    def active_processors(self) -> list[int]:
        return [v + 1 for v in range(self.p)
                if not (self.crashed[v] or self.halted[v])]

    def noncrashed_processors(self) -> list[int]:
        return [v + 1 for v in range(self.p) if not self.crashed[v]]

    def in_checkpoint_proposal_round(self, r: int) -> bool:
        return False

    def coordinator_heads(self) -> list[int]:
        return []


def drive_generic(runner: GenericRunner, adversary: AdversaryPolicy,
                  phase_limit: int | None = None) -> None:
    """Advance a runner until termination, round cap, or a phase limit,
    consulting the adversary at its declared intervention rounds."""
    g = runner.horizon
    while not (runner.terminated or runner.hit_round_cap):
        if phase_limit is not None and runner.phase > phase_limit:
            return
        cur_round = (runner.phase - 1) * runner.rpp
        nxt = adversary.next_intervention(cur_round)
        # phases until the next stop: intervention, sampling edge, or limit
        horizon_phase = runner.phase + (1 << 16)
        if phase_limit is not None:
            horizon_phase = min(horizon_phase, phase_limit + 1)
        if runner.sampling:
            next_edge = ((runner.phase - 1) // g + 1) * g + 1
            horizon_phase = min(horizon_phase, next_edge)
        decisions: list[CrashDecision] = []
        if nxt is not None:
            nxt_phase = (nxt - 1) // runner.rpp + 1
            if nxt_phase < runner.phase:
                nxt_phase = runner.phase
            if nxt_phase == runner.phase:
                r0 = (runner.phase - 1) * runner.rpp + 1
                rs = r0 + runner.rpp - 1
                decisions = adversary.decide(runner, r0, rs)
                for d in decisions:
                    if not (r0 <= d.round <= rs):
                        raise ScheduleError(
                            f"decision for round {d.round} outside [{r0}, {rs}]")
                horizon_phase = runner.phase + 1
            else:
                horizon_phase = min(horizon_phase, nxt_phase)
        span = horizon_phase - runner.phase
        runner.run_phases(span, decisions)
        if runner.sampling and not (runner.terminated or runner.hit_round_cap) \
                and (runner.phase - 1) % g == 0:
            runner._take_snapshot()
    if runner.sampling:
        runner._take_snapshot()


def _assemble_trace(runner: GenericRunner, config: dict,
                    task_total: int) -> RunTrace:
    s = runner.state_i64
    n_exec = int(s[kernels.SI_EXEC])
    n_tr = int(s[kernels.SI_TR])
    n_ha = int(s[kernels.SI_HA])
    n_ca = int(s[kernels.SI_CA])
    n_sd = int(s[kernels.SI_SD])
    trace = RunTrace(
        p=runner.p,
        t=task_total,
        config=config,
        rounds_per_phase=runner.rpp,
        chunk_real=runner.chunk_real,
        items_total=runner.items_total,
        round_cap=runner.round_cap,
        incomplete=runner.hit_round_cap,
        termination_round=int(s[kernels.SI_TERM]),
        max_degree=runner.overlay.max_degree,
        exec_round=runner.exec_round.arr[:n_exec].copy(),
        exec_proc=runner.exec_proc.arr[:n_exec].copy(),
        exec_task=runner.exec_task.arr[:n_exec].copy(),
        crash_round=runner.ca_round.arr[:n_ca].copy(),
        crash_proc=runner.ca_proc.arr[:n_ca].copy(),
        crash_delivered=runner.ca_count.arr[:n_ca].copy(),
        halt_round=runner.ha_round.arr[:n_ha].copy(),
        halt_proc=runner.ha_proc.arr[:n_ha].copy(),
        halt_busy=runner.ha_busy.arr[:n_ha].copy(),
        halt_items=runner.ha_items.arr[:n_ha].copy(),
        tr_round=runner.tr_round.arr[:n_tr].copy(),
        tr_proc=runner.tr_proc.arr[:n_tr].copy(),
        phase_msgs=(np.concatenate(runner.phase_msgs)
                    if runner.phase_msgs else np.zeros(0, np.int64)),
        snapshots=runner.snapshots,
    )
    if runner.log_sends:
        trace.send_round = runner.sd_round[:n_sd].copy()
        trace.send_proc = runner.sd_proc[:n_sd].copy()
        trace.send_stop = runner.sd_stop[:n_sd].copy()
        targets = []
        for i in range(n_sd):
            ids = []
            for w in range(runner.WP):
                word = int(runner.sd_mask[i, w])
                while word:
                    low = word & -word
                    ids.append((w << 6) + low.bit_length() - 1)
                    word ^= low
            targets.append(np.asarray(ids, dtype=np.int32))
        trace.send_targets = targets
    return trace


def run_simulation(protocol, graph: OverlayGraph, adversary: AdversaryPolicy,
                   seed: int, round_cap: int | None = None,
                   options: TraceOptions | None = None,
                   f: int | None = None) -> tuple[RunTrace, RunMetrics]:
    """Execute the protocol to completion; returns (trace, metrics)."""
    options = options or TraceOptions()
    p, t = protocol.p, protocol.t
    if f is None:
        f = graph.f
    if protocol.kind == "effort":
        from .effort import run_effort_priority
        return run_effort_priority(protocol, graph, adversary, seed,
                                   round_cap, options)
    if round_cap is None:
        round_cap = default_round_cap(p, t)
    log_sends, sampling = options.resolve(p, t, round_cap)
    rule = protocol.make_rule(seed)
    runner = GenericRunner(p, t, 1, t, graph, rule, f, round_cap,
                           log_sends, sampling)
    ctx = AdversaryContext(p=p, t=t, f=f, seed=seed, round_cap=round_cap,
                           horizon_hint=3 * (t // max(1, p) + p + 8))
    adversary.reset(ctx)
    if hasattr(adversary, "attach_grid"):
        adversary.attach_grid(runner.rpp)
    drive_generic(runner, adversary)
    config = dict(protocol.to_config())
    config.update({
        "p": p, "t": t, "f": f, "seed": seed, "round_cap": round_cap,
        "adversary": getattr(adversary, "name", "none"),
        "overlay": graph.meta_dict(),
    })
    trace = _assemble_trace(runner, config, t)
    metrics = account(trace)
    assert metrics.messages == int(runner.state_i64[kernels.SI_MSG])
    return trace, metrics
