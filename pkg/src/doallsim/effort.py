"""Effort-optimized hybrid protocol.

Three stages: a chunked permutation protocol whose messages are batched per
chunk (one multicast after delta1 tasks), a checkpointing stage where the
survivors agree on a common processor list through coordinator proposals
(four-round phases, repeated p - f1 times), and a completion stage where
the renamed survivors finish all tasks under a rotating coordinator.

The completion stage is a stand-in with the classic coordinator-based
contract (work O(t + q(f+1)), messages O(q(f+1)) for q participants): the
acting coordinator partitions the outstanding tasks evenly among the
processors it heard from, everyone works silently through the block, and
silence at the expected reassignment round promotes the next processor of
the agreed list.  Participants that miss an assignment (a coordinator crash
mid-multicast) probe forward through the list, go passive after a full
sweep, and are pulled back in by reports that carry stray ids, so
completion and halting survive any crash pattern with one survivor.
"""

from __future__ import annotations

import math

import numpy as np

from .adversaries import AdversaryContext, AdversaryPolicy, CrashDecision
from .engine import (DETERMINISTIC_TABLE_SEED, GenericRunner, TraceOptions,
                     _assemble_trace, drive_generic)
from .errors import ParameterError, ScheduleError
from .graphs import OverlayGraph, build_overlay
from .rng import mix64
from .rules import PermutationRule, derive_pair, load_fixed_permutations
from .trace import RunMetrics, RunTrace, account
from dataclasses import dataclass

DEFAULT_A = 0.23
DEFAULT_CT = 3.0  # pinned by tools/calibrate_ct.py
RHO = 13.5


def alpha_upper_bound(delta0: int) -> float:
    """Admissible exponent ceiling 1/(1 + 2*log_rho(delta0))."""
    return 1.0 / (1.0 + 2.0 * math.log(delta0) / math.log(RHO))


@dataclass(frozen=True)
class EffortParams:
    a: float
    f1: int
    delta1: int
    chunk_size: int
    t1: int
    ct: float

    def to_dict(self) -> dict:
        return {"a": self.a, "f1": self.f1, "delta1": self.delta1,
                "chunk_size": self.chunk_size, "t1": self.t1, "ct": self.ct}


def derive_params(p: int, t: int, a: float = DEFAULT_A, ct: float = DEFAULT_CT,
                  delta0: int = 74, overlay: OverlayGraph | None = None,
                  graph_mode: str = "random_regular",
                  seed: int = 0) -> tuple[EffortParams, OverlayGraph]:
    """Crash threshold, chunk size, and stage-one round budget from (p, t, a)."""
    bound = alpha_upper_bound(delta0)
    if not (0 < a < 1) or a >= bound:
        raise ParameterError(
            f"a={a} outside (0, {bound:.4f}) for base degree {delta0}")
    f1 = max(0, p - math.ceil(p ** (1.0 - a)))
    if overlay is None:
        overlay = build_overlay(p, f1, delta0=delta0, mode=graph_mode, seed=seed)
    delta1 = max(1, overlay.max_degree)
    lg2 = math.log2(p) if p > 1 else 1.0
    t1 = math.ceil(ct * ((t + p) / max(1, p - f1) + delta1 * lg2 * lg2))
    return EffortParams(a=a, f1=f1, delta1=delta1, chunk_size=delta1,
                        t1=t1, ct=ct), overlay


class EffortPriority:
    name = "effort_priority"
    kind = "effort"

    def __init__(self, p: int, t: int, a: float = DEFAULT_A,
                 ct: float = DEFAULT_CT, delta0: int = 6,
                 table_path: str | None = None,
                 table_seed: int = DETERMINISTIC_TABLE_SEED):
        self.p, self.t = p, t
        self.a, self.ct, self.delta0 = a, ct, delta0
        self.table_path = table_path
        self.table_seed = table_seed

    def chunk_rule(self, n_items: int) -> PermutationRule:
        if self.table_path is not None:
            pairs = load_fixed_permutations(self.table_path, self.p, n_items)
        else:
            pairs = [derive_pair(self.table_seed, pid, self.p, n_items)
                     for pid in range(1, self.p + 1)]
        return PermutationRule(self.p, n_items, pairs, "deterministic_permutations")

    def to_config(self) -> dict:
        return {"algorithm": self.name, "a": self.a, "ct": self.ct,
                "delta0": self.delta0}


# ---------------------------------------------------------------------------
# checkpointing stage (survivor agreement, four-round phases)

PREP, PROPOSE, RESPOND, ADOPT = "prep", "propose", "respond", "adopt"


def _filter_recipients(rnd: int, sender: int, recipients: list[int],
                       decision: CrashDecision | None) -> set[int]:
    """Receivers that a (possibly crashing) sender actually reaches."""
    if decision is None:
        return set(recipients)
    delivered = decision.delivered
    if delivered == "none":
        return set()
    if delivered == "all":
        return set(recipients)
    if delivered == "half":
        return {r for r in recipients
                if mix64((decision.seed + (r - 1)) & ((1 << 64) - 1)) & 1}
    keep = set(delivered)
    foreign = keep - set(recipients)
    if foreign:
        raise ScheduleError(
            f"delivered subset {sorted(foreign)} not among the messages of "
            f"{sender} in round {rnd}")
    return keep


class PartTwoState:
    """Checkpointing over absolute rounds; a message sent in round r is
    readable in round r + 1.  The stage spans 1 + 4 * n_phases rounds."""

    def __init__(self, p: int, n_phases: int, start_round: int,
                 actives: list[int], processors: dict[int, list[int]]):
        self.p = p
        self.n_phases = n_phases
        self.start_round = start_round
        self.active = set(actives)
        self.proc = {v: sorted(processors[v]) for v in actives}
        self.coord: dict[int, list[int]] = {v: [] for v in actives}
        self.proposed: dict[int, bool] = {}
        self.is_coord: dict[int, bool] = {}
        self.inbox: dict[int, list[tuple]] = {v: [] for v in actives}
        self.pending: list[tuple[int, str, object, int]] = []
        self.events: list[dict] = []
        self.msgs_by_round: dict[int, int] = {}
        self.crashes: list[tuple[int, int]] = []  # round, victim 0-based
        self.coordinator_of_phase: list[int | None] = []
        self.phase_snapshots: list[dict] = []

    @property
    def end_round(self) -> int:
        return self.start_round + 4 * self.n_phases

    def round_role(self, r: int) -> tuple[str, int]:
        if r == self.start_round:
            return PREP, 0
        off = r - self.start_round - 1
        return ("r1", "r2", "r3", "r4")[off % 4], off // 4 + 1

    def coordinator_heads(self) -> list[int]:
        return [self.coord[v][0] for v in sorted(self.active) if self.coord.get(v)]

    def _send(self, rnd: int, sender: int, recipients: list[int], kind: str,
              payload, decision: CrashDecision | None) -> None:
        recipients = sorted(set(recipients))
        keep = _filter_recipients(rnd, sender, recipients, decision)
        count = 0
        for r in recipients:
            if r not in keep:
                continue
            if r == sender:
                self.inbox[sender].append((kind, payload, sender))
            else:
                count += 1
                self.pending.append((r, kind, payload, sender))
        if count:
            self.msgs_by_round[rnd] = self.msgs_by_round.get(rnd, 0) + count

    def step_round(self, rnd: int, decisions: list[CrashDecision]) -> None:
        kind, phase = self.round_role(rnd)
        by_victim = {d.victim: d for d in decisions}
        for r, k, payload, sender in self.pending:
            if r in self.active:
                self.inbox[r].append((k, payload, sender))
        self.pending = []
        for v in sorted(self.active):
            dec = by_victim.get(v)
            inbox = self.inbox[v]
            self.inbox[v] = []
            if kind == PREP:
                self._send(rnd, v, sorted(set(self.proc[v]) | {v}), PREP,
                           None, dec)
                continue
            if kind == "r1":
                if phase == 1:
                    senders = sorted({s for k, _, s in inbox if k == PREP})
                    self.proc[v] = senders
                    self.coord[v] = list(senders)
                if self.coord[v] and self.coord[v][0] == v:
                    self.proposed[v] = True
                    self.is_coord[v] = True
                    self.events.append({"round": rnd, "e": "propose",
                                        "proc": v, "phase": phase})
                    self._send(rnd, v, self.proc[v], PROPOSE, None, dec)
                else:
                    self.proposed[v] = False
                    self.is_coord[v] = False
            elif kind == "r2":
                proposers = sorted({s for k, _, s in inbox if k == PROPOSE})
                if proposers:
                    self._send(rnd, v, [proposers[0]], RESPOND,
                               tuple(self.proc[v]), dec)
                    self.coord[v] = sorted(set(self.coord[v]) | set(proposers))
                    if self.proposed.get(v) and self.coord[v][0] != v:
                        self.is_coord[v] = False
                        self.events.append({"round": rnd, "e": "abdicate",
                                            "proc": v, "phase": phase})
            elif kind == "r3":
                if self.is_coord.get(v):
                    lists = [set(pl) for k, pl, _ in inbox if k == RESPOND]
                    if lists:
                        keep = set.intersection(*lists)
                        self.proc[v] = [x for x in self.proc[v] if x in keep]
                    self.events.append({"round": rnd, "e": "coordinate",
                                        "proc": v, "phase": phase})
                    self._send(rnd, v, self.proc[v], ADOPT,
                               tuple(self.proc[v]), dec)
            elif kind == "r4":
                adopts = sorted((s, pl) for k, pl, s in inbox if k == ADOPT)
                coord_seen = None
                if adopts:
                    coord_seen, plist = adopts[0]
                    self.proc[v] = list(plist)
                    self.events.append({"round": rnd, "e": "adopt", "proc": v,
                                        "from": coord_seen, "phase": phase})
                if self.coord[v]:
                    self.coord[v].pop(0)
                if coord_seen is not None and self.coord[v]:
                    cut = min(v, coord_seen)
                    self.coord[v] = [x for x in self.coord[v] if x >= cut]
        for v in sorted(by_victim):
            if v in self.active:
                self.active.discard(v)
                self.crashes.append((rnd, v - 1))
        if kind == "r3":
            winners = [v for v in self.active if self.is_coord.get(v)]
            self.coordinator_of_phase.append(winners[0] if winners else None)
        if kind == "r4":
            self.phase_snapshots.append({
                "phase": phase,
                "processors": {v: list(self.proc[v]) for v in sorted(self.active)},
                "coordinators": {v: list(self.coord[v]) for v in sorted(self.active)},
            })


# ---------------------------------------------------------------------------
# completion stage (rotating coordinator over the renamed survivors)

IDLE, EXECUTING, PASSIVE = "idle", "executing", "passive"


class _Member:
    def __init__(self, pid: int, roster0: list[int], t: int):
        self.pid = pid
        self.roster0 = roster0 if pid in roster0 else sorted(set(roster0) | {pid})
        self.out = np.ones(t + 1, dtype=bool)
        self.out[0] = False
        self.mode = IDLE
        self.expect_round = 0
        self.sweep = 0
        self.ptr = 0
        self.last_assign: tuple | None = None  # (roster, out_ids, B, king)
        self.king = False
        self.collect_round = 0
        self.seg: np.ndarray | None = None
        self.seg_start = 0
        self.seg_done = 0
        self.report_round = 0
        self.strays: set[int] = set()
        self.passive_until = 0

    @staticmethod
    def segment_of(member: int, roster: list[int], out_ids: np.ndarray) -> np.ndarray:
        n = len(roster)
        if member not in roster:
            return out_ids[:0]
        i = roster.index(member)
        base, extra = divmod(out_ids.size, n)
        start = i * base + min(i, extra)
        return out_ids[start:start + base + (1 if i < extra else 0)]


class PartThree:
    """Rotating-coordinator completion; see the module docstring."""

    def __init__(self, p: int, t: int, start_round: int,
                 rosters: dict[int, list[int]]):
        self.p, self.t = p, t
        self.start_round = start_round
        self.members = {pid: _Member(pid, roster, t)
                        for pid, roster in rosters.items()}
        self.active = set(self.members)
        self.halts: list[tuple[int, int]] = []
        self.crashes: list[tuple[int, int]] = []
        self.exec_log: list[tuple[int, int, np.ndarray]] = []
        self.msgs_by_round: dict[int, int] = {}
        self.events: list[dict] = []
        self.pending: list[tuple[int, int, str, object, int]] = []
        self.next_wake: dict[int, int] = {}

    def _send(self, rnd: int, sender: int, recipients: list[int], kind: str,
              payload, decision: CrashDecision | None) -> None:
        recipients = sorted(set(recipients))
        keep = _filter_recipients(rnd, sender, recipients, decision)
        count = 0
        for r in recipients:
            if r not in keep:
                continue
            if r != sender:
                count += 1
            self.pending.append((rnd + 1, r, kind, payload, sender))
        if count:
            self.msgs_by_round[rnd] = self.msgs_by_round.get(rnd, 0) + count

    def _materialize_exec(self, m: _Member, up_to_round: int) -> None:
        """Commit block tasks performed in rounds strictly before up_to_round."""
        if m.seg is None or m.seg.size == 0:
            return
        done = min(up_to_round - m.seg_start, m.seg.size)
        if done > m.seg_done:
            chunk = m.seg[m.seg_done:done]
            self.exec_log.append((m.seg_start + m.seg_done, m.pid, chunk.copy()))
            m.out[chunk] = False
            m.seg_done = done

    def _schedule_wake(self, pid: int, rnd: int) -> None:
        cur = self.next_wake.get(pid)
        if cur is None or rnd < cur:
            self.next_wake[pid] = rnd

    def _halt(self, pid: int, rnd: int) -> None:
        self.halts.append((rnd, pid - 1))
        self.active.discard(pid)
        self.next_wake.pop(pid, None)

    def _become_king(self, m: _Member, rnd: int, reporters: set[int],
                     dec: CrashDecision | None) -> None:
        if m.last_assign is not None:
            roster, out_ids, _, _ = m.last_assign
            for w in reporters:
                seg = m.segment_of(w, roster, out_ids)
                if seg.size:
                    m.out[seg] = False
        roster = sorted(reporters | {m.pid} | m.strays)
        m.strays = set()
        out_ids = np.nonzero(m.out)[0].astype(np.int64)
        if out_ids.size == 0:
            targets = sorted(set(m.roster0) | set(roster))
            self.events.append({"round": rnd, "e": "part3_done", "proc": m.pid})
            self._send(rnd, m.pid, targets, "done", None, dec)
            self._halt(m.pid, rnd)
            return
        b = -(-out_ids.size // len(roster))
        m.king = True
        m.collect_round = rnd + 1 + b + 1
        self.events.append({"round": rnd, "e": "assign", "proc": m.pid,
                            "n_out": int(out_ids.size), "block": int(b),
                            "roster": list(roster)})
        self._send(rnd, m.pid, roster, "assign",
                   (tuple(roster), out_ids, b), dec)
        self._schedule_wake(m.pid, m.collect_round)

    def _adopt_assign(self, m: _Member, start: int, payload, king: int) -> None:
        roster, out_ids, b = payload
        roster = list(roster)
        m.out[:] = False
        m.out[out_ids] = True
        m.last_assign = (roster, out_ids, b, king)
        m.mode = EXECUTING
        m.sweep = 0
        m.seg = m.segment_of(m.pid, roster, out_ids)
        m.seg_start = start
        m.seg_done = 0
        m.report_round = start + b
        m.expect_round = start + b + 2
        if king in m.roster0:
            m.ptr = m.roster0.index(king)
        self._schedule_wake(m.pid, m.report_round)

    def step_round(self, rnd: int, decisions: list[CrashDecision]) -> None:
        by_victim = {d.victim: d for d in decisions}
        inboxes: dict[int, list[tuple]] = {}
        still = []
        for due, r, kind, payload, sender in self.pending:
            if due == rnd:
                if r in self.active:
                    inboxes.setdefault(r, []).append((kind, payload, sender))
            elif due > rnd:
                still.append((due, r, kind, payload, sender))
        self.pending = still
        for pid in sorted(self.active):
            m = self.members[pid]
            dec = by_victim.get(pid)
            self._materialize_exec(m, rnd)
            if self.next_wake.get(pid) == rnd:
                del self.next_wake[pid]
            inbox = inboxes.get(pid, [])
            if any(k == "done" for k, _, _ in inbox):
                self._halt(pid, rnd)
                continue
            reports = {s for k, _, s in inbox if k == "report"}
            for k, payload, _ in inbox:
                if k == "report" and payload:
                    reports |= set(payload)
            assigns = sorted((s, payload) for k, payload, s in inbox
                             if k == "assign")
            if rnd == self.start_round and m.last_assign is None \
                    and m.roster0[m.ptr] == pid:
                # first assignment covers the whole agreed list
                self._become_king(m, rnd, set(m.roster0), dec)
                continue
            if assigns:
                king, payload = assigns[0]
                m.strays |= reports
                m.king = m.king and king == pid
                self._adopt_assign(m, rnd, payload, king)
                continue
            if m.mode == EXECUTING and rnd >= m.report_round:
                m.mode = IDLE
                m.strays |= reports
                if m.king:
                    self._schedule_wake(pid, m.collect_round)
                else:
                    king = m.last_assign[3]
                    self._send(rnd, pid, [king], "report", tuple(m.strays), dec)
                    m.strays = set()
                    self._schedule_wake(pid, m.expect_round)
                continue
            if m.king and rnd >= m.collect_round:
                m.king = False
                self._become_king(m, rnd, reports, dec)
                continue
            if reports:
                if m.mode == EXECUTING or m.king:
                    m.strays |= reports
                else:
                    self._become_king(m, rnd, reports, dec)
                    continue
            if m.mode == PASSIVE:
                if rnd >= m.passive_until:
                    m.mode = IDLE
                    m.sweep = 0
                    m.expect_round = rnd
                    self._schedule_wake(pid, rnd + 1)
                continue
            if m.mode == IDLE and not m.king and m.expect_round > 0 \
                    and rnd >= m.expect_round:
                m.sweep += 1
                if m.sweep > len(m.roster0):
                    m.mode = PASSIVE
                    est = int(m.out.sum())
                    m.passive_until = rnd + est + 8 * len(m.roster0) + 16
                    self._schedule_wake(pid, m.passive_until)
                    continue
                m.ptr = (m.ptr + 1) % len(m.roster0)
                target = m.roster0[m.ptr]
                if target == pid:
                    self._become_king(m, rnd, set(), dec)
                else:
                    self._send(rnd, pid, [target], "report", tuple(m.strays), dec)
                    m.strays = set()
                    m.expect_round = rnd + 2
                    self._schedule_wake(pid, m.expect_round)
        for pid in sorted(by_victim):
            if pid in self.active:
                m = self.members[pid]
                self._materialize_exec(m, rnd)
                self.active.discard(pid)
                self.crashes.append((rnd, pid - 1))
                self.next_wake.pop(pid, None)

    def next_event_round(self, after: int) -> int | None:
        rounds = [due for due, r, *_ in self.pending if r in self.active]
        rounds += [r for pid, r in self.next_wake.items() if pid in self.active]
        rounds = [r for r in rounds if r > after]
        return min(rounds) if rounds else None

    def run(self, adversary: AdversaryPolicy, view, round_cap: int) -> None:
        for pid in sorted(self.active):
            m = self.members[pid]
            m.expect_round = self.start_round + 1
            if m.roster0[m.ptr] == pid:
                self._schedule_wake(pid, self.start_round)
            else:
                self._schedule_wake(pid, m.expect_round)
        rnd = self.start_round
        while self.active and rnd <= round_cap:
            decisions = []
            nxt_adv = adversary.next_intervention(rnd - 1)
            if nxt_adv is not None and nxt_adv <= rnd:
                decisions = [d for d in adversary.decide(view, rnd, rnd)
                             if d.round == rnd]
            self.step_round(rnd, decisions)
            nxt = self.next_event_round(rnd)
            nxt_adv = adversary.next_intervention(rnd)
            if nxt_adv is not None and self.active:
                nxt = min(nxt, nxt_adv) if nxt is not None else nxt_adv
            if nxt is None:
                break
            rnd = nxt


# ---------------------------------------------------------------------------
# the full hybrid run

class _PartView:
    """Adversary view over the checkpointing / completion stages."""

    def __init__(self, runner: GenericRunner, part2: PartTwoState | None = None,
                 part3: PartThree | None = None):
        self.runner = runner
        self.part2 = part2
        self.part3 = part3

    def _gone(self) -> tuple[set[int], set[int]]:
        crashed = {v + 1 for v in range(self.runner.p) if self.runner.crashed[v]}
        halted = {v + 1 for v in range(self.runner.p) if self.runner.halted[v]}
        if self.part2 is not None:
            crashed |= {v + 1 for _, v in self.part2.crashes}
        if self.part3 is not None:
            crashed |= {v + 1 for _, v in self.part3.crashes}
            halted |= {v + 1 for _, v in self.part3.halts}
        return crashed, halted

    def is_active(self, pid: int) -> bool:
        crashed, halted = self._gone()
        return pid not in crashed and pid not in halted

    def active_processors(self) -> list[int]:
        crashed, halted = self._gone()
        return [v for v in range(1, self.runner.p + 1)
                if v not in crashed and v not in halted]

    def noncrashed_processors(self) -> list[int]:
        crashed, _ = self._gone()
        return [v for v in range(1, self.runner.p + 1) if v not in crashed]

    def in_checkpoint_proposal_round(self, r: int) -> bool:
        if self.part2 is None or not (self.part2.start_round < r <= self.part2.end_round):
            return False
        return self.part2.round_role(r)[0] == "r1"

    def coordinator_heads(self) -> list[int]:
        return self.part2.coordinator_heads() if self.part2 else []


def run_effort_priority(protocol: EffortPriority, graph: OverlayGraph,
                        adversary: AdversaryPolicy, seed: int,
                        round_cap: int | None,
                        options: TraceOptions) -> tuple[RunTrace, RunMetrics]:
    p, t = protocol.p, protocol.t
    params, graph = derive_params(p, t, protocol.a, protocol.ct,
                                  protocol.delta0, overlay=graph)
    chunk = params.chunk_size
    n_items = max(1, -(-t // chunk)) if t else 0
    rpp = chunk + 2
    n_pone_phases = -(-params.t1 // rpp)
    t1_eff = n_pone_phases * rpp
    prep_round = t1_eff + 1
    n_cp = max(1, p - params.f1)
    p3_start = prep_round + 4 * n_cp + 1
    if round_cap is None:
        round_cap = 10 * (t1_eff + 4 * n_cp + 3 * (t + p + 2))
    log_sends, sampling = options.resolve(p, max(1, n_items), round_cap)

    rule = protocol.chunk_rule(max(1, n_items))
    runner = GenericRunner(p, n_items, chunk, t, graph, rule, params.f1,
                           round_cap, log_sends, sampling)
    ctx = AdversaryContext(
        p=p, t=t, f=p - 1, seed=seed, round_cap=round_cap,
        horizon_hint=t1_eff + 4 * n_cp + max(16, t // max(1, p - params.f1)))
    adversary.reset(ctx)
    if hasattr(adversary, "attach_grid"):
        adversary.attach_grid(rpp)

    drive_generic(runner, adversary, phase_limit=n_pone_phases)
    config = dict(protocol.to_config())
    config.update({
        "p": p, "t": t, "seed": seed, "round_cap": round_cap,
        "adversary": getattr(adversary, "name", "none"),
        "overlay": graph.meta_dict(),
        "effort_params": params.to_dict(),
    })
    part_bounds = {"part_one_phases": n_pone_phases, "t1": params.t1,
                   "t1_effective": t1_eff, "prep_round": prep_round,
                   "checkpoint_phases": n_cp, "part_three_start": p3_start,
                   "part_two_ran": False, "part_three_ran": False}

    if runner.terminated or runner.hit_round_cap:
        trace = _assemble_trace(runner, config, t)
        trace.part_bounds = part_bounds
        metrics = account(trace)
        return trace, metrics

    # ---- checkpointing
    actives = [v + 1 for v in range(p)
               if not (runner.crashed[v] or runner.halted[v])]
    processors = {v: runner.processors_of(v - 1) for v in actives}
    part2 = PartTwoState(p, n_cp, prep_round, actives, processors)
    view = _PartView(runner, part2)
    part_bounds["part_two_ran"] = True
    for rnd in range(prep_round, part2.end_round + 1):
        decisions = []
        nxt = adversary.next_intervention(rnd - 1)
        if nxt is not None and nxt <= rnd:
            decisions = [d for d in adversary.decide(view, rnd, rnd)
                         if d.round == rnd]
        part2.step_round(rnd, decisions)
        if not part2.active:
            break

    # ---- completion
    part3 = None
    if part2.active:
        part_bounds["part_three_ran"] = True
        rosters = {v: list(part2.proc[v]) for v in sorted(part2.active)}
        part3 = PartThree(p, t, p3_start, rosters)
        view3 = _PartView(runner, part2, part3)
        part3.run(adversary, view3, round_cap)

    # ---- stitch the trace together
    trace = _assemble_trace(runner, config, t)
    trace.part_bounds = part_bounds
    crash_round = list(trace.crash_round)
    crash_proc = list(trace.crash_proc)
    crash_del = list(trace.crash_delivered)
    for rnd, v in part2.crashes:
        crash_round.append(rnd)
        crash_proc.append(v)
        crash_del.append(0)
    halts_r = list(trace.halt_round)
    halts_p = list(trace.halt_proc)
    halts_b = list(trace.halt_busy)
    halts_i = list(trace.halt_items)
    extra_rounds = sorted(part2.msgs_by_round)
    extra = [(r, part2.msgs_by_round[r]) for r in extra_rounds]
    trace.part_events = list(part2.events)
    if part3 is not None:
        for rnd, v in part3.crashes:
            crash_round.append(rnd)
            crash_proc.append(v)
            crash_del.append(0)
        for rnd, v in part3.halts:
            halts_r.append(rnd)
            halts_p.append(v)
            halts_b.append(0)
            halts_i.append(0)
        for r in sorted(part3.msgs_by_round):
            extra.append((r, part3.msgs_by_round[r]))
        trace.part_events += part3.events
        er = list(trace.exec_round)
        ep = list(trace.exec_proc)
        et = list(trace.exec_task)
        for start, pid, tasks in part3.exec_log:
            for i, tau in enumerate(tasks):
                er.append(start + i)
                ep.append(pid - 1)
                et.append(int(tau))
        trace.exec_round = np.asarray(er, dtype=np.int64)
        trace.exec_proc = np.asarray(ep, dtype=np.int32)
        trace.exec_task = np.asarray(et, dtype=np.int32)
    order = np.argsort(np.asarray(crash_round), kind="stable")
    trace.crash_round = np.asarray(crash_round, dtype=np.int64)[order]
    trace.crash_proc = np.asarray(crash_proc, dtype=np.int32)[order]
    trace.crash_delivered = np.asarray(crash_del, dtype=np.int32)[order]
    order = np.argsort(np.asarray(halts_r), kind="stable")
    trace.halt_round = np.asarray(halts_r, dtype=np.int64)[order]
    trace.halt_proc = np.asarray(halts_p, dtype=np.int32)[order]
    trace.halt_busy = np.asarray(halts_b, dtype=np.int32)[order]
    trace.halt_items = np.asarray(halts_i, dtype=np.int64)[order]
    if extra:
        trace.extra_msg_round = np.asarray([r for r, _ in extra], dtype=np.int64)
        trace.extra_msg_count = np.asarray([c for _, c in extra], dtype=np.int64)

    crashed_ids = set(trace.crash_proc.tolist())
    halted_ids = set(trace.halt_proc.tolist())
    lost = [v for v in range(p) if v not in crashed_ids and v not in halted_ids]
    if lost:
        trace.incomplete = True
        trace.termination_round = round_cap
    else:
        events = [int(trace.crash_round.max()) if trace.crash_round.size else 0,
                  int(trace.halt_round.max()) if trace.halt_round.size else 0]
        trace.termination_round = max(events)
        trace.incomplete = False
    metrics = account(trace)
    return trace, metrics
