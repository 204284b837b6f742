"""Object-level reference simulator built on the protocol-phase functions.

Used by the tests to cross-check the packed-bitset engine: same phase
structure (receive, compute, multicast), same silent-neighbor and stop
semantics, same message counting.  Crash support covers "none"/"all"
delivery at a given round, which is all the cross-validation needs.
"""

from dataclasses import dataclass, field

from doallsim.protocol import (CLOSING, MAIN, ListsMessage, closing_phase,
                               init_state, main_phase)
from doallsim.rules import RuleState


@dataclass
class RefResult:
    exec_log: list = field(default_factory=list)    # (round, pid, task)
    halt_rounds: dict = field(default_factory=dict)  # pid -> round
    crash_rounds: dict = field(default_factory=dict)
    messages: int = 0
    termination_round: int = 0
    phase_msgs: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)    # per-phase list state


def run_reference(p, t, overlay, rule, f, crashes=(), max_phases=10000):
    """crashes: iterable of (round, pid, delivered) with delivered in
    {"none", "all"}."""
    states = {pid: init_state(pid, p, t) for pid in range(1, p + 1)}
    rule_states = {pid: RuleState() for pid in range(1, p + 1)}
    neighbors = {pid: {int(u) + 1 for u in overlay.neighbors(pid - 1)}
                 for pid in range(1, p + 1)}
    crash_at = {}
    for rnd, pid, delivered in crashes:
        crash_at[pid] = (rnd, delivered)
    res = RefResult()
    alive = set(states)
    halted = set()
    # messages in flight: receiver -> list of (message, stop_flag_for_me)
    inbox = {pid: [] for pid in states}
    senders_prev = {pid: set() for pid in states}
    for phase in range(1, max_phases + 1):
        r_recv, r_comp, r_send = 3 * phase - 2, 3 * phase - 1, 3 * phase
        for rnd in (r_recv, r_comp):
            for pid in list(alive):
                if crash_at.get(pid, (0,))[0] == rnd:
                    alive.discard(pid)
                    res.crash_rounds[pid] = rnd
        outputs = {}
        for pid in sorted(alive - halted):
            st = states[pid]
            received = [m for m, _ in inbox[pid]]
            stop = any(s for _, s in inbox[pid])
            if stop:
                received = received + [ListsMessage(sender=0, stop=True)]
            silent = set()
            if phase >= 2:
                silent = {x for x in neighbors[pid]
                          if x not in senders_prev[pid]}
            if st.phase == MAIN:
                out = main_phase(st, rule, rule_states[pid], received, silent,
                                 neighbors[pid])
                if out.executed is not None:
                    res.exec_log.append((r_comp, pid, out.executed))
            else:
                out = closing_phase(st, rule, received, silent, neighbors[pid],
                                    overlay, f)
            outputs[pid] = out
            inbox[pid] = []
        for pid in list(alive):
            if crash_at.get(pid, (0,))[0] == r_send:
                alive.discard(pid)
                res.crash_rounds[pid] = r_send
                if crash_at[pid][1] == "none":
                    outputs.pop(pid, None)
        new_inbox = {q: [] for q in states}
        new_senders = {q: set() for q in states}
        msgs = 0
        for pid, out in outputs.items():
            for tgt in out.targets:
                msgs += 1
                stop_here = out.stop_target == tgt
                new_inbox[tgt].append((out.message, stop_here))
                new_senders[tgt].add(pid)
            if out.stop_target is not None and out.stop_target != pid \
                    and out.stop_target not in out.targets:
                msgs += 1
                new_inbox[out.stop_target].append(
                    (ListsMessage(sender=pid, stop=True), True))
            if out.halt:
                halted.add(pid)
                res.halt_rounds[pid] = r_send
        res.messages += msgs
        res.phase_msgs.append(msgs)
        res.snapshots.append({pid: (tuple(states[pid].tasks),
                                    tuple(states[pid].processors),
                                    tuple(states[pid].busy),
                                    states[pid].phase)
                              for pid in states})
        inbox = new_inbox
        senders_prev = new_senders
        if all(pid in halted or pid not in alive for pid in states):
            halt_max = max(res.halt_rounds.values()) if res.halt_rounds else 0
            crash_max = max(res.crash_rounds.values()) if res.crash_rounds else 0
            if any(res.halt_rounds.get(pid, 0) == r_send for pid in states):
                res.termination_round = r_send
            else:
                res.termination_round = max(halt_max, crash_max)
            break
    return res
