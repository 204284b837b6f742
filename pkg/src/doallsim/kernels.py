"""Hot numeric kernels for the round engine.

Everything here operates on packed uint64 bitsets: one row per processor for
the task/processor/busy lists, plus a two-level popcount index so rank
selection is O(log) instead of a full scan.  Each kernel is compiled with
numba's @njit by default; setting DOALLSIM_NO_NUMBA=1 in the environment
skips compilation and runs the identical Python/numpy code paths, which is
the reference fallback (and what `benchmarks/bench_kernels.py` compares
against).

Task ids are 1-based in the protocol; bit index tau-1 holds task tau.
Processor indices are 0-based throughout this module.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("DOALLSIM_NO_NUMBA", "") not in ("", "0")

if not NUMBA_DISABLED:
    from numba import njit as _njit

    def _maybe_njit(fn):
        return _njit(cache=True)(fn)
else:
    def _maybe_njit(fn):
        return fn

U64 = np.uint64
_GAMMA = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
ONE = U64(1)
ZERO = U64(0)
FULL = U64(0xFFFFFFFFFFFFFFFF)

# run_phases exit codes
SPAN_LIMIT = 0        # reached the requested phase limit
TERMINATED = 1        # every processor halted or crashed
GROW_EXEC = 2         # execution log buffer too small for the next phase
GROW_DELTA = 3        # removal-delta slab too small for the next phase
ROUND_CAP = 4         # hit the round cap mid-run

# message kinds (crash delivery rules)
DELIVER_NONE = 0
DELIVER_ALL = 1
DELIVER_HALF = 2
DELIVER_MASK = 3


def mix64_scalar(x):
    z = (U64(x) + _GAMMA)
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


mix64_scalar = _maybe_njit(mix64_scalar)


def task_key(seed, tau):
    """Selection key of padded-list position tau under the seed's reorder;
    equals element tau-1 of rng.stream_u64(seed, n)."""
    return mix64_scalar(U64(seed) + (U64(tau) - ONE) * _GAMMA)


task_key = _maybe_njit(task_key)


def popcount_u64(x):
    x = U64(x)
    c = 0
    while x != ZERO:
        x &= x - ONE
        c += 1
    return c


popcount_u64 = _maybe_njit(popcount_u64)


def select_in_word(word, j):
    """0-based bit position of the j-th (1-based) set bit of word."""
    w = U64(word)
    seen = 0
    for b in range(64):
        if (w >> U64(b)) & ONE:
            seen += 1
            if seen == j:
                return b
    return -1


select_in_word = _maybe_njit(select_in_word)


def words_popcount(words, row):
    total = 0
    for i in range(words.shape[1]):
        total += popcount_u64(words[row, i])
    return total


words_popcount = _maybe_njit(words_popcount)


def test_bit(words, row, idx):
    return (words[row, idx >> 6] >> U64(idx & 63)) & ONE != ZERO


test_bit = _maybe_njit(test_bit)


def set_bit(words, row, idx):
    words[row, idx >> 6] |= ONE << U64(idx & 63)


set_bit = _maybe_njit(set_bit)


def clear_bit(words, row, idx):
    words[row, idx >> 6] &= ~(ONE << U64(idx & 63))


clear_bit = _maybe_njit(clear_bit)


# -- two-level rank/select index over the task bitsets ----------------------
#
# Level 1: blk[row, b] = popcount of words 64*b .. 64*b+63 (a 4096-bit block).
# Level 2: sup[row, s] = popcount of blocks 64*s .. 64*s+63.

def rs_rebuild(words, blk, sup, cnt, row):
    nb = blk.shape[1]
    total = 0
    for b in range(nb):
        c = 0
        w0 = b << 6
        w1 = min(w0 + 64, words.shape[1])
        for w in range(w0, w1):
            c += popcount_u64(words[row, w])
        blk[row, b] = c
        total += c
    ns = sup.shape[1]
    for s in range(ns):
        c = 0
        b0 = s << 6
        b1 = min(b0 + 64, nb)
        for b in range(b0, b1):
            c += blk[row, b]
        sup[row, s] = c
    cnt[row] = total


rs_rebuild = _maybe_njit(rs_rebuild)


def rs_clear(words, blk, sup, cnt, row, idx):
    """Clear bit idx if set; returns True when the bit made a transition."""
    w = idx >> 6
    b = ONE << U64(idx & 63)
    if words[row, w] & b == ZERO:
        return False
    words[row, w] &= ~b
    blk[row, w >> 6] -= 1
    sup[row, w >> 12] -= 1
    cnt[row] -= 1
    return True


rs_clear = _maybe_njit(rs_clear)


def rs_select(words, blk, sup, row, j):
    """0-based index of the j-th (1-based) set bit of the row, -1 if absent."""
    if j < 1:
        return -1
    s = 0
    ns = sup.shape[1]
    while s < ns and j > sup[row, s]:
        j -= sup[row, s]
        s += 1
    if s == ns:
        return -1
    b = s << 6
    b_end = min(b + 64, blk.shape[1])
    while b < b_end and j > blk[row, b]:
        j -= blk[row, b]
        b += 1
    if b == b_end:
        return -1
    w = b << 6
    w_end = min(w + 64, words.shape[1])
    while w < w_end:
        c = popcount_u64(words[row, w])
        if j <= c:
            return (w << 6) + select_in_word(words[row, w], j)
        j -= c
        w += 1
    return -1


rs_select = _maybe_njit(rs_select)


def balance_position(k, v, p):
    """1-based rank ceil(k*v/p) selected by processor id v (1-based)."""
    return (k * v + p - 1) // p


balance_position = _maybe_njit(balance_position)


# -- buffered minimum-key selection for the permuted task order -------------
#
# A processor in permuted mode repeatedly needs the present task with the
# smallest key.  The buffer holds the buf_cap smallest keys above the last
# exhausted threshold among tasks present at refill time; removals between
# refills are skipped lazily at pop time.

def perm_refill(words, row, seed, has_keys, keys, thresh, buf_task, buf_key, buf_row):
    cap = buf_task.shape[1]
    heap_key = np.empty(cap, dtype=np.uint64)
    heap_task = np.empty(cap, dtype=np.int64)
    size = 0
    nwords = words.shape[1]
    for w in range(nwords):
        word = words[row, w]
        while word != ZERO:
            low = word & (~word + ONE)
            b = popcount_u64(low - ONE)
            word &= word - ONE
            tau = (w << 6) + b + 1
            if has_keys:
                k = keys[row, tau]
            else:
                k = task_key(seed, tau)
            if k <= thresh:
                continue
            if size < cap:
                i = size
                heap_key[i] = k
                heap_task[i] = tau
                size += 1
                while i > 0:
                    parent = (i - 1) >> 1
                    if heap_key[parent] < heap_key[i]:
                        heap_key[parent], heap_key[i] = heap_key[i], heap_key[parent]
                        heap_task[parent], heap_task[i] = heap_task[i], heap_task[parent]
                        i = parent
                    else:
                        break
            elif k < heap_key[0]:
                heap_key[0] = k
                heap_task[0] = tau
                i = 0
                while True:
                    left = 2 * i + 1
                    right = left + 1
                    big = i
                    if left < size and heap_key[left] > heap_key[big]:
                        big = left
                    if right < size and heap_key[right] > heap_key[big]:
                        big = right
                    if big == i:
                        break
                    heap_key[big], heap_key[i] = heap_key[i], heap_key[big]
                    heap_task[big], heap_task[i] = heap_task[i], heap_task[big]
                    i = big
    order = np.argsort(heap_key[:size])
    for i in range(size):
        buf_key[buf_row, i] = heap_key[order[i]]
        buf_task[buf_row, i] = heap_task[order[i]]
    return size


perm_refill = _maybe_njit(perm_refill)


def bfs_range_count(nbr_words, proc_words, row, horizon, wp):
    """Nodes within graph distance <= horizon of `row` in the subgraph induced
    by the row's processor list (plus the node itself)."""
    allowed = np.empty(wp, dtype=np.uint64)
    visited = np.zeros(wp, dtype=np.uint64)
    frontier = np.zeros(wp, dtype=np.uint64)
    for i in range(wp):
        allowed[i] = proc_words[row, i]
    allowed[row >> 6] |= ONE << U64(row & 63)
    visited[row >> 6] = ONE << U64(row & 63)
    frontier[row >> 6] = visited[row >> 6]
    count = 1
    for _ in range(horizon):
        grew = False
        nxt = np.zeros(wp, dtype=np.uint64)
        for w in range(wp):
            word = frontier[w]
            while word != ZERO:
                low = word & (~word + ONE)
                b = popcount_u64(low - ONE)
                word &= word - ONE
                u = (w << 6) + b
                for i in range(wp):
                    nxt[i] |= nbr_words[u, i]
        for i in range(wp):
            nxt[i] &= allowed[i] & ~visited[i]
            if nxt[i] != ZERO:
                grew = True
        if not grew:
            break
        for i in range(wp):
            visited[i] |= nxt[i]
            count += popcount_u64(nxt[i])
            frontier[i] = nxt[i]
    return count


bfs_range_count = _maybe_njit(bfs_range_count)


# state_i64 slots shared between the engine and run_phases
SI_EXEC = 0     # execution log length
SI_TR = 1       # transition log length
SI_HA = 2       # halt log length
SI_SD = 3       # send-detail log length
SI_SCPTR = 4    # crash schedule cursor
SI_MSG = 5      # total point-to-point messages so far
SI_TERM = 6     # termination round (0 while running)
SI_CA = 7       # applied-crash log length
SI_ROUND = 8    # last fully processed round

RULE_BALANCE = 0
RULE_PERMUTED = 1


def run_phases(
    # protocol geometry
    p, wp, chunk, items_total, chunk_real, task_total,
    phase_start, phase_limit, round_cap,
    rule_kind, pi2_trigger, horizon, compact_thr,
    # overlay
    nbr_indptr, nbr_indices, nbr_words, max_deg,
    # list state
    item_words, blk, sup, item_cnt, proc_words, busy_words,
    crashed, halted, closing, selected_proc,
    # selection-rule state
    perm_mode, perm_thresh, perm_seed, buf_task, buf_key, buf_pos, buf_len,
    has_keys, keys, pi1_inv,
    # message double buffers (indexed by phase parity)
    sent_alive, sent_targets, sent_proc, sent_busy, sent_empty,
    delta_data, delta_indptr, stop_inbox,
    # crash schedule
    sc_round, sc_victim, sc_kind, sc_seed, sc_mask,
    # logs
    exec_round, exec_proc, exec_task,
    tr_round, tr_proc,
    ha_round, ha_proc, ha_busy, ha_items,
    ca_round, ca_proc, ca_count, ca_mask, ca_stop,
    log_sends, sd_round, sd_proc, sd_mask, sd_stop,
    phase_msgs,
    state_i64,
):
    """Run up to phase_limit protocol phases; see module docstring for layout.

    Each phase spans chunk + 2 rounds: receive, chunk compute rounds (one
    task of the selected item per round), send.  Returns (status,
    phases_done).  All mutation is in place so a span can resume where the
    previous one stopped.
    """
    rpp = chunk + 2
    delta_cap = delta_data.shape[1]
    exec_cap = exec_round.shape[0]
    crash_at = np.zeros(p, dtype=np.int64)
    will_halt = np.zeros(p, dtype=np.uint8)
    stop_sent = np.full(p, -1, dtype=np.int64)
    and_proc = np.empty(wp, dtype=np.uint64)
    and_busy = np.empty(wp, dtype=np.uint64)

    for ph_i in range(phase_limit):
        phase = phase_start + ph_i
        r0 = (phase - 1) * rpp + 1
        rs = r0 + chunk + 1
        if rs > round_cap:
            return ROUND_CAP, ph_i
        # capacity pre-checks: grow before touching the phase
        if state_i64[SI_EXEC] + p * chunk_real > exec_cap:
            return GROW_EXEC, ph_i
        prev = (phase - 1) & 1
        cur = phase & 1
        prev_total = delta_indptr[prev, p]
        if p + max_deg * prev_total + 16 > delta_cap:
            return GROW_DELTA, ph_i

        # crash schedule entries that fall inside this phase
        for v in range(p):
            crash_at[v] = 0
            will_halt[v] = 0
            stop_sent[v] = -1
        sp = state_i64[SI_SCPTR]
        while sp < sc_round.shape[0] and sc_round[sp] <= rs:
            victim = sc_victim[sp]
            if not (crashed[victim] or halted[victim]) and crash_at[victim] == 0:
                crash_at[victim] = sc_round[sp]
            sp += 1
        state_i64[SI_SCPTR] = sp

        # ------------------------------------------------- compute round r1
        r1 = r0 + 1
        delta_indptr[cur, 0] = 0
        dpos = 0
        for v in range(p):
            stop_inbox[cur, v] = False
            sent_alive[cur, v] = False
        msgs = 0
        for v in range(p):
            delta_indptr[cur, v] = dpos
            if crashed[v] or halted[v] or (crash_at[v] != 0 and crash_at[v] <= r1):
                continue
            # -- gather senders among neighbors (messages from last phase)
            got_list = False
            for i in range(wp):
                and_proc[i] = FULL
                and_busy[i] = FULL
            saw_empty = False
            for e in range(nbr_indptr[v], nbr_indptr[v + 1]):
                u = nbr_indices[e]
                if sent_alive[prev, u] and (
                    sent_targets[prev, u, v >> 6] >> U64(v & 63)
                ) & ONE != ZERO:
                    got_list = True
                    for i in range(wp):
                        and_proc[i] &= sent_proc[prev, u, i]
                        and_busy[i] &= sent_busy[prev, u, i]
                    if sent_empty[prev, u]:
                        saw_empty = True
                elif phase >= 2:
                    # silent neighbor: drop it from the processor list
                    proc_words[v, u >> 6] &= ~(ONE << U64(u & 63))
            if got_list:
                for i in range(wp):
                    proc_words[v, i] &= and_proc[i]
                    busy_words[v, i] &= and_busy[i]
            for i in range(wp):
                busy_words[v, i] &= proc_words[v, i]
            # -- task-list merge (main phases only; closing ignores task info)
            if not closing[v]:
                if saw_empty and item_cnt[v] > 0:
                    for i in range(item_words.shape[1]):
                        item_words[v, i] = ZERO
                    for i in range(blk.shape[1]):
                        blk[v, i] = 0
                    for i in range(sup.shape[1]):
                        sup[v, i] = 0
                    item_cnt[v] = 0
                for e in range(nbr_indptr[v], nbr_indptr[v + 1]):
                    u = nbr_indices[e]
                    if sent_alive[prev, u] and (
                        sent_targets[prev, u, v >> 6] >> U64(v & 63)
                    ) & ONE != ZERO and not sent_empty[prev, u]:
                        for di in range(delta_indptr[prev, u], delta_indptr[prev, u + 1]):
                            tau = delta_data[prev, di]
                            if rs_clear(item_words, blk, sup, item_cnt, v, tau - 1):
                                delta_data[cur, dpos] = tau
                                dpos += 1
            stop_flag = stop_inbox[prev, v]

            if not closing[v]:
                done_now = False
                # task step
                if item_cnt[v] > 0:
                    if rule_kind == RULE_PERMUTED and not perm_mode[v] \
                            and item_cnt[v] <= pi2_trigger:
                        perm_mode[v] = True
                        perm_thresh[v] = ZERO
                        buf_pos[v] = 0
                        buf_len[v] = 0
                    idx = -1
                    if rule_kind == RULE_PERMUTED and perm_mode[v]:
                        while True:
                            if buf_pos[v] < buf_len[v]:
                                cand = buf_task[v, buf_pos[v]]
                                perm_thresh[v] = buf_key[v, buf_pos[v]]
                                buf_pos[v] += 1
                                if test_bit(item_words, v, cand - 1):
                                    idx = cand - 1
                                    break
                            else:
                                n = perm_refill(
                                    item_words, v, perm_seed[v], has_keys, keys,
                                    perm_thresh[v], buf_task, buf_key, v,
                                )
                                buf_len[v] = n
                                buf_pos[v] = 0
                                if n == 0:
                                    break
                    else:
                        pos = balance_position(item_cnt[v], v + 1, p)
                        idx = rs_select(item_words, blk, sup, v, pos)
                    if idx >= 0:
                        rs_clear(item_words, blk, sup, item_cnt, v, idx)
                        delta_data[cur, dpos] = idx + 1
                        dpos += 1
                        # expand the item into its real tasks, one per round
                        first = idx * chunk_real + 1
                        last = (idx + 1) * chunk_real
                        if last > task_total:
                            last = task_total
                        n_exec = last - first + 1
                        if crash_at[v] != 0:
                            lim = crash_at[v] - r1
                            if n_exec > lim:
                                n_exec = lim
                        ep = state_i64[SI_EXEC]
                        for o in range(n_exec):
                            exec_round[ep] = r1 + o
                            exec_proc[ep] = v
                            exec_task[ep] = first + o
                            ep += 1
                        state_i64[SI_EXEC] = ep
                else:
                    done_now = True
                # further Done triggers, in the fixed order
                for i in range(wp):
                    if busy_words[v, i] != proc_words[v, i]:
                        done_now = True
                        break
                if stop_flag:
                    done_now = True
                if done_now:
                    busy_words[v, v >> 6] &= ~(ONE << U64(v & 63))
                    for i in range(item_words.shape[1]):
                        item_words[v, i] = ZERO
                    for i in range(blk.shape[1]):
                        blk[v, i] = 0
                    for i in range(sup.shape[1]):
                        sup[v, i] = 0
                    item_cnt[v] = 0
                    closing[v] = True
                    tp = state_i64[SI_TR]
                    tr_round[tp] = r1
                    tr_proc[tp] = v
                    state_i64[SI_TR] = tp + 1
            else:
                # closing compute
                reach = bfs_range_count(nbr_words, proc_words, v, horizon, wp)
                if reach < compact_thr:
                    will_halt[v] = 1
                busy_cnt = words_popcount(busy_words, v)
                if busy_cnt > 0:
                    if rule_kind == RULE_PERMUTED:
                        best = -1
                        best_pos = 1 << 30
                        for i in range(wp):
                            word = busy_words[v, i]
                            while word != ZERO:
                                low = word & (~word + ONE)
                                b = popcount_u64(low - ONE)
                                word &= word - ONE
                                x = (i << 6) + b
                                if pi1_inv[v, x] < best_pos:
                                    best_pos = pi1_inv[v, x]
                                    best = x
                        sel = best
                    else:
                        j = balance_position(busy_cnt, v + 1, p)
                        sel = -1
                        for i in range(wp):
                            c = popcount_u64(busy_words[v, i])
                            if j <= c:
                                sel = (i << 6) + select_in_word(busy_words[v, i], j)
                                break
                            j -= c
                    selected_proc[v] = sel
                    busy_words[v, sel >> 6] &= ~(ONE << U64(sel & 63))
                else:
                    selected_proc[v] = v
                    will_halt[v] = 1
        delta_indptr[cur, p] = dpos

        # ------------------------------------------------- send round rs
        for v in range(p):
            if crashed[v] or halted[v]:
                continue
            cr = crash_at[v]
            if cr != 0 and cr < rs:
                continue  # crashed earlier in the phase: sends nothing
            # delivery filter for a crash during the multicast
            kind = DELIVER_ALL
            dseed = ZERO
            mrow = -1
            if cr == rs:
                si = state_i64[SI_SCPTR] - 1
                while si >= 0 and not (sc_round[si] == rs and sc_victim[si] == v):
                    si -= 1
                kind = sc_kind[si]
                dseed = sc_seed[si]
                mrow = si
            sent_alive[cur, v] = True
            sent_empty[cur, v] = item_cnt[v] == 0
            delivered = 0
            for i in range(wp):
                t_mask = nbr_words[v, i] & proc_words[v, i]
                if kind == DELIVER_NONE:
                    t_mask = ZERO
                elif kind == DELIVER_HALF:
                    word = t_mask
                    keep = ZERO
                    while word != ZERO:
                        low = word & (~word + ONE)
                        b = popcount_u64(low - ONE)
                        word &= word - ONE
                        x = (i << 6) + b
                        if mix64_scalar(dseed + U64(x)) & ONE != ZERO:
                            keep |= low
                    t_mask = keep
                elif kind == DELIVER_MASK:
                    t_mask &= sc_mask[mrow, i]
                sent_targets[cur, v, i] = t_mask
                sent_proc[cur, v, i] = proc_words[v, i]
                sent_busy[cur, v, i] = busy_words[v, i]
                delivered += popcount_u64(t_mask)
            # Stop signal from a closing phase
            stop_to = -1
            if closing[v] and selected_proc[v] >= 0:
                stop_to = selected_proc[v]
                if stop_to == v:
                    stop_to = -1  # local self-notification, no network message
                else:
                    ok = kind == DELIVER_ALL
                    if kind == DELIVER_HALF:
                        ok = mix64_scalar(dseed + U64(stop_to)) & ONE != ZERO
                    elif kind == DELIVER_MASK:
                        ok = (sc_mask[mrow, stop_to >> 6] >> U64(stop_to & 63)) & ONE != ZERO
                    if ok:
                        stop_inbox[cur, stop_to] = True
                        if (sent_targets[cur, v, stop_to >> 6] >> U64(stop_to & 63)) & ONE == ZERO:
                            delivered += 1  # stop-only envelope to a non-neighbor
                    else:
                        stop_to = -1
            stop_sent[v] = stop_to
            msgs += delivered
            if log_sends and (delivered > 0 or stop_to >= 0):
                sd = state_i64[SI_SD]
                if sd < sd_round.shape[0]:
                    sd_round[sd] = rs
                    sd_proc[sd] = v
                    for i in range(wp):
                        sd_mask[sd, i] = sent_targets[cur, v, i]
                    sd_stop[sd] = stop_to
                    state_i64[SI_SD] = sd + 1
            selected_proc[v] = -1

        # apply this phase's crashes and halts, then check termination
        for v in range(p):
            if crash_at[v] != 0:
                crashed[v] = True
                cp = state_i64[SI_CA]
                ca_round[cp] = crash_at[v]
                ca_proc[cp] = v
                ca_stop[cp] = -1
                for i in range(wp):
                    ca_mask[cp, i] = ZERO
                cnt_del = 0
                if crash_at[v] == rs and sent_alive[cur, v]:
                    for i in range(wp):
                        cnt_del += popcount_u64(sent_targets[cur, v, i])
                        ca_mask[cp, i] = sent_targets[cur, v, i]
                    if stop_sent[v] >= 0:
                        ca_stop[cp] = stop_sent[v]
                        if (sent_targets[cur, v, stop_sent[v] >> 6]
                                >> U64(stop_sent[v] & 63)) & ONE == ZERO:
                            cnt_del += 1
                ca_count[cp] = cnt_del
                state_i64[SI_CA] = cp + 1
        for v in range(p):
            if will_halt[v] == 1 and not crashed[v]:
                halted[v] = True
                hp = state_i64[SI_HA]
                ha_round[hp] = rs
                ha_proc[hp] = v
                ha_busy[hp] = words_popcount(busy_words, v)
                ha_items[hp] = item_cnt[v]
                state_i64[SI_HA] = hp + 1
        all_done = True
        for v in range(p):
            if not (crashed[v] or halted[v]):
                all_done = False
                break
        phase_msgs[ph_i] = msgs
        state_i64[SI_MSG] += msgs
        state_i64[SI_ROUND] = rs
        if all_done:
            # termination round: a halt completes the full phase; if only
            # crashes happened this phase, the last crash round ends the run
            any_halt_now = False
            last_crash_now = 0
            for v in range(p):
                if will_halt[v] == 1 and not crashed[v]:
                    any_halt_now = True
                if crash_at[v] > last_crash_now:
                    last_crash_now = crash_at[v]
            term = rs if any_halt_now else last_crash_now
            if term == 0:
                term = rs
            state_i64[SI_TERM] = term
            return TERMINATED, ph_i + 1

    return SPAN_LIMIT, phase_limit


run_phases = _maybe_njit(run_phases)
