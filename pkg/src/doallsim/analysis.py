"""Offline trace analysis: epochs, compact witnesses, progress accounting.

An epoch is g(p) consecutive phases.  For each epoch the analyzer derives
the survivor sets at its boundaries, searches for a compact witness (a
survivor subgraph of size at least ceil((p-f)/7) whose induced diameter is
at most g(p)), and measures progress through the union/intersection sizes
of the witness members' outstanding-task lists.  Extended epochs group calm
epochs whose cumulative witness selections stay below the outstanding-task
count.  Witness-based quantities are proxies for the nested core subgraphs
of the underlying theory and are labeled as such in reports.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import OverlayGraph, compact_threshold, flood_horizon
from .trace import RunTrace


@dataclass
class EpochReport:
    index: int
    start_round: int
    end_round: int
    k_size: int
    g_size: int
    calm: bool
    witness: list[int] | None      # 0-based ids
    u: int | None = None           # union of witness task lists at epoch end
    s: int | None = None           # intersection
    busy_class: str = "main"       # main | mixed | closing
    partial: bool = False

    def row(self) -> dict:
        return {
            "epoch": self.index, "start_round": self.start_round,
            "end_round": self.end_round, "k_size": self.k_size,
            "g_size": self.g_size, "calm": self.calm,
            "witness_size": len(self.witness) if self.witness else 0,
            "u": self.u if self.u is not None else "",
            "s": self.s if self.s is not None else "",
            "busy_class": self.busy_class, "partial": self.partial,
        }


@dataclass
class ExtendedEpochReport:
    index: int
    m: int
    l: int
    core_size: int
    c: int
    u_prev: int
    s_last: int
    task_rich: bool
    productive: bool
    stormy: bool

    def row(self) -> dict:
        return {
            "extended": self.index, "first_epoch": self.m, "last_epoch": self.l,
            "core_size": self.core_size, "core_number": self.c,
            "u_prev": self.u_prev, "s_last": self.s_last,
            "task_rich": self.task_rich, "productive": self.productive,
            "stormy": self.stormy,
        }


@dataclass
class AnalysisReport:
    epochs: list[EpochReport]
    extended: list[ExtendedEpochReport]
    stormy_count: int
    violations: list[str] = field(default_factory=list)
    skips: list[str] = field(default_factory=list)
    observations: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "epochs": len(self.epochs),
            "extended_epochs": len(self.extended),
            "stormy_count": self.stormy_count,
            "violations": self.violations,
            "skips": self.skips,
            "observations": self.observations,
        }


def _induced_adj(overlay: OverlayGraph, alive: set[int]) -> dict[int, list[int]]:
    return {v: [int(u) for u in overlay.neighbors(v) if int(u) in alive]
            for v in alive}


def _ball(adj: dict[int, list[int]], start: int, radius: int) -> set[int]:
    seen = {start}
    frontier = [start]
    for _ in range(radius):
        nxt = []
        for v in frontier:
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    nxt.append(u)
        if not nxt:
            break
        frontier = nxt
    return seen


def _diameter_within(adj: dict[int, list[int]], nodes: set[int]) -> int:
    sub = {v: [u for u in adj[v] if u in nodes] for v in nodes}
    worst = 0
    for s in nodes:
        dist = {s: 0}
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for v in frontier:
                for u in sub[v]:
                    if u not in dist:
                        dist[u] = d
                        nxt.append(u)
            frontier = nxt
        if len(dist) < len(nodes):
            return 1 << 30  # disconnected within the candidate set
        worst = max(worst, max(dist.values()))
    return worst


def find_compact_witness(overlay: OverlayGraph, survivors: set[int],
                         p: int, f: int) -> list[int] | None:
    """Largest survivor ball of radius g(p) with induced diameter at most
    g(p) and size at least ceil((p-f)/7); ties go to the smallest center."""
    if not survivors:
        return None
    g = flood_horizon(p)
    thr = compact_threshold(p, f)
    adj = _induced_adj(overlay, survivors)
    best: list[int] | None = None
    for v in sorted(survivors):
        ball = _ball(adj, v, g)
        if len(ball) < thr:
            continue
        if best is not None and len(ball) <= len(best):
            continue
        if _diameter_within(adj, ball) <= g:
            best = sorted(ball)
    return best


def _words_popcount(words: np.ndarray) -> int:
    return int(np.unpackbits(words.view(np.uint8)).sum())


def partition_epochs(trace: RunTrace, overlay: OverlayGraph, p: int,
                     f: int) -> list[EpochReport]:
    """Epoch reports from crash events and the periodic snapshots."""
    g = flood_horizon(p)
    rpp = trace.rounds_per_phase
    end = trace.round_cap if trace.incomplete else trace.termination_round
    generic_end = min(end, trace.part_bounds.get("t1_effective", end))
    total_phases = max(0, -(-generic_end // rpp))
    crash_of = trace.crashed_rounds()
    snaps = {s.phase: s for s in trace.snapshots}
    tr_of = {int(v): int(r) for v, r in zip(trace.tr_proc, trace.tr_round)}

    def survivors_after(rnd: int) -> set[int]:
        return {v for v in range(p) if crash_of.get(v, 1 << 62) > rnd}

    reports = []
    n_epochs = -(-total_phases // g) if total_phases else 0
    for i in range(0, n_epochs + 1):
        start_phase = 0 if i == 0 else (i - 1) * g
        end_phase = 0 if i == 0 else min(i * g, total_phases)
        start_round = start_phase * rpp
        end_round = end_phase * rpp
        k_set = survivors_after(start_round)
        g_set = survivors_after(end_round)
        witness = find_compact_witness(overlay, g_set, p, f)
        rep = EpochReport(
            index=i, start_round=start_round, end_round=end_round,
            k_size=len(k_set), g_size=len(g_set),
            calm=2 * len(g_set) >= len(k_set),
            witness=witness,
            partial=(i > 0 and end_phase - start_phase < g),
        )
        if witness:
            snap = snaps.get(end_phase)
            if snap is not None:
                rows = snap.item_words[witness]
                union = np.bitwise_or.reduce(rows, axis=0)
                inter = np.bitwise_and.reduce(rows, axis=0)
                rep.u = _words_popcount(union)
                rep.s = _words_popcount(inter)
            busy_thru = [tr_of.get(v, 1 << 62) > end_round for v in witness]
            busy_at_start = [tr_of.get(v, 1 << 62) > start_round for v in witness]
            if all(busy_thru):
                rep.busy_class = "main"
            elif not any(busy_at_start):
                rep.busy_class = "closing"
            else:
                rep.busy_class = "mixed"
        reports.append(rep)
    return reports


def progress_series(epochs: list[EpochReport],
                    t_items: int) -> tuple[list[int | None], list[int | None], list[str], list[str]]:
    """(u_i, s_i) series plus hard violations and conditional skips."""
    u = [e.u for e in epochs]
    s = [e.s for e in epochs]
    violations: list[str] = []
    skips: list[str] = []
    prev_u = prev_s = t_items
    prev_witness: list[int] | None = None
    for e in epochs:
        if e.u is None:
            skips.append(f"epoch {e.index}: no witness or no snapshot")
            prev_witness = e.witness
            continue
        if e.s > e.u:
            violations.append(f"epoch {e.index}: s={e.s} > u={e.u}")
        if prev_u is not None and e.u > prev_u:
            violations.append(f"epoch {e.index}: u grew {prev_u} -> {e.u}")
        if prev_s is not None and e.s > prev_s:
            violations.append(f"epoch {e.index}: s grew {prev_s} -> {e.s}")
        if prev_witness is not None and e.witness is not None:
            if set(e.witness) <= set(prev_witness):
                if prev_s is not None and e.u > prev_s:
                    violations.append(
                        f"epoch {e.index}: u={e.u} exceeds previous s={prev_s} "
                        f"despite witness nesting")
            else:
                skips.append(f"epoch {e.index}: witness not nested, "
                             f"union/intersection step unchecked")
        prev_u, prev_s, prev_witness = e.u, e.s, e.witness
    return u, s, violations, skips


def partition_extended(epochs: list[EpochReport], t_items: int,
                       p: int) -> list[ExtendedEpochReport]:
    """Group epochs into extended epochs using witness sizes for the cores."""
    g = flood_horizon(p)
    if not epochs:
        return []
    out: list[ExtendedEpochReport] = []
    u_of = {e.index: e.u for e in epochs}
    s_of = {e.index: e.s for e in epochs}

    def u_at(idx: int) -> int:
        if idx < 0:
            return t_items
        val = u_of.get(idx)
        return val if val is not None else t_items

    def wsize(e: EpochReport) -> int:
        return len(e.witness) if e.witness else 0

    j = 0
    k = 0
    u_prev_ext = t_items
    by_index = {e.index: e for e in epochs}
    last_index = epochs[-1].index
    while k <= last_index:
        ek = by_index[k]
        if k == 0:
            m, l = 0, 0
        elif (not ek.calm) or wsize(ek) * g >= u_at(k - 1):
            m, l = k, k
        else:
            m = k
            l = k
            while l + 1 <= last_index:
                cand = by_index[l + 1]
                k_start = by_index[m].k_size
                if 2 * cand.g_size < k_start:
                    break
                if (l + 2 - m) * wsize(cand) * g >= u_at(m - 1):
                    break
                l += 1
        el = by_index[l]
        core = wsize(el)
        c = (l - m + 1) * core * g
        s_last = s_of.get(l)
        s_val = s_last if s_last is not None else u_at(l)
        rep = ExtendedEpochReport(
            index=j, m=m, l=l, core_size=core, c=c,
            u_prev=u_prev_ext, s_last=s_val,
            task_rich=c < u_prev_ext,
            productive=(u_prev_ext - s_val) * 4 >= min(u_prev_ext, c),
            stormy=2 * el.g_size < by_index[m].k_size,
        )
        out.append(rep)
        u_prev_ext = u_at(l)
        j += 1
        k = l + 1
    return out


def analyze_trace(trace: RunTrace, overlay: OverlayGraph, p: int, f: int,
                  t_items: int | None = None) -> AnalysisReport:
    if t_items is None:
        t_items = trace.items_total
    epochs = partition_epochs(trace, overlay, p, f)
    _, _, violations, skips = progress_series(epochs, t_items)
    extended = partition_extended(epochs, t_items, p)
    stormy = sum(1 for e in epochs if not e.calm)
    cap = math.ceil(math.log2(p)) if p > 1 else 1
    if stormy > cap:
        violations.append(f"{stormy} stormy epochs exceed ceil(log2 p) = {cap}")
    for ext in extended:
        if ext.c >= ext.u_prev and ext.l != ext.m:
            violations.append(
                f"extended epoch {ext.index} is task-poor yet spans "
                f"epochs {ext.m}..{ext.l}")
    observations = []
    witness_by_epoch = {e.index: set(e.witness) for e in epochs if e.witness}
    g = flood_horizon(p)
    rpp = trace.rounds_per_phase
    for rnd, v, busy_left, items_left in zip(
            trace.halt_round, trace.halt_proc, trace.halt_busy, trace.halt_items):
        epoch_idx = max(1, -(-int(rnd) // (g * rpp)))
        wit = witness_by_epoch.get(epoch_idx)
        if wit and int(v) in wit and (busy_left > 0 or items_left > 0):
            observations.append(
                f"witness member {int(v) + 1} halted in epoch {epoch_idx} with "
                f"busy={int(busy_left)}, items={int(items_left)}")
    return AnalysisReport(epochs=epochs, extended=extended,
                          stormy_count=stormy, violations=violations,
                          skips=skips, observations=observations)


def write_epoch_csv(report: AnalysisReport, path: str) -> None:
    rows = [e.row() for e in report.epochs]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else
                                ["epoch"])
        writer.writeheader()
        writer.writerows(rows)


def write_extended_csv(report: AnalysisReport, path: str) -> None:
    rows = [e.row() for e in report.extended]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else
                                ["extended"])
        writer.writeheader()
        writer.writerows(rows)


def write_summary_json(report: AnalysisReport, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# scaling-bound report across a sweep

def thm_balance_bound(p: int, t: int) -> float:
    lp = math.log2(max(2, p))
    lt = math.log2(max(2, t))
    return t + p * lp * (math.sqrt(p * lp) + math.sqrt(t * lt))


def thm_permutation_bound(p: int, t: int) -> float:
    lp = math.log2(max(2, p))
    return t + p * lp * lp


def thm_effort_bound(p: int, t: int) -> float:
    return t + p ** 1.77


def bound_report(rows: list[dict]) -> list[dict]:
    """Ratio table for sweep rows: measured metric over its scaling formula.

    Each input row needs algorithm, p, t, work, messages, effort, and
    max_degree.  The message column reports M/(max_degree*W), which stays
    at most 1.
    """
    out = []
    for row in rows:
        alg = row["algorithm"]
        p, t = int(row["p"]), int(row["t"])
        work = float(row["work"])
        effort = float(row["effort"])
        if alg == "balance_load":
            denom = thm_balance_bound(p, t)
            ratio = work / denom
            target = "work/thm_balance"
        elif alg in ("randomized_permutations", "deterministic_permutations"):
            denom = thm_permutation_bound(p, t)
            ratio = work / denom
            target = "work/thm_permutation"
        else:
            denom = thm_effort_bound(p, t)
            ratio = effort / denom
            target = "effort/thm_effort"
        deg = max(1, int(row["max_degree"]))
        out.append({
            "algorithm": alg, "p": p, "t": t,
            "ratio": ratio, "target": target,
            "msg_per_deg_work": float(row["messages"]) / (deg * max(1.0, work)),
        })
    return out
