"""Crash adversaries: who crashes when, and which envelopes still leave.

A policy is consulted at rounds it declares interesting; it then returns
decisions for the enclosing phase's rounds based on the engine view (full
global state).  Delivery of a crashing sender's multicast is specified per
decision: everything, nothing, an explicit receiver subset, or a seeded
random half.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ScheduleError, SpecError
from .graphs import flood_horizon
from .rng import SplitMix64, substream

_ADV_TAG = 0xADF0


@dataclass(frozen=True)
class CrashDecision:
    """victim is 1-based; delivered is "all" | "none" | "half" | [receiver ids]."""

    victim: int
    round: int
    delivered: object = "none"
    seed: int = 0  # used by the "half" rule


@dataclass
class AdversaryBudget:
    f: int
    crashed_so_far: int = 0

    def take(self, n: int) -> int:
        room = self.f - self.crashed_so_far
        n = min(n, room)
        self.crashed_so_far += n
        return n


@dataclass
class AdversaryContext:
    p: int
    t: int
    f: int
    seed: int
    round_cap: int
    horizon_hint: int  # rough expected run length in rounds


class AdversaryPolicy:
    """Base: no crashes."""

    name = "none"

    def reset(self, ctx: AdversaryContext) -> None:
        self.ctx = ctx
        self.budget = AdversaryBudget(ctx.f)

    def next_intervention(self, after_round: int) -> int | None:
        """Earliest round > after_round at which decide() may act, or None."""
        return None

    def decide(self, view, lo: int, hi: int) -> list[CrashDecision]:
        """Decisions for rounds in [lo, hi]; called with the state before lo."""
        return []


class NoCrashes(AdversaryPolicy):
    pass


class Scripted(AdversaryPolicy):
    """Fixed schedule of {round, victim, delivered} records."""

    name = "scripted"

    def __init__(self, entries: list[dict]):
        self.entries = sorted(entries, key=lambda e: (e["round"], e["victim"]))
        seen = set()
        for e in self.entries:
            if e["victim"] in seen:
                raise ScheduleError(f"processor {e['victim']} scripted to crash twice")
            seen.add(e["victim"])

    @classmethod
    def from_json(cls, path: str) -> "Scripted":
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, list):
            raise ScheduleError("schedule file must hold a JSON array")
        entries = []
        for rec in data:
            entries.append({
                "round": int(rec["round"]),
                "victim": int(rec["victim"]),
                "delivered": rec.get("delivered", "none"),
            })
        return cls(entries)

    def next_intervention(self, after_round: int) -> int | None:
        for e in self.entries:
            if e["round"] > after_round:
                return e["round"]
        return None

    def decide(self, view, lo: int, hi: int) -> list[CrashDecision]:
        out = []
        for e in self.entries:
            if lo <= e["round"] <= hi and self.budget.take(1):
                out.append(CrashDecision(
                    victim=e["victim"], round=e["round"],
                    delivered=e["delivered"],
                    seed=substream(self.ctx.seed, _ADV_TAG, e["round"], e["victim"]),
                ))
        return out


class AllButOne(AdversaryPolicy):
    """Crash every processor except one survivor in a single round."""

    name = "all_but_one"

    def __init__(self, round: int = 1, survivor: int | None = None):
        self.round = round
        self.survivor = survivor

    def reset(self, ctx: AdversaryContext) -> None:
        super().reset(ctx)
        if self.survivor is None:
            rng = SplitMix64(substream(ctx.seed, _ADV_TAG, 1))
            self._survivor = rng.randrange(ctx.p) + 1
        else:
            self._survivor = self.survivor

    def next_intervention(self, after_round: int) -> int | None:
        return self.round if after_round < self.round else None

    def decide(self, view, lo: int, hi: int) -> list[CrashDecision]:
        if not (lo <= self.round <= hi):
            return []
        out = []
        for pid in range(1, self.ctx.p + 1):
            if pid != self._survivor and view.is_active(pid) and self.budget.take(1):
                out.append(CrashDecision(victim=pid, round=self.round,
                                         delivered="none"))
        return out


class RandomBounded(AdversaryPolicy):
    """f crashes at seed-drawn rounds; victims drawn among live processors
    when each round arrives; delivery is a random half of the multicast."""

    name = "random_bounded"

    def reset(self, ctx: AdversaryContext) -> None:
        super().reset(ctx)
        rng = SplitMix64(substream(ctx.seed, _ADV_TAG, 2))
        horizon = max(4, ctx.horizon_hint)
        self.rounds = sorted(rng.randrange(horizon) + 1 for _ in range(ctx.f))
        self._used = 0

    def next_intervention(self, after_round: int) -> int | None:
        for r in self.rounds[self._used:]:
            if r > after_round:
                return r
        return None

    def decide(self, view, lo: int, hi: int) -> list[CrashDecision]:
        out = []
        i = self._used
        while i < len(self.rounds) and self.rounds[i] <= hi:
            r = self.rounds[i]
            if r >= lo:
                victims = view.active_processors()
                if victims and self.budget.take(1):
                    rng = SplitMix64(substream(self.ctx.seed, _ADV_TAG, 3, r, i))
                    pid = victims[rng.randrange(len(victims))]
                    out.append(CrashDecision(
                        victim=pid, round=r, delivered="half",
                        seed=substream(self.ctx.seed, _ADV_TAG, 4, r, pid)))
            i += 1
        self._used = i
        return out


class FChain(AdversaryPolicy):
    """Crashes only in the final round of each regular epoch, thinning the
    survivor set to the next target size; smallest ids survive.

    Target sizes must follow the constrained shape: start at p, be
    non-increasing, stay at least p - f, and each be either p - f or
    ceil(p / 2^i).
    """

    name = "f_chain"

    def __init__(self, target_sizes: list[int]):
        self.target_sizes = list(target_sizes)

    def reset(self, ctx: AdversaryContext) -> None:
        super().reset(ctx)
        p, f = ctx.p, ctx.f
        sizes = self.target_sizes
        if not sizes or sizes[0] != p:
            raise SpecError(f"target sizes must start at p={p}")
        admissible = {p - f} | {-(-p // (1 << i)) for i in range(p.bit_length() + 1)}
        floor = p - f
        for a, b in zip(sizes, sizes[1:]):
            if b > a:
                raise SpecError(f"target sizes must be non-increasing, got {a}->{b}")
        for s in sizes:
            if s < floor:
                raise SpecError(f"target size {s} below the survivor floor {floor}")
            if s not in admissible:
                raise SpecError(f"target size {s} is neither p-f nor ceil(p/2^i)")

    def attach_grid(self, rounds_per_phase: int) -> None:
        self._rpp = rounds_per_phase
        self._g = flood_horizon(self.ctx.p)
        self._boundary = 0  # epochs processed so far

    def _boundary_round(self, k: int) -> int:
        # final round of regular epoch k (epochs are g(p) phases)
        return k * self._g * self._rpp

    def next_intervention(self, after_round: int) -> int | None:
        k = self._boundary + 1
        while k < len(self.target_sizes):
            r = self._boundary_round(k)
            if r > after_round:
                return r
            k += 1
        return None

    def decide(self, view, lo: int, hi: int) -> list[CrashDecision]:
        out = []
        for k in range(self._boundary + 1, len(self.target_sizes)):
            r = self._boundary_round(k)
            if r > hi:
                break
            if r >= lo:
                survivors = view.noncrashed_processors()
                target = self.target_sizes[k]
                doomed = sorted(survivors)[target:]
                for pid in doomed:
                    if self.budget.take(1):
                        out.append(CrashDecision(victim=pid, round=r,
                                                 delivered="all"))
            self._boundary = k
        return out


class CrashCoordinators(AdversaryPolicy):
    """Checkpoint-stage stressor: in a proposal round, crash the smallest
    current coordinators-list head, delivering a random half."""

    name = "crash_coordinators"

    def next_intervention(self, after_round: int) -> int | None:
        # the engine consults the policy every round during checkpointing
        return after_round + 1

    def decide(self, view, lo: int, hi: int) -> list[CrashDecision]:
        if not view.in_checkpoint_proposal_round(lo):
            return []
        heads = view.coordinator_heads()
        if not heads:
            return []
        victim = min(heads)
        if not view.is_active(victim) or not self.budget.take(1):
            return []
        return [CrashDecision(
            victim=victim, round=lo, delivered="half",
            seed=substream(self.ctx.seed, _ADV_TAG, 5, lo, victim))]


def make_policy(spec: dict | None) -> AdversaryPolicy:
    """Policy from its config spec: {"kind": ..., ...}."""
    if not spec or spec.get("kind") in (None, "none"):
        return NoCrashes()
    kind = spec["kind"]
    if kind == "scripted":
        if "path" in spec:
            return Scripted.from_json(spec["path"])
        return Scripted(spec["entries"])
    if kind == "all_but_one":
        return AllButOne(round=spec.get("round", 1), survivor=spec.get("survivor"))
    if kind == "random_bounded":
        return RandomBounded()
    if kind == "f_chain":
        return FChain(spec["target_sizes"])
    if kind == "crash_coordinators":
        return CrashCoordinators()
    raise SpecError(f"unknown adversary kind {kind!r}")
