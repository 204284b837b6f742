"""Selection rules: load-balanced ranks and private-permutation orders.

Two rule families plug into the generic protocol.  The rank rule picks the
list position ceil(k*v/p) so distinct processors spread over a shared list.
The permutation rule gives each processor a private pair (pi1 over the
processor ids, pi2 over a padded task domain of size 11*p^2*g(p)) and
consumes lists in permuted order.

Seed-backed pi2 permutations are represented by selection keys instead of a
materialized image table: position e of the padded list gets the 64-bit key
mix64(seed + e*GAMMA), and "reorder by pi2 then take heads" is exactly
"repeatedly take the present element with the smallest key".  This keeps the
rule O(1) in memory for domains of millions of entries while matching
`rng.key_order_permutation` element for element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError
from .graphs import flood_horizon
from .rng import key_order_permutation, substream
from . import kernels

_PI1_TAG = 0x70F1
_PI2_TAG = 0x70F2


def pi2_domain(p: int) -> int:
    """Padded permutation domain 11*p^2*g(p)."""
    return 11 * p * p * flood_horizon(p)


def balance_rank(k: int, v: int, p: int) -> int:
    """1-based position ceil(k*v/p); lands in [1, k] for 1 <= v <= p."""
    if k < 1:
        raise ParameterError("rank undefined on an empty list")
    if not (1 <= v <= p):
        raise ParameterError(f"processor id {v} outside [1, {p}]")
    return (k * v + p - 1) // p


def balance_select(items: list[int], v: int, p: int) -> int:
    """Item at the rank position; items must be sorted and nonempty."""
    return items[balance_rank(len(items), v, p) - 1]


@dataclass(frozen=True)
class PermutationPair:
    """Private permutations of one processor.

    pi1 is materialized as the image list over {1..p}.  pi2 is either
    seed-backed (pi2_seed) or an explicit image list over {1..domain}
    loaded from a table file.
    """

    pi1: np.ndarray
    domain: int
    pi2_seed: int | None = None
    pi2_images: np.ndarray | None = None

    def pi2_order_keys(self, n: int) -> np.ndarray:
        """Selection key of each padded position 1..n (lower key = earlier)."""
        if self.pi2_images is not None:
            inv = np.empty(self.domain + 1, dtype=np.uint64)
            inv[self.pi2_images] = np.arange(len(self.pi2_images), dtype=np.uint64)
            return inv[1:n + 1]
        idx = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.pi2_seed) + idx * np.uint64(0x9E3779B97F4A7C15)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        return z


def derive_pair(seed: int, pid: int, p: int, t: int) -> PermutationPair:
    """Private pair of processor pid from a run-level seed."""
    d = pi2_domain(p)
    s1 = substream(seed, _PI1_TAG, pid)
    s2 = substream(seed, _PI2_TAG, pid)
    return PermutationPair(pi1=key_order_permutation(s1, p), domain=d, pi2_seed=s2)


def make_random_permutations(seed: int, p: int, t: int) -> list[PermutationPair]:
    """One independent pair per processor id 1..p."""
    return [derive_pair(seed, pid, p, t) for pid in range(1, p + 1)]


def pad_permute_compact(items: list[int], pair: PermutationPair) -> list[int]:
    """Reorder a list by pi2: pad to the domain with dummies, permute, drop dummies.

    Position j of the padded list holds items[j-1] for j <= len(items); the
    surviving order is by ascending pi2 selection key of the position.
    """
    n = len(items)
    if n > pair.domain:
        raise ParameterError(f"list of {n} items exceeds the pi2 domain {pair.domain}")
    keys = pair.pi2_order_keys(n)
    return [items[i] for i in np.argsort(keys, kind="stable")]


def pi1_order(items: list[int], pair: PermutationPair) -> list[int]:
    """Busy-list entries in pi1 order (the head is selected first)."""
    inv = np.empty(len(pair.pi1) + 1, dtype=np.int64)
    inv[pair.pi1] = np.arange(len(pair.pi1))
    return sorted(items, key=lambda x: inv[x])


@dataclass
class RuleState:
    """Per-processor permutation-rule bookkeeping."""

    mode: str = "balance"  # balance -> permuted, never back
    permuted_order: list[int] | None = None


class BalanceLoadRule:
    """Rank rule ceil(k*v/p) on both the task and busy lists."""

    kind = kernels.RULE_BALANCE
    name = "balance_load"

    def __init__(self, p: int):
        self.p = p

    def select_task(self, pid: int, tasks: list[int], state: RuleState) -> int:
        return balance_select(tasks, pid, self.p)

    def select_busy(self, pid: int, busy: list[int]) -> int:
        return balance_select(busy, pid, self.p)


class PermutationRule:
    """Private-permutation rule; behaves as the rank rule above the trigger.

    The pi2 reorder fires the first time the task list is no longer larger
    than the padded domain (immediately, when t is at most the domain);
    afterwards the head of the reordered list is consumed.  Busy lists are
    consumed in pi1 order.
    """

    kind = kernels.RULE_PERMUTED

    def __init__(self, p: int, t: int, pairs: list[PermutationPair], name: str):
        self.p = p
        self.t = t
        self.pairs = pairs
        self.name = name
        self.domain = pairs[0].domain if pairs else pi2_domain(p)

    def pair_for(self, pid: int) -> PermutationPair:
        return self.pairs[pid - 1]

    def select_task(self, pid: int, tasks: list[int], state: RuleState) -> int:
        if state.mode == "balance" and len(tasks) > self.domain:
            return balance_select(tasks, pid, self.p)
        if state.mode == "balance":
            state.mode = "permuted"
            state.permuted_order = pad_permute_compact(tasks, self.pair_for(pid))
        present = set(tasks)
        order = state.permuted_order
        while order and order[0] not in present:
            order.pop(0)
        if not order:
            raise ParameterError("permuted order exhausted with tasks outstanding")
        return order.pop(0)

    def select_busy(self, pid: int, busy: list[int]) -> int:
        return pi1_order(busy, self.pair_for(pid))[0]


def dump_permutations(path: str, pairs: list[PermutationPair]) -> None:
    """One line per processor: "id | pi1 images | pi2 images-or-seed"."""
    lines = []
    for pid, pair in enumerate(pairs, start=1):
        p1 = " ".join(str(x) for x in pair.pi1.tolist())
        if pair.pi2_seed is not None:
            p2 = f"seed:{pair.pi2_seed}"
        else:
            p2 = " ".join(str(x) for x in pair.pi2_images.tolist())
        lines.append(f"{pid} | {p1} | {p2}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_fixed_permutations(path: str, p: int, t: int) -> list[PermutationPair]:
    """Parse a permutation table; validates bijections and completeness."""
    domain = pi2_domain(p)
    found: dict[int, PermutationPair] = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw or raw.startswith("#"):
                continue
            parts = [x.strip() for x in raw.split("|")]
            if len(parts) != 3:
                raise FormatError("expected 'id | pi1 | pi2'", ln)
            try:
                pid = int(parts[0])
            except ValueError:
                raise FormatError(f"bad processor id {parts[0]!r}", ln) from None
            if not (1 <= pid <= p):
                raise FormatError(f"processor id {pid} outside [1, {p}]", ln)
            if pid in found:
                raise FormatError(f"duplicate entry for processor {pid}", ln)
            pi1 = np.asarray([int(x) for x in parts[1].split()], dtype=np.int64)
            if sorted(pi1.tolist()) != list(range(1, p + 1)):
                raise FormatError(f"pi1 is not a permutation of 1..{p}", ln)
            if parts[2].startswith("seed:"):
                pair = PermutationPair(pi1=pi1, domain=domain,
                                       pi2_seed=int(parts[2][5:]) & ((1 << 64) - 1))
            else:
                pi2 = np.asarray([int(x) for x in parts[2].split()], dtype=np.int64)
                if len(pi2) != domain:
                    raise FormatError(
                        f"pi2 has {len(pi2)} images, domain is {domain}", ln)
                if sorted(pi2.tolist()) != list(range(1, domain + 1)):
                    raise FormatError("pi2 is not a permutation of its domain", ln)
                pair = PermutationPair(pi1=pi1, domain=domain, pi2_images=pi2)
            found[pid] = pair
    missing = [pid for pid in range(1, p + 1) if pid not in found]
    if missing:
        raise FormatError(f"missing processor ids {missing}")
    return [found[pid] for pid in range(1, p + 1)]
