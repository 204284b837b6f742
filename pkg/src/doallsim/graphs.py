"""Expander overlay graphs.

Builds the constructive Ramanujan graphs (Cayley graphs of PSL/PGL(2, Z_r)
with quaternion-derived generators), selects the power exponent from the
processor count and crash bound, raises graphs to powers, and verifies the
spectral and vertex-expansion guarantees the protocols rely on.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import GraphError, ParameterError, ShapeError
from .rng import SplitMix64

# Expansion constants of the degree-74 base graph: |N(R)| >= RHO*|R| for
# |R| <= p/50, and >= RHO1*|R| for |R| <= 71p/72.
RHO = Fraction(27, 2)
RHO1 = Fraction(1013, 1000)
DEFAULT_DELTA0 = 74

# Dense eigensolves and boolean matrix powers stay tractable up to here.
MAX_DENSE_NODES = 4000
MAX_LPS_NODES = 500_000


def flood_horizon(p: int) -> int:
    """ceil(30*log2(p)) + 2: phases needed to flood a compact subgraph.

    Computed exactly (ceil(30*log2(p)) == ceil(log2(p**30))) to avoid float
    rounding at powers of two.
    """
    if p < 1:
        raise ParameterError(f"p must be positive, got {p}")
    if p == 1:
        return 2
    x = p**30
    m = x.bit_length() - 1
    if x != 1 << m:
        m += 1
    return m + 2


def compact_threshold(p: int, f: int) -> int:
    """Minimum range size, ceil((p-f)/7), for a node to consider itself compact."""
    return -((p - f) // -7)


@dataclass(frozen=True)
class ExpanderGraph:
    """Simple undirected graph in CSR form; neighbor lists sorted, no self loops."""

    node_count: int
    degree_bound: int
    indptr: np.ndarray
    indices: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    @property
    def edge_count(self) -> int:
        return int(self.indices.size // 2)

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def is_regular(self) -> bool:
        d = self.degrees()
        return bool(d.size == 0 or np.all(d == d[0]))

    def adjacency_matrix(self, dtype=np.float64) -> np.ndarray:
        a = np.zeros((self.node_count, self.node_count), dtype=dtype)
        for v in range(self.node_count):
            a[v, self.neighbors(v)] = 1
        return a

    def validate(self) -> None:
        """Check symmetry, absence of self-entries, and the degree bound."""
        for v in range(self.node_count):
            nb = self.neighbors(v)
            if np.any(nb == v):
                raise GraphError(f"self-entry at node {v}")
            if np.any(np.diff(nb) <= 0):
                raise GraphError(f"unsorted or duplicated neighbors at node {v}")
            if nb.size > self.degree_bound:
                raise GraphError(f"degree bound violated at node {v}")
        rev = edge_set(self)
        for u, w in rev:
            if (w, u) not in rev:
                raise GraphError(f"asymmetric edge ({u},{w})")


def edge_set(g: ExpanderGraph) -> set[tuple[int, int]]:
    out = set()
    for v in range(g.node_count):
        for u in g.neighbors(v):
            out.add((v, int(u)))
    return out


def from_adjacency_sets(n: int, adj: list[set[int]], meta: dict | None = None) -> ExpanderGraph:
    """Build a CSR graph from per-node neighbor sets, dropping self-loops."""
    indptr = np.zeros(n + 1, dtype=np.int64)
    rows = []
    for v in range(n):
        nb = sorted(x for x in adj[v] if x != v)
        rows.append(np.asarray(nb, dtype=np.int32))
        indptr[v + 1] = indptr[v] + len(nb)
    indices = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int32)
    deg = int(np.diff(indptr).max()) if n else 0
    return ExpanderGraph(n, deg, indptr, indices.astype(np.int32), meta or {})


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for q in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def legendre(a: int, r: int) -> int:
    """Legendre symbol (a|r) for odd prime r, via Euler's criterion."""
    a %= r
    if a == 0:
        return 0
    v = pow(a, (r - 1) // 2, r)
    return 1 if v == 1 else -1


def _quaternion_generators(q: int) -> list[tuple[int, int, int, int]]:
    """The q+1 integer solutions of a0^2+a1^2+a2^2+a3^2 = q with a0 odd > 0
    and a1, a2, a3 even."""
    lim = math.isqrt(q) + 1
    odds = [a for a in range(1, lim + 1) if a % 2 == 1]
    evens = [a for a in range(-lim, lim + 1) if a % 2 == 0]
    sols = []
    for a0 in odds:
        r0 = q - a0 * a0
        if r0 < 0:
            continue
        for a1 in evens:
            r1 = r0 - a1 * a1
            if r1 < 0:
                continue
            for a2 in evens:
                r2 = r1 - a2 * a2
                if r2 < 0:
                    continue
                a3 = math.isqrt(r2)
                if a3 * a3 == r2 and a3 % 2 == 0:
                    sols.append((a0, a1, a2, a3))
                    if a3 != 0:
                        sols.append((a0, a1, a2, -a3))
    return sols


def _sqrt_minus_one_pair(r: int) -> tuple[int, int]:
    """x, y with x^2 + y^2 + 1 = 0 mod r: splits the quaternions over Z_r."""
    squares = {(x * x) % r: x for x in range(r)}
    for y in range(r):
        need = (-1 - y * y) % r
        if need in squares:
            return squares[need], y
    raise GraphError(f"no (x, y) with x^2+y^2+1 = 0 mod {r}")


def _canon(m: tuple[int, int, int, int], r: int) -> tuple[int, int, int, int]:
    """Canonical projective representative: scale so the first nonzero entry is 1."""
    for e in m:
        if e % r:
            inv = pow(e, r - 2, r)
            return tuple(x * inv % r for x in m)  # type: ignore[return-value]
    raise GraphError("zero matrix cannot be normalized")


def lps_field_prime(prime_q: int, target_nodes: int) -> tuple[int, int]:
    """Smallest admissible field prime r and the resulting node count.

    Candidates are odd primes r > 2*sqrt(prime_q), r != prime_q, taken in
    increasing order; the node count is r(r^2-1)/2 on PSL(2, Z_r) when
    prime_q is a quadratic residue mod r and r(r^2-1) on PGL(2, Z_r)
    otherwise.  The first candidate reaching target_nodes wins.
    """
    lo = 2 * math.isqrt(prime_q) + 1
    r = max(3, lo if lo % 2 == 1 else lo + 1)
    while True:
        if is_prime(r) and r != prime_q and r * r > 4 * prime_q:
            n = r * (r * r - 1)
            if legendre(prime_q, r) == 1:
                n //= 2
            if n >= target_nodes:
                return r, n
            if n > MAX_LPS_NODES:
                raise ParameterError(
                    f"target_nodes={target_nodes} exceeds the construction cap; "
                    f"largest admissible target_nodes is {MAX_LPS_NODES}"
                )
        r += 2


def build_lps(prime_q: int, target_nodes: int) -> ExpanderGraph:
    """Cayley-graph Ramanujan expander of degree prime_q + 1.

    Generators are the prime_q + 1 quaternion solutions embedded into
    2x2 matrices over Z_r; the node set is the subgroup they generate
    (PSL(2, Z_r) in the quadratic-residue case, all of PGL(2, Z_r)
    otherwise), found by closure from the identity.
    """
    if not is_prime(prime_q):
        raise ParameterError(f"prime_q={prime_q} is not prime")
    if prime_q % 4 != 1:
        raise ParameterError(f"prime_q={prime_q} is not 1 mod 4")
    if target_nodes < 1:
        raise ParameterError("target_nodes must be positive")
    r, n_expected = lps_field_prime(prime_q, target_nodes)
    if n_expected > MAX_LPS_NODES:
        raise ParameterError(
            f"graph on {n_expected} nodes exceeds the {MAX_LPS_NODES}-node cap"
        )

    x, y = _sqrt_minus_one_pair(r)
    gens = set()
    for a0, a1, a2, a3 in _quaternion_generators(prime_q):
        m = (
            (a0 + a1 * x + a3 * y) % r,
            (-a1 * y + a2 + a3 * x) % r,
            (-a1 * y - a2 + a3 * x) % r,
            (a0 - a1 * x - a3 * y) % r,
        )
        gens.add(_canon(m, r))
    if len(gens) != prime_q + 1:
        raise GraphError(
            f"generator count {len(gens)} != {prime_q + 1}; "
            f"field prime r={r} too small for degree {prime_q + 1}"
        )

    ident = (1, 0, 0, 1)
    index: dict[tuple[int, int, int, int], int] = {ident: 0}
    order = [ident]
    adj: list[set[int]] = []
    head = 0
    gen_list = sorted(gens)
    while head < len(order):
        a, b, c, d = order[head]
        nbrs = set()
        for e, f_, g_, h in gen_list:
            m = ((a * e + b * g_) % r, (a * f_ + b * h) % r,
                 (c * e + d * g_) % r, (c * f_ + d * h) % r)
            m = _canon(m, r)
            j = index.get(m)
            if j is None:
                j = len(order)
                index[m] = j
                order.append(m)
            nbrs.add(j)
        adj.append(nbrs)
        head += 1

    n = len(order)
    if n != n_expected:
        raise GraphError(f"closure produced {n} nodes, expected {n_expected}")
    g = from_adjacency_sets(
        n, adj,
        meta={"kind": "lps", "prime_q": prime_q, "field_prime": r,
              "degree": prime_q + 1,
              "group": "PSL" if legendre(prime_q, r) == 1 else "PGL"},
    )
    if not g.is_regular() or g.degree(0) != prime_q + 1:
        raise GraphError("constructed Cayley graph is not (prime_q+1)-regular")
    return g


@dataclass(frozen=True)
class PowerParams:
    """Exponent selection for the overlay power.

    r is minimal with (p-f)*rho^r > p/50; k is the minimal integer > r with
    (p-f)*rho^r*rho1^(k-r) > 71p/72; ell = 2k+1.
    """

    rho: Fraction
    rho1: Fraction
    r: int
    k: int
    ell: int


def select_power_params(p: int, f: int) -> PowerParams:
    """Pick (r, k, ell) for the overlay graph; exact integer arithmetic."""
    if not (1 <= f < p):
        raise ParameterError(f"need 1 <= f < p, got p={p}, f={f}")
    # (p-f) * (27/2)^r > p/50  <=>  50*(p-f)*27^r > p*2^r
    lhs, rhs = 50 * (p - f), p
    r = 0
    while True:
        r += 1
        lhs *= 27
        rhs *= 2
        if lhs > rhs:
            break
    # (p-f)*(27/2)^r*(1013/1000)^j > 71p/72  <=>  72*(p-f)*27^r*1013^j > 71*p*2^r*1000^j
    lhs2 = 72 * (p - f) * 27**r
    rhs2 = 71 * p * 2**r
    j = 0
    while True:
        j += 1
        lhs2 *= 1013
        rhs2 *= 1000
        if lhs2 > rhs2:
            break
    k = r + j
    return PowerParams(RHO, RHO1, r, k, 2 * k + 1)


def graph_power(g: ExpanderGraph, ell: int) -> ExpanderGraph:
    """Graph with an edge (u,v) iff 0 < dist_g(u,v) <= ell.

    Boolean repeated squaring on (A | I); stops early once reachability
    saturates (the matrix no longer changes), so huge exponents cost only
    O(log(diameter)) multiplications and a complete result is returned
    without extra work.
    """
    if ell < 1:
        raise ParameterError(f"ell must be >= 1, got {ell}")
    if ell == 1:
        return g
    n = g.node_count
    if n > MAX_DENSE_NODES:
        raise ParameterError(f"dense graph power capped at {MAX_DENSE_NODES} nodes")
    base = np.eye(n, dtype=np.float32)
    for v in range(n):
        base[v, g.neighbors(v)] = 1.0
    result = np.eye(n, dtype=np.float32)
    sq = base
    e = ell
    while e > 0:
        if e & 1:
            nxt = (result @ sq) > 0
            result = nxt.astype(np.float32)
        e >>= 1
        if e:
            sq2 = (sq @ sq) > 0
            if np.array_equal(sq2, sq > 0):
                # distances exhausted: every remaining power equals this one
                result = ((result @ sq) > 0).astype(np.float32)
                break
            sq = sq2.astype(np.float32)
    reach = result > 0
    np.fill_diagonal(reach, False)
    adj = [set(np.nonzero(reach[v])[0].tolist()) for v in range(n)]
    meta = dict(g.meta)
    meta["power"] = meta.get("power", 1) * ell
    return from_adjacency_sets(n, adj, meta)


def is_connected(g: ExpanderGraph) -> bool:
    if g.node_count == 0:
        return True
    seen = np.zeros(g.node_count, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        v = stack.pop()
        for u in g.neighbors(v):
            if not seen[u]:
                seen[u] = True
                stack.append(int(u))
    return bool(seen.all())


@dataclass(frozen=True)
class SpectralReport:
    lambda0: float
    lam: float
    ramanujan_bound: float
    satisfied: bool
    bipartite: bool
    node_count: int

    def to_dict(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "lambda": self.lam,
            "ramanujan_bound": self.ramanujan_bound,
            "satisfied": self.satisfied,
            "bipartite": self.bipartite,
            "node_count": self.node_count,
        }


EIG_TOL = 1e-6


def spectral_check(g: ExpanderGraph, delta0: int) -> SpectralReport:
    """Eigenvalue report for a connected regular graph.

    lam is the largest absolute eigenvalue after discarding the trivial
    ones: the degree, and additionally its negative when the graph is
    bipartite (so the report reflects the expansion-relevant gap).
    """
    if not g.is_regular():
        raise ShapeError("spectral check requires a regular graph")
    if not is_connected(g):
        raise ShapeError("spectral check requires a connected graph")
    if g.node_count > MAX_DENSE_NODES:
        raise ParameterError(f"dense eigensolve capped at {MAX_DENSE_NODES} nodes")
    ev = np.linalg.eigvalsh(g.adjacency_matrix())
    lambda0 = float(ev[-1])
    bipartite = bool(abs(ev[0] + lambda0) <= EIG_TOL)
    inner = ev[1:-1] if bipartite else ev[:-1]
    lam = float(max(abs(inner[0]), abs(inner[-1]))) if inner.size else 0.0
    bound = 2.0 * math.sqrt(delta0 - 1)
    return SpectralReport(
        lambda0=lambda0,
        lam=lam,
        ramanujan_bound=bound,
        satisfied=bool(lam <= bound + EIG_TOL),
        bipartite=bipartite,
        node_count=g.node_count,
    )


def neighborhood(g: ExpanderGraph, subset: np.ndarray | list[int]) -> np.ndarray:
    """N_G(subset): every node adjacent to some node of the subset."""
    subset = np.asarray(subset, dtype=np.int64)
    sel = np.zeros(g.node_count, dtype=bool)
    sel[subset] = True
    src = np.repeat(np.arange(g.node_count), np.diff(g.indptr))
    mask = np.zeros(g.node_count, dtype=bool)
    mask[g.indices[sel[src]]] = True
    return np.nonzero(mask)[0]


def tanner_lower_bound(
    g: ExpanderGraph, subset: np.ndarray | list[int], report: SpectralReport | None = None
) -> float:
    """Vertex-expansion lower bound lam0^2*|V0| / (lam^2 + (lam0^2-lam^2)*|V0|/p)."""
    size = len(subset)
    if size == 0:
        raise ParameterError("subset must be nonempty")
    if report is None:
        report = spectral_check(g, g.degree_bound)
    lam0sq = report.lambda0**2
    lamsq = report.lam**2
    frac = size / g.node_count
    return lam0sq * size / (lamsq + (lam0sq - lamsq) * frac)


def random_regular(p: int, degree: int, seed: int, max_retries: int = 100_000) -> ExpanderGraph:
    """Uniform random connected simple d-regular graph.

    Sparse degrees come from the configuration model with rejection of
    self-loops and parallel edges (accepted pairings are uniform over simple
    d-regular graphs).  For degrees above (p-1)/2 the complement graph is
    generated instead (complementation is a bijection between the two
    families, so uniformity carries over).  Disconnected draws are rejected
    too: the overlay must support flooding.
    """
    if degree >= p:
        raise ParameterError(f"degree {degree} must be < node count {p}")
    if (p * degree) % 2 != 0:
        raise ParameterError("p*degree must be even")
    rng = SplitMix64(seed)
    flip = degree > (p - 1) / 2
    want = (p - 1 - degree) if flip else degree
    meta = {"kind": "random_regular", "degree": degree}
    for _ in range(max_retries):
        if want == 0:
            norm: set[tuple[int, int]] = set()
        else:
            stubs = [v for v in range(p) for _ in range(want)]
            rng.shuffle(stubs)
            pairs = [(stubs[2 * i], stubs[2 * i + 1])
                     for i in range(len(stubs) // 2)]
            if any(a == b for a, b in pairs):
                continue
            norm = {(min(a, b), max(a, b)) for a, b in pairs}
            if len(norm) != len(pairs):
                continue
        adj: list[set[int]] = [set() for _ in range(p)]
        if flip:
            for a in range(p):
                for b in range(a + 1, p):
                    if (a, b) not in norm:
                        adj[a].add(b)
                        adj[b].add(a)
        else:
            for a, b in norm:
                adj[a].add(b)
                adj[b].add(a)
        g = from_adjacency_sets(p, adj, meta=meta)
        if is_connected(g):
            return g
    raise GraphError(
        f"no connected simple {degree}-regular graph found in {max_retries} tries"
    )


def complete_graph(p: int) -> ExpanderGraph:
    adj = [set(range(p)) - {v} for v in range(p)]
    return from_adjacency_sets(p, adj, meta={"kind": "complete"})


@dataclass(frozen=True)
class OverlayGraph:
    """Processor-level communication topology.

    When the base expander has more nodes than processors, each processor
    simulates a block of graph nodes (node j is hosted by processor
    floor(j*p/n)), and two processors are neighbors iff any of their hosted
    nodes are adjacent in the powered expander.
    """

    p: int
    indptr: np.ndarray
    indices: np.ndarray
    max_degree: int
    ell: int
    mode: str
    delta0: int
    f: int
    base_nodes: int
    nodes_per_processor: int
    spectral: SpectralReport | None = None

    def neighbors(self, v: int) -> np.ndarray:
        """0-based processor neighbors."""
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def neighbor_sets(self) -> list[set[int]]:
        return [set(self.neighbors(v).tolist()) for v in range(self.p)]

    def meta_dict(self) -> dict:
        return {
            "p": self.p,
            "max_degree": self.max_degree,
            "ell": self.ell,
            "mode": self.mode,
            "delta0": self.delta0,
            "f": self.f,
            "base_nodes": self.base_nodes,
            "nodes_per_processor": self.nodes_per_processor,
            "spectral": self.spectral.to_dict() if self.spectral else None,
        }


def _quotient(g: ExpanderGraph, p: int) -> tuple[np.ndarray, np.ndarray]:
    n = g.node_count
    host = (np.arange(n, dtype=np.int64) * p) // n
    adj: list[set[int]] = [set() for _ in range(p)]
    for v in range(n):
        hv = int(host[v])
        for u in g.neighbors(v):
            hu = int(host[u])
            if hu != hv:
                adj[hv].add(hu)
                adj[hu].add(hv)
    q = from_adjacency_sets(p, adj)
    return q.indptr, q.indices


def build_overlay(
    p: int,
    f: int,
    delta0: int = DEFAULT_DELTA0,
    mode: str = "lps",
    seed: int = 0,
    retry_cap: int = 100_000,
) -> OverlayGraph:
    """Overlay topology for p processors tolerating f crashes.

    f <= p/72 keeps the base expander unpowered; larger f powers it by the
    exponent from select_power_params.  Powers that saturate come back as
    the complete graph (detected exactly during squaring).
    """
    if not (0 <= f < p):
        raise ParameterError(f"need 0 <= f < p, got p={p}, f={f}")
    if mode not in ("lps", "random_regular"):
        raise ParameterError(f"unknown overlay mode {mode!r}")
    if p == 1:
        return OverlayGraph(1, np.zeros(2, dtype=np.int64),
                            np.zeros(0, dtype=np.int32), 0, 1, mode, delta0,
                            f, 1, 1, None)

    if mode == "lps":
        base = build_lps(delta0 - 1, p)
        report = None
        if base.node_count <= MAX_DENSE_NODES:
            report = spectral_check(base, delta0)
            if not report.satisfied:
                raise GraphError("constructed base graph misses the Ramanujan bound")
    else:
        base = random_regular(p, delta0, seed, retry_cap)
        report = spectral_check(base, delta0)

    ell = 1 if 72 * f <= p else select_power_params(p, f).ell
    powered = graph_power(base, ell) if ell > 1 else base

    n = powered.node_count
    if n == p:
        indptr, indices = powered.indptr, powered.indices
    else:
        indptr, indices = _quotient(powered, p)
    max_deg = int(np.diff(indptr).max()) if p > 1 else 0
    return OverlayGraph(
        p=p,
        indptr=indptr,
        indices=indices,
        max_degree=max_deg,
        ell=ell,
        mode=mode,
        delta0=delta0,
        f=f,
        base_nodes=base.node_count,
        nodes_per_processor=-(-n // p),
        spectral=report,
    )


def save_edge_list(g: ExpanderGraph, path: str, meta_extra: dict | None = None) -> None:
    """Text format: first line "n m", then one "u v" line per edge (0-based).

    A JSON sidecar <path>.meta.json records degree and provenance.
    """
    lines = [f"{g.node_count} {g.edge_count}"]
    for v in range(g.node_count):
        for u in g.neighbors(v):
            if v < u:
                lines.append(f"{v} {u}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = dict(g.meta)
    meta["degree_bound"] = g.degree_bound
    if meta_extra:
        meta.update(meta_extra)
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_edge_list(path: str) -> ExpanderGraph:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise GraphError(f"{path}: bad header")
        n, m = int(header[0]), int(header[1])
        adj: list[set[int]] = [set() for _ in range(n)]
        count = 0
        for line in fh:
            line = line.strip()
            if not line:
                continue
            u, v = (int(x) for x in line.split())
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"{path}: edge ({u},{v}) out of range")
            adj[u].add(v)
            adj[v].add(u)
            count += 1
    if count != m:
        raise GraphError(f"{path}: header claims {m} edges, found {count}")
    meta = {}
    meta_path = path + ".meta.json"
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
    return from_adjacency_sets(n, adj, meta)
