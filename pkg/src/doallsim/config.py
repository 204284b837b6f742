"""Run configuration: schema, validation, and object construction.

A config is a flat JSON object; `validate` returns a typed RunConfig or
raises ConfigError carrying a machine-readable report (a list of
{"field", "error"} records) that the CLI emits on exit code 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .adversaries import make_policy
from .effort import DEFAULT_A, DEFAULT_CT, EffortPriority, alpha_upper_bound, derive_params
from .engine import (BalanceLoad, DeterministicPermutations,
                     RandomizedPermutations, default_round_cap)
from .errors import ConfigError, DoAllError
from .graphs import build_overlay, is_prime

ALGORITHMS = ("balance_load", "randomized_permutations",
              "deterministic_permutations", "effort_priority")


@dataclass
class RunConfig:
    p: int
    t: int
    algorithm: str
    f: int
    delta0: int = 6
    graph_mode: str = "random_regular"
    adversary: dict = field(default_factory=dict)
    seed: int = 0
    round_cap: int | None = None
    a: float = DEFAULT_A
    ct: float = DEFAULT_CT
    permutations: dict | None = None
    output_dir: str = "."

    def key(self) -> str:
        adv = self.adversary.get("kind", "none") if self.adversary else "none"
        return f"{self.algorithm}-p{self.p}-t{self.t}-f{self.f}-{adv}-s{self.seed}"

    def echo(self) -> dict:
        doc = {
            "p": self.p, "t": self.t, "algorithm": self.algorithm, "f": self.f,
            "delta0": self.delta0, "graph_mode": self.graph_mode,
            "adversary": self.adversary or {"kind": "none"},
            "seed": self.seed, "round_cap": self.round_cap,
        }
        if self.algorithm == "effort_priority":
            doc["a"] = self.a
            doc["ct"] = self.ct
        if self.permutations:
            doc["permutations"] = self.permutations
        return doc


def validate(raw: dict) -> RunConfig:
    report: list[dict] = []

    def bad(fld: str, msg: str):
        report.append({"field": fld, "error": msg})

    p = raw.get("p")
    if not isinstance(p, int) or p < 1:
        bad("p", f"need a positive integer, got {p!r}")
        p = 1
    t = raw.get("t", 0)
    if not isinstance(t, int) or t < 0:
        bad("t", f"need a nonnegative integer, got {t!r}")
        t = 0
    algorithm = raw.get("algorithm")
    if algorithm not in ALGORITHMS:
        bad("algorithm", f"got {algorithm!r}, expected one of {ALGORITHMS}")
        algorithm = "balance_load"
    f = raw.get("f", "unbounded")
    if f == "unbounded":
        f = p - 1
    if not isinstance(f, int) or not (0 <= f < p):
        bad("f", f"need 0 <= f < p (or \"unbounded\"), got {raw.get('f')!r}")
        f = max(0, p - 1)
    delta0 = raw.get("delta0", 6)
    graph_mode = raw.get("graph_mode", "random_regular")
    if graph_mode not in ("lps", "random_regular"):
        bad("graph_mode", f"got {graph_mode!r}")
        graph_mode = "random_regular"
    if graph_mode == "lps":
        if not (isinstance(delta0, int) and is_prime(delta0 - 1)
                and (delta0 - 1) % 4 == 1):
            bad("delta0", f"lps mode needs delta0-1 prime and 1 mod 4, got {delta0!r}")
    else:
        if not isinstance(delta0, int) or delta0 < 2:
            bad("delta0", f"need an integer degree >= 2, got {delta0!r}")
        elif p > 1 and (delta0 >= p or (p * delta0) % 2 != 0):
            bad("delta0", f"no simple {delta0}-regular graph on {p} nodes")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        bad("seed", f"need a nonnegative integer, got {seed!r}")
        seed = 0
    round_cap = raw.get("round_cap")
    if round_cap is not None and (not isinstance(round_cap, int) or round_cap < 1):
        bad("round_cap", f"need a positive integer, got {round_cap!r}")
        round_cap = None
    a = raw.get("a", DEFAULT_A)
    ct = raw.get("ct", DEFAULT_CT)
    if algorithm == "effort_priority":
        try:
            bound = alpha_upper_bound(delta0 if isinstance(delta0, int) else 74)
            if not (0 < float(a) < bound):
                bad("a", f"a={a} outside (0, {bound:.4f}) for delta0={delta0}")
        except (TypeError, ValueError):
            bad("a", f"need a real number, got {a!r}")
        if not isinstance(ct, (int, float)) or ct <= 0:
            bad("ct", f"need a positive real, got {ct!r}")
    adversary = raw.get("adversary") or {}
    if adversary:
        kind = adversary.get("kind")
        if kind not in (None, "none", "scripted", "all_but_one",
                        "random_bounded", "f_chain", "crash_coordinators"):
            bad("adversary.kind", f"unknown kind {kind!r}")
    permutations = raw.get("permutations")
    known = {"p", "t", "algorithm", "f", "delta0", "graph_mode", "adversary",
             "seed", "round_cap", "a", "ct", "permutations", "output_dir"}
    for key in raw:
        if key not in known:
            bad(key, "unknown field")
    if report:
        raise ConfigError(report)
    return RunConfig(p=p, t=t, algorithm=algorithm, f=f, delta0=delta0,
                     graph_mode=graph_mode, adversary=adversary, seed=seed,
                     round_cap=round_cap, a=float(a), ct=float(ct),
                     permutations=permutations,
                     output_dir=raw.get("output_dir", "."))


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([{"field": "<file>", "error": str(exc)}]) from None
    return validate(raw)


def build_protocol(cfg: RunConfig):
    if cfg.algorithm == "balance_load":
        return BalanceLoad(cfg.p, cfg.t)
    if cfg.algorithm == "randomized_permutations":
        return RandomizedPermutations(cfg.p, cfg.t)
    if cfg.algorithm == "deterministic_permutations":
        perms = cfg.permutations or {}
        if "path" in perms:
            return DeterministicPermutations(cfg.p, cfg.t,
                                             table_path=perms["path"])
        if "seed" in perms:
            return DeterministicPermutations(cfg.p, cfg.t,
                                             table_seed=int(perms["seed"]))
        return DeterministicPermutations(cfg.p, cfg.t)
    table = cfg.permutations or {}
    return EffortPriority(cfg.p, cfg.t, a=cfg.a, ct=cfg.ct, delta0=cfg.delta0,
                          table_path=table.get("path"),
                          table_seed=int(table.get("seed",
                                                   0x0D0A11F1EDBA5E64)))


def build_graph(cfg: RunConfig):
    if cfg.algorithm == "effort_priority":
        _, overlay = derive_params(cfg.p, cfg.t, a=cfg.a, ct=cfg.ct,
                                   delta0=cfg.delta0,
                                   graph_mode=cfg.graph_mode, seed=cfg.seed)
        return overlay
    return build_overlay(cfg.p, cfg.f, delta0=cfg.delta0, mode=cfg.graph_mode,
                         seed=cfg.seed)


def build_adversary(cfg: RunConfig):
    return make_policy(cfg.adversary)
