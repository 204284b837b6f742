"""Experiment harness CLI.

Subcommands:
  simulate  run one configuration; writes trace.ndjson, metrics.json,
            config.json (and epochs.csv/extended.csv/analysis.json with
            --analyze) into the output directory
  sweep     cartesian parameter grid into sweep.csv (resumable, parallel)
  graph     build or verify expander graphs (edge-list files)
  report    scaling-ratio table from a sweep.csv

Exit codes: 0 success, 2 invalid configuration, 3 graph failure,
4 round cap exhausted before termination.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from multiprocessing import get_context

from . import analysis
from .adversaries import make_policy
from .config import RunConfig, build_adversary, build_graph, build_protocol, \
    load_config, validate
from .engine import TraceOptions, run_simulation
from .errors import ConfigError, DoAllError, GraphError, ParameterError, ShapeError
from .graphs import build_lps, flood_horizon, load_edge_list, neighborhood, \
    random_regular, save_edge_list, spectral_check, tanner_lower_bound
from .rng import SplitMix64, substream
from .trace import write_metrics, write_trace_ndjson
from .version import source_hash


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def cmd_simulate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        _write_json(args.out and os.path.join(args.out, "validation.json")
                    or "validation.json", {"valid": False, "report": exc.report})
        print(json.dumps({"valid": False, "report": exc.report}), file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    if args.round_cap is not None:
        cfg.round_cap = args.round_cap
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    try:
        graph = build_graph(cfg)
    except (GraphError, ParameterError) as exc:
        print(f"graph construction failed: {exc}", file=sys.stderr)
        return 3
    protocol = build_protocol(cfg)
    adversary = build_adversary(cfg)
    trace, metrics = run_simulation(protocol, graph, adversary, cfg.seed,
                                    round_cap=cfg.round_cap, f=cfg.f)
    trace.config = {**cfg.echo(), **trace.config}
    vh = source_hash()
    write_trace_ndjson(trace, os.path.join(out_dir, "trace.ndjson"), vh)
    write_metrics(metrics, trace, os.path.join(out_dir, "metrics.json"), vh)
    _write_json(os.path.join(out_dir, "config.json"),
                {**cfg.echo(), "version": vh})
    if args.analyze:
        rep = analysis.analyze_trace(trace, graph, cfg.p, cfg.f)
        analysis.write_epoch_csv(rep, os.path.join(out_dir, "epochs.csv"))
        analysis.write_extended_csv(rep, os.path.join(out_dir, "extended.csv"))
        analysis.write_summary_json(rep, os.path.join(out_dir, "analysis.json"))
    if trace.incomplete:
        print(f"round cap {trace.round_cap} reached before termination",
              file=sys.stderr)
        return 4
    return 0 if metrics.tasks_completed else 4


def _t_value(token, p: int) -> int:
    if isinstance(token, int):
        return token
    if token == "p":
        return p
    if token == "p^2":
        return p * p
    if token == "11p2g":
        return 11 * p * p * flood_horizon(p)
    raise ConfigError([{"field": "grid.t", "error": f"bad token {token!r}"}])


def _f_value(token, p: int) -> int | str:
    if isinstance(token, int):
        return token
    if token == "unbounded" or token == "p-1":
        return p - 1
    if token == "p/2":
        return p // 2
    if token == "0":
        return 0
    raise ConfigError([{"field": "grid.f", "error": f"bad token {token!r}"}])


def _sweep_row(job: dict) -> dict:
    raw, key = job["config"], job["key"]
    try:
        cfg = validate(raw)
        graph = build_graph(cfg)
        trace, metrics = run_simulation(build_protocol(cfg), graph,
                                        build_adversary(cfg), cfg.seed,
                                        round_cap=cfg.round_cap, f=cfg.f)
        return {
            "key": key, "algorithm": cfg.algorithm, "p": cfg.p, "t": cfg.t,
            "f": cfg.f, "seed": cfg.seed,
            "adversary": (cfg.adversary or {}).get("kind", "none"),
            "work": metrics.work, "messages": metrics.messages,
            "effort": metrics.effort,
            "termination_round": metrics.termination_round,
            "tasks_completed": metrics.tasks_completed,
            "max_degree": trace.max_degree,
            "incomplete": trace.incomplete, "status": "ok", "error": "",
        }
    except DoAllError as exc:
        return {"key": key, "status": "error", "error": str(exc),
                **{k: raw.get(k, "") for k in ("algorithm", "p", "t", "seed")},
                "f": raw.get("f", ""), "adversary": "", "work": "",
                "messages": "", "effort": "", "termination_round": "",
                "tasks_completed": "", "max_degree": "", "incomplete": ""}


SWEEP_FIELDS = ["key", "algorithm", "p", "t", "f", "seed", "adversary",
                "work", "messages", "effort", "termination_round",
                "tasks_completed", "max_degree", "incomplete", "status",
                "error"]


def expand_grid(grid: dict) -> list[dict]:
    base = {k: v for k, v in grid.items()
            if k not in ("p", "t", "f", "algorithm", "seeds")}
    jobs = []
    for alg in grid["algorithm"]:
        for p in grid["p"]:
            for t_tok in grid["t"]:
                for f_tok in grid.get("f", ["unbounded"]):
                    for seed in grid.get("seeds", [0]):
                        raw = dict(base)
                        raw.update({"algorithm": alg, "p": p,
                                    "t": _t_value(t_tok, p),
                                    "f": _f_value(f_tok, p), "seed": seed})
                        cfg = validate(dict(raw))
                        jobs.append({"config": raw, "key": cfg.key()})
    return jobs


def cmd_sweep(args) -> int:
    with open(args.grid) as fh:
        grid = json.load(fh)
    try:
        jobs = expand_grid(grid)
    except ConfigError as exc:
        print(json.dumps({"valid": False, "report": exc.report}), file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "sweep.csv")
    done = {}
    if os.path.exists(out_csv):
        with open(out_csv, newline="") as fh:
            for row in csv.DictReader(fh):
                done[row["key"]] = row
    todo = [j for j in jobs if j["key"] not in done]
    if todo:
        if args.jobs > 1:
            with get_context("spawn").Pool(args.jobs) as pool:
                rows = pool.map(_sweep_row, todo)
        else:
            rows = [_sweep_row(j) for j in todo]
        for row in rows:
            done[row["key"]] = row
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        for job in jobs:
            writer.writerow(done[job["key"]])
    print(f"{len(jobs)} rows ({len(todo)} new) -> {out_csv}")
    return 0


def cmd_graph(args) -> int:
    try:
        if args.action == "build":
            if args.mode == "lps":
                g = build_lps(args.q, args.nodes)
            else:
                g = random_regular(args.nodes, args.degree, args.seed)
            save_edge_list(g, args.out)
            print(f"{g.node_count} nodes, degree {g.degree_bound} -> {args.out}")
            return 0
        g = load_edge_list(args.path)
        delta0 = args.delta0 or g.degree_bound
        report = spectral_check(g, delta0)
        doc = report.to_dict()
        doc["tanner_violations"] = 0
        if args.tanner_samples:
            rng = SplitMix64(substream(args.seed, 0x7A22))
            bad = 0
            for _ in range(args.tanner_samples):
                size = 1 + rng.randrange(g.node_count)
                nodes = list(range(g.node_count))
                rng.shuffle(nodes)
                subset = nodes[:size]
                bound = tanner_lower_bound(g, subset, report)
                if len(neighborhood(g, subset)) < bound - 1e-9:
                    bad += 1
            doc["tanner_violations"] = bad
        print(json.dumps(doc, sort_keys=True))
        return 0 if report.satisfied and doc["tanner_violations"] == 0 else 3
    except (GraphError, ParameterError, ShapeError) as exc:
        print(f"graph error: {exc}", file=sys.stderr)
        return 3


def cmd_report(args) -> int:
    with open(args.sweep, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["status"] == "ok"]
    table = analysis.bound_report(rows)
    out = args.out or os.path.join(os.path.dirname(args.sweep), "scaling.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(table[0].keys()) if table
                                else ["algorithm"])
        writer.writeheader()
        writer.writerows(table)
    print(f"{len(table)} rows -> {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="doallsim")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one configuration")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", default=None)
    sim.add_argument("--round-cap", type=int, default=None)
    sim.add_argument("--analyze", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", help="run a parameter grid")
    sw.add_argument("--grid", required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--jobs", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    gr = sub.add_parser("graph", help="build or verify expander graphs")
    gsub = gr.add_subparsers(dest="action", required=True)
    gb = gsub.add_parser("build")
    gb.add_argument("--mode", choices=["lps", "random_regular"], default="lps")
    gb.add_argument("--q", type=int, default=5, help="lps degree parameter")
    gb.add_argument("--nodes", type=int, required=True)
    gb.add_argument("--degree", type=int, default=6)
    gb.add_argument("--seed", type=int, default=0)
    gb.add_argument("--out", required=True)
    gb.set_defaults(func=cmd_graph)
    gv = gsub.add_parser("verify")
    gv.add_argument("--path", required=True)
    gv.add_argument("--delta0", type=int, default=None)
    gv.add_argument("--tanner-samples", type=int, default=0)
    gv.add_argument("--seed", type=int, default=0)
    gv.set_defaults(func=cmd_graph)

    rp = sub.add_parser("report", help="scaling ratios from a sweep")
    rp.add_argument("--sweep", required=True)
    rp.add_argument("--out", default=None)
    rp.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
