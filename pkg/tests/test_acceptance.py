"""Acceptance criteria, one test each; the terminal summary prints one
PASS/FAIL line per criterion.

The strategy matrix on the four corpus instances is run once and shared by
the criteria that read it.  A full run takes about 45 minutes on one core.
"""

import hashlib
import json
import os
import random
import time
from functools import lru_cache

import pytest

from pfmc.anb_frontend import instantiate_sessions, load_corpus
from pfmc.intruder_solver import is_satisfiable
from pfmc.parallel_strategies import (
    DEFAULT_BUFFER,
    DEFAULT_FUEL,
    KINDS,
    StrategyConfig,
    eval_par_tree_naive,
    evaluate,
)
from pfmc.search_engine import build_tree, prune, search_sequential
from pfmc.transition_system import attack_record, render_attack

from conftest import ACCEPTANCE, load_golden
from oracles import oracle_satisfiable, random_ground_store

CORPUS_VERDICTS = {
    "sso_flawed": "attack-found",
    "sso_standard": "no-attack-within-depth",
    "kerberos": "no-attack-within-depth",
    "tls": "no-attack-within-depth",
}
SESSIONS, DEPTH = 2, 12
PARALLEL = tuple(k for k in KINDS if k != "sequential")
WORKERS = (1, 2, 4, 8)
BUFFERED = ("par-tree-buffer", "enhanced-buffer", "hybrid-subtrees", "annotated-hybrid")
FUELLED = ("chunk-subtrees", "hybrid-subtrees", "annotated-hybrid")

pytestmark = pytest.mark.slow


def report(n: int, ok: bool, line: str):
    ACCEPTANCE[n] = (ok, line)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {line}")
    assert ok, line


def tree(name, sessions=SESSIONS):
    return build_tree(instantiate_sessions(load_corpus(name), sessions))


def summary(res) -> dict:
    trace = render_attack(res.attack) if res.attack is not None else None
    rec = json.dumps(attack_record(res.attack), sort_keys=True, default=str) \
        if res.attack is not None else None
    return {"verdict": res.verdict, "trace": trace, "record": rec, "stats": res.stats}


@lru_cache(maxsize=None)
def reference(name):
    return summary(search_sequential(tree(name), max_depth=DEPTH))


@lru_cache(maxsize=None)
def parallel(name, kind, workers):
    cfg = StrategyConfig.make(kind, workers)
    return summary(evaluate(tree(name), cfg, max_depth=DEPTH))


def test_criterion_1_corpus_verdicts():
    got = {}
    slowest = 0.0
    for name in CORPUS_VERDICTS:
        r = reference(name)
        got[name] = r["verdict"]
        slowest = max(slowest, r["stats"].wall_elapsed)
    ok = got == CORPUS_VERDICTS and slowest <= 600
    line = ", ".join(f"{n}={v}" for n, v in got.items()) + f"; slowest run {slowest:.1f}s (limit 600s)"
    report(1, ok, line)


def test_criterion_2_strategy_transparency():
    total = same = 0
    bad = []
    for name in CORPUS_VERDICTS:
        ref = reference(name)
        for kind in PARALLEL:
            for w in WORKERS:
                r = parallel(name, kind, w)
                total += 1
                if (r["verdict"], r["trace"], r["record"]) == (ref["verdict"], ref["trace"],
                                                               ref["record"]):
                    same += 1
                else:
                    bad.append(f"{name}/{kind}/w{w}")
    line = (f"{same}/{total} runs ({len(CORPUS_VERDICTS)} instances x {len(PARALLEL)} kinds x "
            f"{len(WORKERS)} worker counts) match the sequential verdict and trace byte for byte")
    if bad:
        line += "; differing: " + ", ".join(bad[:6])
    report(2, same == total, line)


def test_criterion_3_solver_oracle():
    rng = random.Random(20240601)
    n = 2000
    t0 = time.perf_counter()
    agree = positive = 0
    for _ in range(n):
        st_ = random_ground_store(rng, max_constraints=4, max_knowledge=6, max_depth=3)
        want = oracle_satisfiable(st_)
        positive += want
        agree += is_satisfiable(st_) == want
    elapsed = time.perf_counter() - t0
    ok = agree == n and elapsed <= 120
    report(3, ok, f"{agree}/{n} random ground stores agree with the closure oracle "
                  f"({positive} satisfiable) in {elapsed:.1f}s (limit 120s)")


def test_criterion_4_speedup():
    w1 = parallel("kerberos", "enhanced-buffer", 1)["stats"].wall_elapsed
    w4 = parallel("kerberos", "enhanced-buffer", 4)["stats"].wall_elapsed
    w8 = parallel("kerberos", "enhanced-buffer", 8)["stats"].wall_elapsed
    s4, s8 = w1 / w4, w1 / w8
    cpus = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    ok = w1 >= 60 and s4 >= 1.8 and s8 >= 2.5
    report(4, ok, f"kerberos s{SESSIONS} d{DEPTH} enhanced-buffer wall 1w={w1:.1f}s "
                  f"4w={w4:.1f}s 8w={w8:.1f}s; speedup 4w={s4:.2f} (need 1.8) "
                  f"8w={s8:.2f} (need 2.5) on {cpus} cpu(s)")


def test_criterion_5_memory_and_task_bounds():
    problems = []
    for name in CORPUS_VERDICTS:
        for kind in PARALLEL:
            for w in WORKERS:
                s = parallel(name, kind, w)["stats"]
                if kind in BUFFERED and s.max_outstanding > DEFAULT_BUFFER:
                    problems.append(f"{name}/{kind}/w{w} outstanding {s.max_outstanding}")
                if kind in FUELLED and s.tasks_spawned > DEFAULT_FUEL:
                    problems.append(f"{name}/{kind}/w{w} spawned {s.tasks_spawned}")
    naive = eval_par_tree_naive(tree("kerberos"), max_depth=DEPTH, workers=4)
    eb = parallel("kerberos", "enhanced-buffer", 4)["stats"]
    ratio = eb.peak_tracked_bytes / naive.stats.peak_tracked_bytes
    worst_out = max(parallel(n, k, w)["stats"].max_outstanding for n in CORPUS_VERDICTS
                    for k in BUFFERED for w in WORKERS)
    worst_fuel = max(parallel(n, k, w)["stats"].tasks_spawned for n in CORPUS_VERDICTS
                     for k in FUELLED for w in WORKERS)
    ok = not problems and ratio <= 0.5 and naive.verdict == CORPUS_VERDICTS["kerberos"]
    line = (f"max outstanding {worst_out} <= buffer {DEFAULT_BUFFER}; max spawned {worst_fuel} <= "
            f"fuel {DEFAULT_FUEL}; kerberos 4w peak enhanced-buffer "
            f"{eb.peak_tracked_bytes / 1e6:.1f}MB vs naive {naive.stats.peak_tracked_bytes / 1e6:.1f}MB"
            f" = {ratio:.3f} (need <= 0.5)")
    if problems:
        line += "; " + ", ".join(problems[:4])
    report(5, ok, line)


def test_criterion_6_conversion_ratio():
    h = parallel("kerberos", "hybrid-subtrees", 8)["stats"]
    e = parallel("kerberos", "enhanced-buffer", 8)["stats"]
    ok = h.conversion_ratio >= e.conversion_ratio
    report(6, ok, f"kerberos 8w conversion hybrid-subtrees {h.tasks_converted}/{h.tasks_spawned}="
                  f"{h.conversion_ratio:.3f} vs enhanced-buffer {e.tasks_converted}/"
                  f"{e.tasks_spawned}={e.conversion_ratio:.3f}")


def test_criterion_7_prune_semantics():
    mismatches = []
    verdicts = []
    for d in range(0, DEPTH + 1):
        a = search_sequential(prune(tree("sso_flawed"), d))
        b = search_sequential(tree("sso_flawed"), max_depth=d)
        ta = render_attack(a.attack) if a.attack is not None else None
        tb = render_attack(b.attack) if b.attack is not None else None
        if (a.verdict, a.stats.nodes_visited, ta) != (b.verdict, b.stats.nodes_visited, tb):
            mismatches.append(d)
        verdicts.append(b.verdict == "attack-found")
    first = verdicts.index(True) if True in verdicts else None
    monotone = first is not None and all(verdicts[first:]) and not any(verdicts[:first])
    ok = not mismatches and monotone
    report(7, ok, f"sso_flawed d=0..{DEPTH}: prune equals depth bound at "
                  f"{DEPTH + 1 - len(mismatches)}/{DEPTH + 1} depths; attack from depth {first} "
                  f"on{' (monotone)' if monotone else ' (NOT monotone)'}")


def test_criterion_8_golden_regression():
    golden = load_golden()
    drift = []
    checked = 0
    for name in CORPUS_VERDICTS:
        want = golden["acceptance"][f"{name}/s{SESSIONS}/d{DEPTH}"]
        ref = reference(name)
        s = ref["stats"]
        got = (ref["verdict"], s.nodes_visited, s.nodes_expanded, s.nodes_pruned_unvisited)
        checked += 1
        if got != (want["verdict"], want["nodes_visited"], want["nodes_expanded"],
                   want["nodes_pruned_unvisited"]):
            drift.append(f"{name}: {got}")
        if ref["trace"] is not None:
            if hashlib.sha256(ref["trace"].encode()).hexdigest()[:16] != want["trace_digest"]:
                drift.append(f"{name}: trace")
        # deterministic parallel traversals visit the same nodes
        for kind in PARALLEL:
            for w in WORKERS:
                r = parallel(name, kind, w)
                checked += 1
                if (r["verdict"], r["stats"].nodes_visited) != (want["verdict"], want["nodes_visited"]):
                    drift.append(f"{name}/{kind}/w{w}")
    for key, want in golden["acceptance"].items():
        if key.startswith("kerberos/s3/"):
            res = search_sequential(tree("kerberos", 3), max_depth=want["depth"])
            checked += 1
            if (res.verdict, res.stats.nodes_visited) != (want["verdict"], want["nodes_visited"]):
                drift.append(key)
    report(8, not drift, f"{checked} runs against pinned verdicts and node counts, "
                         f"{len(drift)} drifted" + (": " + ", ".join(drift[:4]) if drift else ""))
