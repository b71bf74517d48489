"""Regenerate tests/golden/corpus.json from sequential runs.

Usage: python scripts/update_golden.py [--tier quick|acceptance|all]

Only run this after a deliberate change to the search; the golden file is
what the regression tests compare against.
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from pfmc.anb_frontend import instantiate_sessions, load_corpus
from pfmc.search_engine import build_tree, search_sequential
from pfmc.transition_system import render_attack

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden" / "corpus.json"

INSTANCES = {
    "quick": [(name, 2, 6) for name in ("sso_flawed", "sso_standard", "kerberos", "tls")]
    + [("sso_flawed", 2, 8), ("kerberos", 1, 12), ("tls", 1, 12), ("kerberos", 3, 5)],
    "acceptance": [(name, 2, 12) for name in ("sso_flawed", "sso_standard", "kerberos", "tls")]
    + [("kerberos", 3, 6)],
}


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def record(name: str, sessions: int, depth: int) -> dict:
    tree = build_tree(instantiate_sessions(load_corpus(name), sessions))
    res = search_sequential(tree, max_depth=depth)
    s = res.stats
    rec = {
        "protocol": name,
        "sessions": sessions,
        "depth": depth,
        "verdict": res.verdict,
        "nodes_visited": s.nodes_visited,
        "nodes_expanded": s.nodes_expanded,
        "nodes_pruned_unvisited": s.nodes_pruned_unvisited,
        "attack_goal": None,
        "attack_steps": None,
        "trace_digest": None,
    }
    if res.attack is not None:
        rec["attack_goal"] = res.attack.goal_index
        rec["attack_steps"] = len(res.attack.witness_state.trace)
        rec["trace_digest"] = digest(render_attack(res.attack))
    return rec


def key(rec) -> str:
    return f"{rec['protocol']}/s{rec['sessions']}/d{rec['depth']}"


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--tier", choices=("quick", "acceptance", "all"), default="all")
    args = p.parse_args()
    doc = json.loads(GOLDEN.read_text()) if GOLDEN.exists() else {"quick": {}, "acceptance": {}}
    tiers = ("quick", "acceptance") if args.tier == "all" else (args.tier,)
    for tier in tiers:
        for inst in INSTANCES[tier]:
            t0 = time.perf_counter()
            rec = record(*inst)
            doc[tier][key(rec)] = rec
            print(f"{tier} {key(rec)} {rec['verdict']} {rec['nodes_visited']} "
                  f"({time.perf_counter() - t0:.1f}s)", file=sys.stderr, flush=True)
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    GOLDEN.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
