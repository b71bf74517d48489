"""Compare the compiled core with the pure-Python fallback.

Usage: python scripts/bench_backends.py [--reps N] [--csv PATH]

Runs the same sequential searches under both backends, checks that verdicts
and node counts agree and prints the wall-time ratio.
"""

import argparse
import csv
import statistics
import sys
import time

from pfmc.anb_frontend import instantiate_sessions, load_corpus
from pfmc.search_engine import build_tree, search_sequential

CASES = [("sso_flawed", 2, 6), ("sso_standard", 2, 6), ("kerberos", 2, 7), ("tls", 2, 6)]


def timed(name, sessions, depth, backend):
    tree = build_tree(instantiate_sessions(load_corpus(name), sessions), backend=backend)
    t0 = time.perf_counter()
    res = search_sequential(tree, max_depth=depth)
    return time.perf_counter() - t0, res


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--csv")
    args = p.parse_args(argv)
    rows = []
    print(f"{'instance':<22}{'nodes':>8}{'native s':>10}{'python s':>10}{'ratio':>8}")
    for name, s, d in CASES:
        times = {}
        seen = {}
        for backend in ("native", "python"):
            walls = []
            for _ in range(args.reps):
                wall, res = timed(name, s, d, backend)
                walls.append(wall)
            times[backend] = statistics.median(walls)
            seen[backend] = (res.verdict, res.stats.nodes_visited)
        if seen["native"] != seen["python"]:
            print(f"backends disagree on {name}: {seen}", file=sys.stderr)
            return 1
        ratio = times["python"] / times["native"]
        label = f"{name}/s{s}/d{d}"
        print(f"{label:<22}{seen['native'][1]:>8}{times['native']:>10.3f}"
              f"{times['python']:>10.3f}{ratio:>8.1f}")
        rows.append([label, seen["native"][1], f"{times['native']:.4f}",
                     f"{times['python']:.4f}", f"{ratio:.2f}"])
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["instance", "nodes", "native_s", "python_s", "ratio"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
