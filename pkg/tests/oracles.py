"""Brute-force reference computations used by the tests.

Nothing here shares code with the reduction procedure, the unifier or the
strategies; each oracle enumerates its answer directly.
"""

from __future__ import annotations

import itertools
import random

from pfmc.intruder_solver import ConstraintStore
from pfmc.term_algebra import (
    AGENT,
    CONSTANT,
    NUMBER,
    Apply,
    AsymEnc,
    Atom,
    Inv,
    Pair,
    SymEnc,
    Term,
    Var,
    apply,
    derivable,
    ground_closure,
    subterms,
)
from pfmc.anb_frontend import EventMark, Receive, Send


# ---------------------------------------------------------------------------
# unification by enumeration


def ground_unifiers(s: Term, t: Term, universe) -> list:
    """Every assignment of the variables of ``s`` and ``t`` to ``universe``
    that makes them equal."""
    vs = sorted(set(s.vars()) | set(t.vars()), key=lambda v: (v.name, v.index))
    out = []
    for combo in itertools.product(universe, repeat=len(vs)):
        tau = dict(zip(vs, combo))
        if apply(tau, s) == apply(tau, t):
            out.append(tau)
    return out


def small_universe() -> list:
    a, b = Atom("a"), Atom("b")
    base = [a, b]
    return base + [Pair(a, b), Pair(b, a), SymEnc(a, b), AsymEnc(a, b), Inv(a), Inv(b),
                   Pair(a, a), Apply("f", [a])]


# ---------------------------------------------------------------------------
# ground derivability, written out independently of ground_closure


def naive_derivable(goal: Term, knowledge, public_functions=()) -> bool:
    """Analysis to a fixpoint over the knowledge, then composition of the goal.

    Decryption keys are themselves checked by recursive composition against
    the current analysed set, repeated until nothing changes.
    """
    fns = set(public_functions)
    have = set(knowledge)

    def compose(t) -> bool:
        if t in have:
            return True
        if isinstance(t, Atom):
            return t.kind == AGENT
        if isinstance(t, (Pair, SymEnc, AsymEnc)):
            return compose(t._a) and compose(t._b)
        if isinstance(t, Apply):
            return t.fn in fns and all(compose(x) for x in t.args)
        return False

    while True:
        new = set()
        for t in have:
            if isinstance(t, Pair):
                new.update((t.left, t.right))
            elif isinstance(t, SymEnc) and compose(t.key):
                new.add(t.body)
            elif isinstance(t, AsymEnc) and compose(Inv(t.key)):
                new.add(t.body)
        if new <= have:
            return compose(goal)
        have |= new


# ---------------------------------------------------------------------------
# random ground stores

AGENTS = [Atom("A", AGENT), Atom("B", AGENT)]
VALUES = [Atom("n1", NUMBER), Atom("n2", NUMBER), Atom("k1", CONSTANT), Atom("k2", CONSTANT)]
PUBLIC = ("h",)


def random_term(rng: random.Random, depth: int) -> Term:
    if depth == 0 or rng.random() < 0.3:
        return rng.choice(AGENTS + VALUES + VALUES)
    d = depth - 1
    r = rng.random()
    if r < 0.3:
        return Pair(random_term(rng, d), random_term(rng, d))
    if r < 0.55:
        return SymEnc(random_term(rng, d), random_term(rng, d))
    if r < 0.75:
        return AsymEnc(random_term(rng, d), random_term(rng, d))
    if r < 0.85:
        return Inv(random_term(rng, d))
    return Apply(rng.choice(("h", "g")), [random_term(rng, d)])


def random_ground_store(rng: random.Random, max_constraints: int = 4, max_knowledge: int = 6,
                        max_depth: int = 3) -> ConstraintStore:
    """Ground store within the given size bounds.

    Goals are biased towards subterms of the knowledge so that both outcomes
    occur often.
    """
    kn = [random_term(rng, rng.randint(0, max_depth)) for _ in range(rng.randint(1, max_knowledge))]
    n = rng.randint(1, max_constraints)
    levels = sorted(rng.randint(1, len(kn)) for _ in range(n))
    entries = []
    for lv in levels:
        if rng.random() < 0.6:
            pool = [u for t in kn[:lv] for u in subterms(t) if u.depth <= max_depth]
            goal = rng.choice(pool)
            if rng.random() < 0.3:
                goal = Pair(goal, rng.choice(pool)) if goal.depth < max_depth else goal
        else:
            goal = random_term(rng, rng.randint(0, max_depth))
        entries.append((lv, goal))
    return ConstraintStore(kn, entries, {}, PUBLIC)


def oracle_satisfiable(store: ConstraintStore) -> bool:
    """Every constraint's goal is in the ground closure of its knowledge."""
    for lv, goal in store.entries:
        kn = store.knowledge[:lv]
        if goal not in ground_closure(kn, public_functions=store.public_functions, targets=[goal]):
            return False
    return True


# ---------------------------------------------------------------------------
# single-step successor enumeration


def _match(p: Term, t: Term, theta: dict) -> bool:
    if isinstance(p, Var):
        if p in theta:
            return theta[p] == t
        if p.kind is not None and not (isinstance(t, Atom) and t.kind == p.kind):
            return False
        theta[p] = t
        return True
    if p.ground:
        return p == t
    if type(p) is not type(t):
        return False
    if isinstance(p, Inv):
        return _match(p.key, t.key, theta)
    if isinstance(p, Apply):
        return p.fn == t.fn and len(p.args) == len(t.args) and all(
            _match(x, y, theta) for x, y in zip(p.args, t.args))
    return _match(p._a, t._a, theta) and _match(p._b, t._b, theta)


FILLERS = {AGENT: Atom("i", AGENT), NUMBER: Atom("n_i", NUMBER), CONSTANT: Atom("c_i", CONSTANT),
           None: Atom("c_i", CONSTANT)}


def enabled_strands(state, limit: int = 200_000) -> set:
    """Indices of the honest strands whose next transition can fire.

    A receive pattern fires when some grounding of its variables is
    derivable from the current knowledge plus the intruder's own fresh
    values.  Candidate values for a variable come from matching subterms of
    the pattern against the closure of the knowledge, or the filler of its
    kind when the intruder composes that position itself.
    """
    public = state.ctx.public_functions
    kn = list(state.knowledge) + [FILLERS[NUMBER], FILLERS[CONSTANT]]
    closure = ground_closure(kn, public_functions=public)
    out = set()
    for j, cur in enumerate(state.cursors):
        steps = cur.strand.steps
        if cur.pos >= len(steps):
            continue
        block = steps[cur.pos:cur.ends[cur.pos]]
        pats = [apply(state.substitution, st.term) for st in block if isinstance(st, Receive)]
        if not pats:
            out.add(j)
            continue
        vs = sorted({v for p in pats for v in p.vars()}, key=lambda v: v.index)
        cands = {v: {FILLERS[v.kind]} for v in vs}
        for p in pats:
            for u in subterms(p):
                if u.ground:
                    continue
                for c in closure:
                    theta = {}
                    if _match(u, c, theta):
                        for v, val in theta.items():
                            cands[v].add(val)
        space = [sorted(cands[v], key=repr) for v in vs]
        tried = 0
        for combo in itertools.product(*space):
            tried += 1
            if tried > limit:
                raise RuntimeError("grounding space too large for the oracle")
            tau = dict(zip(vs, combo))
            if all(derivable(apply(tau, p), kn, public_functions=public) for p in pats):
                out.add(j)
                break
    return out


def block_steps(state, j: int) -> tuple:
    cur = state.cursors[j]
    return cur.strand.steps[cur.pos:cur.ends[cur.pos]]


def has_send(steps) -> bool:
    return any(isinstance(s, Send) for s in steps)


def events_in(steps) -> list:
    return [s.event for s in steps if isinstance(s, EventMark)]


# ---------------------------------------------------------------------------
# tree oracles


def enumerate_tree(backend, depth: int) -> dict:
    """Path -> number of descendants within ``depth``, by plain recursion."""
    out = {}

    def walk(node, path):
        if node.depth >= depth and not node.is_choice:
            out[path] = 0
            return 0
        total = 0
        for i, k in enumerate(backend.expand(node)):
            total += 1 + walk(k, path + (i,))
        out[path] = total
        return total

    walk(backend.root, ())
    return out


def hand_fuel_sites(branching: int, depth: int, fuel: int) -> list:
    """Chunk-subtrees spawn sites on a balanced tree: a node with one unit
    becomes a task, a node with more keeps one and divides the rest among
    its children, earlier children taking the remainder."""
    sites = []

    def go(path, f):
        if f <= 0:
            return
        if f == 1:
            sites.append(path)
            return
        if len(path) >= depth:
            return
        n = branching
        base, extra = (f - 1) // n, (f - 1) % n
        for i in range(n):
            go(path + (i,), base + (1 if i < extra else 0))

    go((), fuel)
    return sites
