"""Lazy-intruder constraint store and reduction procedure.

A store is an ordered list of deducibility constraints ``K_i |- g_i`` whose
knowledge lists are prefixes of one growing list, plus the substitution
accumulated so far.  Reduction picks the first constraint whose goal is not
a variable and branches on:

* unification of the goal with a knowledge term, or with a position reached
  by projecting and decrypting it (each decryption on the way adds a key
  constraint at the same knowledge level),
* composition of the goal from its parts when the head is public.

Unification branches come first, knowledge is scanned newest-first, so the
stream of solutions is deterministic.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Sequence
from functools import lru_cache
from typing import NamedTuple, Optional

from .term_algebra import (
    AGENT,
    T_APPLY,
    T_ASYM,
    T_ATOM,
    T_INV,
    T_PAIR,
    T_SYM,
    T_VAR,
    Inv,
    Term,
    Var,
    apply,
    compose,
    render,
    sort_key,
    unify,
)


class InvariantError(RuntimeError):
    """A store invariant was broken; this signals a bug in the caller."""


class Constraint(NamedTuple):
    knowledge: tuple
    goal: Term


class ConstraintStore:
    """Ordered deducibility constraints plus the accumulated substitution.

    ``knowledge`` is the attacker knowledge list of the owning state; each
    constraint refers to a prefix of it by length.
    """

    __slots__ = ("knowledge", "entries", "accumulated", "public_functions")

    def __init__(
        self,
        knowledge: Sequence[Term] = (),
        entries: Sequence[tuple] = (),
        accumulated: Optional[dict] = None,
        public_functions: Iterable[str] = (),
    ):
        self.knowledge = tuple(knowledge)
        self.entries = tuple(entries)  # (level, goal)
        self.accumulated = accumulated if accumulated is not None else {}
        self.public_functions = frozenset(public_functions)

    @property
    def constraints(self) -> list:
        return [Constraint(self.knowledge[:lv], g) for lv, g in self.entries]

    def with_knowledge(self, knowledge: Sequence[Term]) -> "ConstraintStore":
        knowledge = tuple(knowledge)
        if knowledge[: len(self.knowledge)] != self.knowledge:
            raise InvariantError("attacker knowledge must only grow")
        return ConstraintStore(knowledge, self.entries, self.accumulated, self.public_functions)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other):
        return (
            isinstance(other, ConstraintStore)
            and self.knowledge == other.knowledge
            and self.entries == other.entries
            and self.accumulated == other.accumulated
        )

    def __hash__(self):
        return hash((self.knowledge, self.entries))

    def dump(self) -> str:
        """Debug text: ``K1 |- g1 ; K2 |- g2``."""
        parts = []
        for lv, g in self.entries:
            k = ", ".join(render(t) for t in self.knowledge[:lv])
            parts.append(f"{k} |- {render(g)}")
        return " ; ".join(parts)

    def __repr__(self) -> str:
        return f"ConstraintStore({self.dump()!r})"

    def nbytes(self) -> int:
        """Rough payload size used by the memory counters."""
        return 64 + 8 * (len(self.knowledge) + 2 * len(self.entries) + 2 * len(self.accumulated))


def add_constraint(store: ConstraintStore, knowledge: Sequence[Term], goal: Term) -> ConstraintStore:
    """Append ``knowledge |- goal``, with the accumulated substitution applied."""
    sub = store.accumulated
    knowledge = tuple(apply(sub, t) for t in knowledge)
    goal = apply(sub, goal)
    n = len(store.knowledge)
    if knowledge[:n] != store.knowledge:
        raise InvariantError("constraint knowledge does not extend the store's knowledge")
    if store.entries and len(knowledge) < store.entries[-1][0]:
        raise InvariantError("constraint knowledge is smaller than its predecessor's")
    seen = set()
    for _, g in store.entries:
        seen.update(g.vars())
    for t in knowledge:
        for v in t.vars():
            if v not in seen:
                raise InvariantError(f"variable {render(v)} in knowledge does not originate in a goal")
    return ConstraintStore(
        knowledge,
        store.entries + ((len(knowledge), goal),),
        sub,
        store.public_functions,
    )


@lru_cache(maxsize=1 << 16)
def positions(t: Term) -> tuple:
    """Non-variable positions reachable by projection and decryption.

    Each entry is ``(subterm, keys)`` where ``keys`` are the decryption keys
    needed on the way down, outermost first.  Preorder, left before right.
    """
    out = []
    stack = [(t, ())]
    while stack:
        u, keys = stack.pop()
        tag = u.tag
        if tag == T_VAR:
            continue
        out.append((u, keys))
        if tag == T_PAIR:
            stack.append((u._b, keys))
            stack.append((u._a, keys))
        elif tag == T_SYM:
            stack.append((u._b, keys + (u._a,)))
        elif tag == T_ASYM:
            stack.append((u._b, keys + (Inv(u._a),)))
    return tuple(out)


def _parts(goal: Term, fns) -> Optional[tuple]:
    tag = goal.tag
    if tag in (T_PAIR, T_SYM, T_ASYM):
        return (goal._a, goal._b)
    if tag == T_APPLY and goal.fn in fns:
        return goal.args
    if tag == T_ATOM and goal.kind == AGENT:
        return ()
    return None


def _analyze(knowledge: Sequence[Term], fns) -> set:
    # ground facts obtainable by analysis using ground-derivable keys only
    have: set = set()
    pending = []
    work = list(knowledge)
    while True:
        while work:
            t = work.pop()
            if t.ground:
                if t in have:
                    continue
                have.add(t)
            tag = t.tag
            if tag == T_PAIR:
                work.append(t._a)
                work.append(t._b)
            elif tag == T_SYM:
                pending.append((t._a, t._b))
            elif tag == T_ASYM:
                pending.append((Inv(t._a), t._b))
        progress = False
        rest = []
        for key, body in pending:
            if key.ground and _synth(key, have, fns):
                work.append(body)
                progress = True
            else:
                rest.append((key, body))
        pending = rest
        if not progress:
            return have


@lru_cache(maxsize=1 << 14)
def _analyzed(knowledge: tuple, fns) -> frozenset:
    return frozenset(_analyze(knowledge, fns))


def _synth(t: Term, have, fns) -> bool:
    if t in have:
        return True
    tag = t.tag
    if tag == T_ATOM:
        return t.kind == AGENT
    if tag in (T_PAIR, T_SYM, T_ASYM):
        return _synth(t._a, have, fns) and _synth(t._b, have, fns)
    if tag == T_APPLY:
        return t.fn in fns and all(_synth(a, have, fns) for a in t.args)
    return False


def derivable_ground(t: Term, knowledge: tuple, fns) -> bool:
    """Ground ``t`` is composable from what analysis of the ground part yields."""
    return _synth(t, _analyzed(knowledge, fns), fns)


def _canonical(entries) -> tuple:
    # keep the strongest (earliest) requirement per variable
    best: dict = {}
    for lv, g in entries:
        if g not in best or lv < best[g]:
            best[g] = lv
    return tuple(sorted(((lv, g) for g, lv in best.items()), key=lambda e: (e[0], sort_key(e[1]))))


def _sub_entries(theta, entries):
    return tuple((lv, apply(theta, g), frozenset(apply(theta, a) for a in anc) if anc else anc)
                 for lv, g, anc in entries)


def solve_stores(store: ConstraintStore, *, shortcut: bool = True) -> Iterator[ConstraintStore]:
    """Lazily enumerate the simple stores the input reduces to.

    Every result has only variable goals, and carries the accumulated
    substitution of its branch.  Results are distinct.  With ``shortcut`` a
    ground goal derivable from the ground part of its knowledge is discharged
    without branching; switching it off exercises the full rule set.
    """
    fns = store.public_functions
    empty = frozenset()
    start = (store.knowledge, tuple((lv, g, empty) for lv, g in store.entries), store.accumulated)
    stack = [start]
    seen = set()
    while stack:
        kn, cons, sub = stack.pop()
        idx = -1
        for i, c in enumerate(cons):
            if c[1].tag != T_VAR:
                idx = i
                break
        if idx < 0:
            entries = _canonical((lv, g) for lv, g, _ in cons)
            key = (entries, kn, frozenset(sub.items()))
            if key in seen:
                continue
            seen.add(key)
            yield ConstraintStore(kn, entries, sub, fns)
            continue
        for theta, new_cons in reversed(_branches(kn, cons, idx, fns, shortcut)):
            if theta:
                try:
                    nsub = compose(theta, sub)
                except ValueError:
                    continue
                stack.append((tuple(apply(theta, t) for t in kn), _sub_entries(theta, new_cons), nsub))
            else:
                stack.append((kn, new_cons, sub))


def _branches(kn, cons, idx, fns, shortcut) -> list:
    level, goal, anc = cons[idx]
    before, after = cons[:idx], cons[idx + 1:]
    knowledge = kn[:level]
    if shortcut and goal.ground and _synth(goal, _analyzed(knowledge, fns), fns):
        return [({}, before + after)]
    if goal in anc:
        # needed again on the way to a key for itself: a shorter derivation
        # exists without this detour
        return []
    out = []
    chain = anc | {goal}
    gtag = goal.tag
    gground = goal.ground
    gfn = goal.fn if gtag == T_APPLY else None
    for s in reversed(knowledge):
        for u, keys in positions(s):
            # the goal is not a variable, so heads must agree; private keys
            # are only ever inverses of public ones
            if u.tag != gtag:
                if u.tag != T_INV or u.key.tag != T_VAR:
                    continue
            elif gfn is not None and u.fn != gfn:
                continue
            if gground and u.ground:
                if u != goal:
                    continue
                theta = {}
            else:
                theta = unify(goal, u)
                if theta is None:
                    continue
            if theta:
                keys = tuple(apply(theta, k) for k in keys)
                chain_t = frozenset(apply(theta, a) for a in chain)
            else:
                chain_t = chain
            if any(k in chain_t for k in keys):
                continue
            if not theta and not keys:
                return [({}, before + after)]
            out.append((theta, before + tuple((level, k, chain) for k in keys) + after))
    parts = _parts(goal, fns)
    if parts is not None:
        if not parts:
            return [({}, before + after)]
        out.append(({}, before + tuple((level, p, anc) for p in parts) + after))
    return out


def solve(store: ConstraintStore, *, shortcut: bool = True) -> Iterator[dict]:
    """Lazy stream of solution substitutions; empty iff unsatisfiable."""
    for s in solve_stores(store, shortcut=shortcut):
        yield s.accumulated


def is_satisfiable(store: ConstraintStore, *, shortcut: bool = True) -> bool:
    """True iff the solution stream has a head; only the head is computed."""
    for _ in solve_stores(store, shortcut=shortcut):
        return True
    return False


def ground_instance(sub: dict, terms: Iterable[Term], filler: Term) -> list:
    """Apply ``sub`` and send every remaining variable to ``filler``."""
    out = []
    for t in terms:
        t = apply(sub, t)
        if not t.ground:
            t = apply({v: filler for v in t.vars()}, t)
        out.append(t)
    return out


__all__ = [
    "Constraint",
    "ConstraintStore",
    "InvariantError",
    "Var",
    "add_constraint",
    "derivable_ground",
    "ground_instance",
    "is_satisfiable",
    "positions",
    "solve",
    "solve_stores",
]
