"""Symbolic states, the adversary-centric successor relation and goal checks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .anb_frontend import (
    AGENT,
    HONEST,
    INTRUDER,
    Authentication,
    EventMark,
    ProtocolSpec,
    Receive,
    Secrecy,
    SecureChannelGoal,
    Send,
    Strand,
    expand_goals,
)
from .intruder_solver import ConstraintStore, add_constraint, derivable_ground, solve_stores
from .term_algebra import (
    T_APPLY,
    T_ASYM,
    T_ATOM,
    T_PAIR,
    T_SYM,
    T_VAR,
    Atom,
    Term,
    apply,
    children,
    compose,
    pair_all,
    render,
    unify,
)


@dataclass(frozen=True)
class Context:
    """Per-run data shared by every state of one search."""

    spec: ProtocolSpec
    checks: tuple  # (goal index, Secrecy | Authentication)
    honest: tuple  # honest agent atoms
    public_functions: frozenset

    @classmethod
    def from_spec(cls, spec: ProtocolSpec) -> "Context":
        honest = [Atom(h, AGENT) for h in HONEST]
        honest += [Atom(r, AGENT) for r in spec.roles if not spec.is_variable(r)]
        return cls(spec, tuple(expand_goals(spec)), tuple(honest), spec.public_functions)


class TransitionRecord(NamedTuple):
    actor: Term
    consumed: tuple
    produced: Optional[Term]
    events_added: tuple
    session: int = 0
    role: str = ""


class StrandCursor(NamedTuple):
    strand: Strand
    pos: int
    ends: tuple  # block end index for every block start


def _cursor(strand: Strand) -> StrandCursor:
    ends = [0] * (len(strand.steps) + 1)
    for i, j in strand.blocks():
        ends[i] = j
    return StrandCursor(strand, 0, tuple(ends))


class SymbolicState:
    """Honest strands, attacker knowledge, constraint store, events, trace.

    Terms inside strands and events are stored as generated; the store's
    accumulated substitution gives their current instance.  A *choice*
    state has no strands of its own; its successors are alternative initial
    states (one per session assignment) at the same depth.
    """

    __slots__ = ("cursors", "store", "raw_events", "trace", "depth", "ctx", "alternatives",
                 "assignment", "scope")

    def __init__(self, ctx, cursors, store, raw_events, trace, depth,
                 alternatives=None, assignment=None, scope=()):
        self.ctx = ctx
        self.cursors = cursors
        self.store = store
        self.raw_events = raw_events
        self.trace = trace
        self.depth = depth
        self.alternatives = alternatives
        self.assignment = assignment
        self.scope = scope  # variables of the strands, fixed at instantiation

    @classmethod
    def choice(cls, ctx: Context, alternatives) -> "SymbolicState":
        return cls(ctx, (), ConstraintStore(public_functions=ctx.public_functions), (), (), 0,
                   tuple(alternatives))

    @property
    def is_choice(self) -> bool:
        return self.alternatives is not None

    @property
    def knowledge(self) -> tuple:
        return self.store.knowledge

    @property
    def substitution(self) -> dict:
        return self.store.accumulated

    @property
    def events(self) -> list:
        sub = self.store.accumulated
        return [e.apply(sub) for e in self.raw_events]

    @property
    def honest(self) -> list:
        """Remaining steps of every honest strand."""
        sub = self.store.accumulated
        out = []
        for c in self.cursors:
            s = c.strand
            steps = tuple(_apply_step(sub, st) for st in s.steps[c.pos:])
            out.append(Strand(s.agent, steps, s.role, s.session, s.fresh))
        return out

    def nbytes(self) -> int:
        return 96 + 16 * len(self.cursors) + 8 * len(self.raw_events) + 8 * len(self.trace) \
            + self.store.nbytes()

    def __repr__(self):
        return f"SymbolicState(depth={self.depth}, trace={len(self.trace)}, store={self.store.dump()!r})"


def _apply_step(sub, st):
    if isinstance(st, Send):
        return Send(apply(sub, st.term))
    if isinstance(st, Receive):
        return Receive(apply(sub, st.term))
    return EventMark(st.event.apply(sub))


def initial_state(ctx: Context, strands, knowledge, assignment=None) -> SymbolicState:
    store = ConstraintStore(knowledge, (), {}, ctx.public_functions)
    scope = {}
    for s in strands:
        for st in s.steps:
            for t in (st.event.args if isinstance(st, EventMark) else (st.term,)):
                for v in t.vars():
                    scope.setdefault(v, None)
    return SymbolicState(ctx, tuple(_cursor(s) for s in strands), store, (), (), 0,
                         None, assignment, tuple(scope))


def successors(state: SymbolicState) -> list:
    """One successor per (strand, next transition block, solver branch).

    Children come in strand order, then in solver order.
    """
    if state.alternatives is not None:
        return list(state.alternatives)
    out = []
    base = state.store
    sub = base.accumulated
    for j, cur in enumerate(state.cursors):
        steps = cur.strand.steps
        if cur.pos >= len(steps):
            continue
        end = cur.ends[cur.pos]
        block = steps[cur.pos:end]
        store = base
        consumed = []
        send = None
        events = []
        for st in block:
            if isinstance(st, Receive):
                t = apply(sub, st.term)
                store = add_constraint(store, store.knowledge, t)
                consumed.append(st.term)
            elif isinstance(st, Send):
                send = st.term
            else:
                events.append(st.event)
        cursors = state.cursors[:j] + (cur._replace(pos=end),) + state.cursors[j + 1:]
        raw_events = state.raw_events + tuple(events)
        for red in _most_general(list(solve_stores(store)), state.scope):
            s2 = red.accumulated
            produced = None
            kn = red.knowledge
            if send is not None:
                produced = apply(s2, send)
                if produced not in kn:
                    kn = kn + (produced,)
                red = red.with_knowledge(kn)
            rec = TransitionRecord(cur.strand.agent, tuple(consumed), send, tuple(events),
                                   cur.strand.session, cur.strand.role)
            out.append(SymbolicState(state.ctx, cursors, red, raw_events, state.trace + (rec,),
                                     state.depth + 1, None, state.assignment, state.scope))
    return out


def _most_general(stores: list, scope: tuple) -> list:
    """Drop solver results whose states are instances of another result's.

    ``b`` subsumes ``a`` when some matching θ maps b's image of the strand
    variables onto a's and every constraint of b, under θ, is implied by a's
    constraints.  Every ground run of ``a`` is then a run of ``b``.  Among
    mutually subsuming results the first is kept.
    """
    if len(stores) < 2:
        return stores
    images = [tuple(apply(st.accumulated, v) for v in scope) for st in stores]
    keep = []
    for i, a in enumerate(stores):
        dropped = False
        for j, b in enumerate(stores):
            if i == j or (j > i and _subsumes(a, images[i], b, images[j])):
                continue
            if _subsumes(b, images[j], a, images[i]):
                dropped = True
                break
        if not dropped:
            keep.append(a)
    return keep


def _subsumes(b, b_img, a, a_img) -> bool:
    theta = {}
    for p, t in zip(b_img, a_img):
        if not _match(p, t, theta):
            return False
    return all(_implied(a, lv, apply(theta, g)) for lv, g in b.entries)


def _match(p: Term, t: Term, theta: dict) -> bool:
    stack = [(p, t)]
    while stack:
        p, t = stack.pop()
        if p.tag == T_VAR:
            bound = theta.get(p)
            if bound is not None:
                if bound != t:
                    return False
            elif p.kind is not None and not (t.kind == p.kind if t.tag in (T_ATOM, T_VAR) else False):
                return False
            else:
                theta[p] = t
            continue
        if p.ground:
            if p != t:
                return False
            continue
        if p.tag != t.tag or p.tag == T_APPLY and (p.fn != t.fn or len(p.args) != len(t.args)):
            return False
        stack.extend(zip(children(p), children(t)))
    return True


def _implied(a: ConstraintStore, lv: int, t: Term) -> bool:
    """Every solution of ``a`` makes ``t`` derivable from its first ``lv`` terms."""
    kn = a.knowledge[:lv]
    stack = [t]
    while stack:
        t = stack.pop()
        if t in kn:
            continue
        if t.tag == T_VAR:
            if not any(g == t and l <= lv for l, g in a.entries):
                return False
            continue
        if t.ground:
            if not derivable_ground(t, kn, a.public_functions):
                return False
            continue
        if t.tag in (T_PAIR, T_SYM, T_ASYM):
            stack.extend(children(t))
        elif t.tag == T_APPLY and t.fn in a.public_functions:
            stack.extend(t.args)
        else:
            return False
    return True


# ---------------------------------------------------------------------------
# goals


@dataclass(frozen=True)
class Attack:
    kind: str  # secrecy | authentication | secure-channel
    violated_goal: object
    witness_state: SymbolicState
    witness_substitution: dict
    goal_index: int = 0
    detail: str = ""


def _extend(store: ConstraintStore, theta: dict) -> Optional[ConstraintStore]:
    if not theta:
        return store
    try:
        acc = compose(theta, store.accumulated)
    except ValueError:
        return None
    return ConstraintStore(
        tuple(apply(theta, t) for t in store.knowledge),
        tuple((lv, apply(theta, g)) for lv, g in store.entries),
        acc,
        store.public_functions,
    )


def _head(store: Optional[ConstraintStore]) -> Optional[ConstraintStore]:
    if store is None:
        return None
    for s in solve_stores(store):
        return s
    return None


def _honest_choices(ctx: Context, peers) -> list:
    """Substitutions making every peer an honest agent; [] if impossible."""
    honest = set(ctx.honest)
    vars_ = []
    for p in peers:
        if p.tag == T_VAR:
            if p not in vars_:
                vars_.append(p)
        elif not (p.tag == T_ATOM and p in honest):
            return []
    if not vars_:
        return [{}]
    return [dict(zip(vars_, combo)) for combo in itertools.product(ctx.honest, repeat=len(vars_))]


def _kind(goal) -> str:
    if isinstance(goal, SecureChannelGoal):
        return "secure-channel"
    return "secrecy" if isinstance(goal, Secrecy) else "authentication"


def check_goals(state: SymbolicState, goals=None) -> Optional[Attack]:
    """First violated goal (declaration order) in ``state``, if any."""
    if not state.raw_events:
        return None
    ctx = state.ctx
    checks = ctx.checks if goals is None else tuple(expand_goals_for(goals))
    events = state.events
    store = state.store
    for gi, check in checks:
        goal = ctx.spec.goals[gi] if goals is None else goals[gi]
        if isinstance(check, Secrecy):
            hit = _secrecy(ctx, store, [e for e in events if e.kind == "secret" and e.goal == gi])
        else:
            hit = _authentication(ctx, store, events, gi)
        if hit is not None:
            witness, detail = hit
            return Attack(_kind(goal), goal, state, witness.accumulated, gi, detail)
    return None


def expand_goals_for(goals):
    out = []
    for gi, g in enumerate(goals):
        if isinstance(g, SecureChannelGoal):
            out.append((gi, Secrecy(g.payload, (g.sender, g.receiver))))
            out.append((gi, Authentication(g.receiver, g.sender, g.payload)))
        else:
            out.append((gi, g))
    return out


def _secrecy(ctx, store, claims):
    for e in claims:
        payload, claimant, *peers = e.args
        for theta in _honest_choices(ctx, peers):
            ext = _extend(store, theta)
            if ext is None:
                continue
            ext = add_constraint(ext, ext.knowledge, apply(theta, payload))
            head = _head(ext)
            if head is not None:
                return head, f"{render(apply(head.accumulated, payload))} known to the intruder ({e})"
    return None


def _authentication(ctx, store, events, gi):
    runs = [e for e in events if e.kind == "running" and e.goal == gi]
    for c in (e for e in events if e.kind == "commit" and e.goal == gi):
        agent, peer, msg = c.args
        for theta in _honest_choices(ctx, [peer]):
            ext = _extend(store, theta)
            head = _head(ext)
            if head is None:
                continue
            want = apply(theta, pair_all([peer, agent, msg]))
            matched = False
            for r in runs:
                u = unify(want, apply(theta, pair_all(r.args)))
                if u is not None and _head(_extend(ext, u)) is not None:
                    matched = True
                    break
            if not matched:
                return head, f"no matching running event for {c.apply(theta)}"
    return None


def render_attack(attack: Attack) -> str:
    """Numbered transitions with the witness substitution applied."""
    sub = attack.witness_substitution
    st = attack.witness_state
    lines = []
    if st.assignment:
        for s, amap in enumerate(st.assignment, start=1):
            roles = ", ".join(f"{r}={a}" for r, a in amap.items())
            lines.append(f"session {s}: {roles}")
    for n, rec in enumerate(st.trace, start=1):
        parts = [f"{n}. {render(apply(sub, rec.actor))} ({rec.role}, session {rec.session})"]
        for c in rec.consumed:
            parts.append(f"   receives {render(apply(sub, c))}")
        if rec.produced is not None:
            parts.append(f"   sends    {render(apply(sub, rec.produced))}")
        lines.extend(parts)
    lines.append(f"violated: {describe_goal(attack.violated_goal)}")
    if attack.detail:
        lines.append(f"because:  {attack.detail}")
    return "\n".join(lines)


def describe_goal(goal) -> str:
    if isinstance(goal, Authentication):
        return f"{goal.authenticator} authenticates {goal.peer} on {render(goal.payload)}"
    if isinstance(goal, Secrecy):
        return f"{render(goal.payload)} secret between {','.join(goal.parties)}"
    return f"{goal.sender} *->* {goal.receiver}: {render(goal.payload)}"


def attack_record(attack: Attack) -> dict:
    """JSON-ready attack description."""
    sub = attack.witness_substitution
    st = attack.witness_state
    steps = []
    for rec in st.trace:
        steps.append({
            "actor": render(apply(sub, rec.actor)),
            "role": rec.role,
            "session": rec.session,
            "received": [render(apply(sub, c)) for c in rec.consumed],
            "sent": None if rec.produced is None else render(apply(sub, rec.produced)),
        })
    return {
        "kind": attack.kind,
        "goal": describe_goal(attack.violated_goal),
        "goal_index": attack.goal_index,
        "detail": attack.detail,
        "assignment": st.assignment,
        "trace": steps,
    }


__all__ = [
    "Attack",
    "Context",
    "INTRUDER",
    "SymbolicState",
    "TransitionRecord",
    "attack_record",
    "check_goals",
    "initial_state",
    "render_attack",
    "successors",
]
