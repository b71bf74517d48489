"""Expansion backends: the pure-Python reference and the compiled core.

Both expose ``root``, ``expand(node)``, ``check(node, goals)`` and
``state(node)``.  The compiled core (``pfmc._core``) is used when it imports
and ``PFMC_BACKEND`` is not ``python``; it produces the same tree, node for
node.  Attacks reported by the core are rebuilt as Python states and
re-checked by the reference goal checker.
"""

from __future__ import annotations

import os
from typing import Optional

from .anb_frontend import EventMark, Receive, Secrecy, Send
from .intruder_solver import ConstraintStore
from .term_algebra import (
    AGENT,
    CONSTANT,
    NUMBER,
    T_APPLY,
    T_ATOM,
    T_INV,
    T_VAR,
    Apply,
    AsymEnc,
    Atom,
    Inv,
    Pair,
    SymEnc,
    Term,
    Var,
    children,
)
from .transition_system import (
    Attack,
    SymbolicState,
    TransitionRecord,
    check_goals,
    successors,
)

try:
    from . import _core
except ImportError:  # no compiled extension in this install
    _core = None

NATIVE_AVAILABLE = _core is not None

_KIND_CODE = {None: 0, AGENT: 1, NUMBER: 2, CONSTANT: 3}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_EVENT_CODE = {"running": 0, "commit": 1, "secret": 2}
_BUILD = {2: Pair, 3: SymEnc, 4: AsymEnc}


def default_backend() -> str:
    want = os.environ.get("PFMC_BACKEND", "auto")
    if want == "python" or not NATIVE_AVAILABLE:
        return "python"
    return "native"


def encode(t: Term) -> tuple:
    tag = t.tag
    if tag == T_ATOM:
        return (tag, t.name, _KIND_CODE[t.kind])
    if tag == T_VAR:
        return (tag, t.name, t.index, _KIND_CODE[t.kind])
    if tag == T_INV:
        return (tag, encode(t.key))
    if tag == T_APPLY:
        return (tag, t.fn, tuple(encode(a) for a in t.args))
    a, b = children(t)
    return (tag, encode(a), encode(b))


def decode(e: tuple, memo: dict) -> Term:
    t = memo.get(e)
    if t is not None:
        return t
    tag = e[0]
    if tag == T_ATOM:
        t = Atom(e[1], _CODE_KIND[e[2]])
    elif tag == T_VAR:
        t = Var(e[1], e[2], _CODE_KIND[e[3]])
    elif tag == T_INV:
        t = Inv(decode(e[1], memo))
    elif tag == T_APPLY:
        t = Apply(e[1], [decode(a, memo) for a in e[2]])
    else:
        t = _BUILD[tag](decode(e[1], memo), decode(e[2], memo))
    memo[e] = t
    return t


class PythonBackend:
    name = "python"

    def __init__(self, root: SymbolicState):
        self.root = root

    def expand(self, node: SymbolicState) -> list:
        return successors(node)

    def check(self, node: SymbolicState, goals=None) -> Optional[Attack]:
        return check_goals(node, goals)

    def state(self, node: SymbolicState) -> SymbolicState:
        return node


class NativeBackend:
    """Compiled successor and goal kernel for a choice or initial state."""

    name = "native"

    def __init__(self, root: SymbolicState):
        if root.alternatives is not None:
            alts = root.alternatives
        elif not root.trace and not root.store.entries:
            alts = (root,)
        else:
            raise ValueError("the compiled core starts from initial states only")
        self._root_state = root
        self._alts = alts
        ctx = root.ctx
        self.ctx = ctx
        payload = []
        for alt in alts:
            strands = []
            for cur in alt.cursors:
                if cur.pos:
                    raise ValueError("the compiled core starts from initial states only")
                steps = []
                for st in cur.strand.steps:
                    if isinstance(st, Receive):
                        steps.append((0, encode(st.term)))
                    elif isinstance(st, Send):
                        steps.append((1, encode(st.term)))
                    else:
                        ev = st.event
                        steps.append((2, _EVENT_CODE[ev.kind], ev.goal, [encode(a) for a in ev.args]))
                strands.append(steps)
            payload.append((strands, [encode(t) for t in alt.knowledge],
                            [encode(v) for v in alt.scope]))
        checks = [(gi, isinstance(c, Secrecy)) for gi, c in ctx.checks]
        self.engine = _core.Engine(payload, sorted(ctx.public_functions),
                                   [encode(h) for h in ctx.honest], checks)
        self.root = self.engine.root()
        if root.alternatives is None:
            self.root = self.engine.expand(self.root)[0]

    def expand(self, node) -> list:
        return self.engine.expand(node)

    def check(self, node, goals=None) -> Optional[Attack]:
        if goals is not None:
            return check_goals(self.state(node), goals)
        gi = self.engine.check(node)
        if gi is None:
            return None
        attack = check_goals(self.state(node))
        if attack is None or attack.goal_index != gi:
            raise AssertionError(f"compiled core and reference disagree on goal {gi}")
        return attack

    def state(self, node) -> SymbolicState:
        alt, pos, kn, entries, acc, events, trace, depth = self.engine.export(node)
        if alt is None:
            return self._root_state
        base = self._alts[alt]
        memo: dict = {}
        cursors = tuple(c._replace(pos=p) for c, p in zip(base.cursors, pos))
        store = ConstraintStore(
            [decode(t, memo) for t in kn],
            [(lv, decode(g, memo)) for lv, g in entries],
            {decode(v, memo): decode(t, memo) for v, t in acc},
            self.ctx.public_functions,
        )
        strands = [c.strand for c in base.cursors]
        raw_events = tuple(strands[j].steps[k].event for j, k in events)
        recs = []
        for j, p in trace:
            cur = base.cursors[j]
            block = cur.strand.steps[p:cur.ends[p]]
            recs.append(TransitionRecord(
                cur.strand.agent,
                tuple(st.term for st in block if isinstance(st, Receive)),
                next((st.term for st in block if isinstance(st, Send)), None),
                tuple(st.event for st in block if isinstance(st, EventMark)),
                cur.strand.session,
                cur.strand.role,
            ))
        return SymbolicState(self.ctx, cursors, store, raw_events, tuple(recs), depth,
                             None, base.assignment, base.scope)


class SyntheticNode:
    """Node of a synthetic tree, identified by its path of child indices."""

    __slots__ = ("path",)
    is_choice = False

    def __init__(self, path: tuple = ()):
        self.path = path

    @property
    def depth(self) -> int:
        return len(self.path)

    def nbytes(self) -> int:
        return 64 + 8 * len(self.path)

    def __eq__(self, other):
        return isinstance(other, SyntheticNode) and other.path == self.path

    def __hash__(self):
        return hash(self.path)

    def __repr__(self):
        return f"SyntheticNode{self.path}"


class SyntheticBackend:
    """Trees given by a branching function over paths, for strategy tests.

    ``attack(path)`` marks attack nodes; the reported attack is the path.
    """

    name = "synthetic"

    def __init__(self, branching, attack=None):
        self.branching = branching
        self.attack = attack
        self.root = SyntheticNode()

    @classmethod
    def balanced(cls, branching: int, depth: int, attack=None) -> "SyntheticBackend":
        return cls(lambda p: branching if len(p) < depth else 0, attack)

    def expand(self, node: SyntheticNode) -> list:
        return [SyntheticNode(node.path + (i,)) for i in range(self.branching(node.path))]

    def check(self, node: SyntheticNode, goals=None):
        if self.attack is not None and self.attack(node.path):
            return node.path
        return None

    def state(self, node: SyntheticNode) -> SyntheticNode:
        return node


def make_backend(root, kind: Optional[str] = None):
    """Backend for ``root``; ``kind`` is ``native``, ``python`` or None (auto).

    In auto mode a state the compiled core cannot start from (one that is
    already partway through a run) uses the Python backend.
    """
    if kind is None:
        kind = default_backend()
        if kind == "native":
            try:
                return NativeBackend(root)
            except ValueError:
                return PythonBackend(root)
    if kind == "native":
        if not NATIVE_AVAILABLE:
            raise RuntimeError("compiled core not available in this install")
        return NativeBackend(root)
    if kind != "python":
        raise ValueError(f"unknown backend {kind!r}")
    return PythonBackend(root)
