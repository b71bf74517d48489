"""AnB protocol files: parsing, role strands and session instantiation."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional, Union

import lark

from .term_algebra import (
    AGENT,
    CONSTANT,
    NUMBER,
    T_APPLY,
    T_ASYM,
    T_ATOM,
    T_INV,
    T_PAIR,
    T_SYM,
    T_VAR,
    Apply,
    AsymEnc,
    Atom,
    FreshCounter,
    Inv,
    Pair,
    SymEnc,
    Term,
    Var,
    apply,
    children,
    pair_all,
    rebuild,
    render,
    subterms,
)

BUILTIN_FUNCTIONS = {"pk": 1}
# channel keys: ak(X) signs what X sends on a secure channel, ck(X) encrypts what X receives
AUTH_KEY = "ak"
CONF_KEY = "ck"
PUBLIC_BUILTINS = frozenset({"pk", AUTH_KEY, CONF_KEY})
INTRUDER = "i"
HONEST = ("h1", "h2")


class AnBError(ValueError):
    """Input error, with a 1-based source location when one is known."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


class ExecutabilityError(AnBError):
    """A role is asked to send something it can neither know nor generate."""


# ---------------------------------------------------------------------------
# specification types


@dataclass(frozen=True)
class Action:
    sender: str
    receiver: str
    message: Term
    channel: str = "plain"  # plain | secure
    sender_pseudonym: bool = False
    receiver_pseudonym: bool = False


@dataclass(frozen=True)
class Secrecy:
    payload: Term
    parties: tuple


@dataclass(frozen=True)
class Authentication:
    authenticator: str
    peer: str
    payload: Term


@dataclass(frozen=True)
class SecureChannelGoal:
    sender: str
    receiver: str
    payload: Term


Goal = Union[Secrecy, Authentication, SecureChannelGoal]


@dataclass
class ProtocolSpec:
    name: str
    agents: list  # [(name, is_variable)]
    numbers: list
    keys: list
    functions: dict  # name -> arity
    knowledge: dict  # role -> [Term]
    inequalities: list  # [(role, role)]
    actions: list
    goals: list
    declared_functions: list = field(default_factory=list)

    @property
    def roles(self) -> list:
        seen = []
        for a in self.actions:
            for r in (a.sender, a.receiver):
                if r not in seen:
                    seen.append(r)
        return seen

    def is_variable(self, role: str) -> bool:
        return dict(self.agents).get(role, role[:1].isupper())

    @property
    def function_names(self) -> set:
        return set(self.declared_functions) | set(self.functions)

    @property
    def public_functions(self) -> frozenset:
        """Functions some role holds as a bare symbol, plus the built-ins."""
        fns = set(PUBLIC_BUILTINS)
        for terms in self.knowledge.values():
            for t in terms:
                if t.tag == T_ATOM and t.name in self.function_names:
                    fns.add(t.name)
        return frozenset(fns)

    def __eq__(self, other):
        if not isinstance(other, ProtocolSpec):
            return NotImplemented
        fields = ("name", "agents", "numbers", "keys", "functions", "knowledge",
                  "inequalities", "actions", "goals")
        return all(getattr(self, f) == getattr(other, f) for f in fields)


# ---------------------------------------------------------------------------
# parsing


@lru_cache(maxsize=1)
def _parser() -> lark.Lark:
    grammar = resources.files("pfmc").joinpath("grammar/anb.lark").read_text()
    return lark.Lark(grammar, parser="earley", propagate_positions=True)


def grammar_text() -> str:
    return resources.files("pfmc").joinpath("grammar/anb.lark").read_text()


class _Builder:
    def __init__(self):
        self.kinds: dict = {}
        self.agents: list = []
        self.numbers: list = []
        self.keys: list = []
        self.functions: dict = {}
        self.declared_functions: list = []

    def declare(self, tree: lark.Tree):
        typename, *names = tree.children
        for n in names:
            if str(n) in self.kinds:
                raise AnBError(f"identifier {n} declared twice", n.line, n.column)
            if typename == "Agent":
                self.kinds[str(n)] = AGENT
                self.agents.append((str(n), str(n)[:1].isupper()))
            elif typename == "Function":
                self.kinds[str(n)] = "function"
                self.declared_functions.append(str(n))
            else:
                self.kinds[str(n)] = NUMBER
                (self.keys if typename == "Symmetric_key" else self.numbers).append(str(n))

    def msg(self, tree) -> list:
        return [self.term(c) for c in tree.children]

    def term(self, tree) -> Term:
        kind = tree.data
        if kind == "ident":
            tok = tree.children[0]
            name = str(tok)
            k = self.kinds.get(name)
            if k is None:
                raise AnBError(f"undeclared identifier {name}", tok.line, tok.column)
            return Atom(name, CONSTANT if k == "function" else k)
        if kind == "group":
            return pair_all(self.msg(tree.children[0]))
        if kind == "app":
            tok, body = tree.children
            name = str(tok)
            args = self.msg(body)
            if name == "inv":
                if len(args) != 1:
                    raise AnBError(f"inv takes 1 argument, got {len(args)}", tok.line, tok.column)
                return Inv(args[0])
            if name not in BUILTIN_FUNCTIONS and self.kinds.get(name) != "function":
                raise AnBError(f"undeclared function {name}", tok.line, tok.column)
            # f(a,b,c) applies f to the tuple a,b,c; only built-ins are strictly unary
            arity = BUILTIN_FUNCTIONS.get(name)
            if arity is not None and arity != len(args):
                raise AnBError(
                    f"function {name} used with {len(args)} arguments, expected {arity}",
                    tok.line, tok.column,
                )
            self.functions.setdefault(name, 1)
            args = [pair_all(args)]
            return Apply(name, args)
        body, key = tree.children
        inner = pair_all(self.msg(body))
        k = self.term(key)
        return AsymEnc(k, inner) if kind == "asym" else SymEnc(k, inner)

    def role(self, tok) -> str:
        name = str(tok)
        if self.kinds.get(name) != AGENT:
            raise AnBError(f"undeclared role {name}", tok.line, tok.column)
        return name


def _endpoint(b: _Builder, tree) -> tuple:
    return b.role(tree.children[0]), tree.data == "pseudo_endpoint"


def _pos(text: str, word: str) -> tuple:
    m = re.search(rf"\b{word}\b", text)
    if not m:
        return None, None
    line = text.count("\n", 0, m.start()) + 1
    col = m.start() - (text.rfind("\n", 0, m.start()) + 1) + 1
    return line, col


def parse_anb(text: str) -> ProtocolSpec:
    """Parse AnB source into a :class:`ProtocolSpec`."""
    try:
        tree = _parser().parse(text)
    except lark.UnexpectedInput as e:
        raise AnBError(f"syntax error near {_context(text, e)!r}", e.line, e.column) from None
    name_tok, types, know, acts, goals = tree.children
    b = _Builder()
    for decl in types.children:
        b.declare(decl)

    knowledge: dict = {}
    inequalities = []
    for clause in know.children:
        if clause.data == "where":
            for ineq in clause.children:
                x, y = ineq.children
                inequalities.append((b.role(x), b.role(y)))
            continue
        role_tok, body = clause.children
        role = b.role(role_tok)
        if role in knowledge:
            raise AnBError(f"knowledge for {role} given twice", role_tok.line, role_tok.column)
        knowledge[role] = b.msg(body)

    actions = []
    for act in acts.children:
        src, chan, dst, body = act.children
        (s, sp), (r, rp) = _endpoint(b, src), _endpoint(b, dst)
        message = pair_all(b.msg(body))
        actions.append(Action(s, r, message, "secure" if str(chan) == "*->*" else "plain", sp, rp))
        for role, tok in ((s, src.children[0]), (r, dst.children[0])):
            if role not in knowledge:
                raise AnBError(f"role {role} has no knowledge clause", tok.line, tok.column)
    if not actions:
        line, col = _pos(text, "Actions")
        raise AnBError("Actions section is empty", line, col)

    goal_list = []
    for g in goals.children:
        if g.data == "auth_goal":
            a, p, body = g.children
            goal_list.append(Authentication(b.role(a), b.role(p), pair_all(b.msg(body))))
        elif g.data == "secret_goal":
            body, *parties = g.children
            goal_list.append(Secrecy(pair_all(b.msg(body)), tuple(b.role(p) for p in parties)))
        else:
            src, chan, dst, body = g.children
            if str(chan) != "*->*":
                raise AnBError("channel goals need a secure channel *->*", chan.line, chan.column)
            goal_list.append(SecureChannelGoal(
                _endpoint(b, src)[0], _endpoint(b, dst)[0], pair_all(b.msg(body))))

    return ProtocolSpec(
        name=str(name_tok),
        agents=b.agents,
        numbers=b.numbers,
        keys=b.keys,
        functions=b.functions,
        knowledge=knowledge,
        inequalities=inequalities,
        actions=actions,
        goals=goal_list,
        declared_functions=b.declared_functions,
    )


def _context(text: str, e: lark.UnexpectedInput) -> str:
    try:
        return e.get_context(text, 20).splitlines()[0].strip()
    except Exception:  # lark versions differ in what they can show
        return ""


def load_corpus(name: str) -> ProtocolSpec:
    """Parse a protocol shipped with the package (``kerberos``, ``tls`` ...)."""
    return parse_anb(corpus_text(name))


def corpus_text(name: str) -> str:
    return resources.files("pfmc").joinpath(f"corpus/{name}.AnB").read_text()


CORPUS = ("sso_flawed", "sso_standard", "kerberos", "tls")


# ---------------------------------------------------------------------------
# rendering


def _msg(t: Term) -> str:
    # top-level comma lists need no parentheses
    return render(t)


def render_anb(spec: ProtocolSpec) -> str:
    """AnB text that parses back to an equal spec."""
    lines = [f"Protocol: {spec.name}"]
    decls = []
    if spec.agents:
        decls.append("Agent " + ",".join(n for n, _ in spec.agents))
    if spec.numbers:
        decls.append("Number " + ",".join(spec.numbers))
    if spec.declared_functions:
        decls.append("Function " + ",".join(spec.declared_functions))
    if spec.keys:
        decls.append("Symmetric_key " + ",".join(spec.keys))
    lines.append("Types: " + ";\n       ".join(decls))
    clauses = [f"{r}: {','.join(_msg(t) for t in ts)}" for r, ts in spec.knowledge.items()]
    lines.append("Knowledge: " + ";\n           ".join(clauses))
    if spec.inequalities:
        lines.append("   where " + ", ".join(f"{x}!={y}" for x, y in spec.inequalities))
    lines.append("Actions:")
    for a in spec.actions:
        s = f"[{a.sender}]" if a.sender_pseudonym else a.sender
        r = f"[{a.receiver}]" if a.receiver_pseudonym else a.receiver
        arrow = "*->*" if a.channel == "secure" else "->"
        lines.append(f"  {s} {arrow} {r}: {_msg(a.message)}")
    lines.append("Goals:")
    for g in spec.goals:
        if isinstance(g, Authentication):
            lines.append(f"  {g.authenticator} authenticates {g.peer} on {_msg(g.payload)}")
        elif isinstance(g, Secrecy):
            lines.append(f"  {_msg(g.payload)} secret between {','.join(g.parties)}")
        else:
            lines.append(f"  {g.sender} *->* {g.receiver}: {_msg(g.payload)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# strands


@dataclass(frozen=True)
class Send:
    term: Term


@dataclass(frozen=True)
class Receive:
    term: Term


@dataclass(frozen=True)
class Event:
    """Goal fact: ``running``/``commit`` carry (agent, peer, payload);
    ``secret`` carries (payload, claimant, *peers)."""

    kind: str
    goal: int
    args: tuple

    def apply(self, sub) -> "Event":
        if not sub:
            return self
        return Event(self.kind, self.goal, tuple(apply(sub, t) for t in self.args))

    def __str__(self):
        return f"{self.kind}[{self.goal}]({', '.join(render(t) for t in self.args)})"


@dataclass(frozen=True)
class EventMark:
    event: Event


Step = Union[Send, Receive, EventMark]


@dataclass(frozen=True)
class Strand:
    """Steps one agent takes in one session.

    Templates (from :func:`roles_to_strands`) use the role's identifiers as
    atoms; ``fresh`` lists the names generated anew in every session.
    """

    agent: Term
    steps: tuple
    role: str = ""
    session: int = 0
    fresh: frozenset = frozenset()
    knowledge: tuple = ()

    def blocks(self) -> list:
        """Step index ranges of the transitions: receives through the next send."""
        out = []
        i, n = 0, len(self.steps)
        while i < n:
            j = i
            while j < n and not isinstance(self.steps[j], Send):
                j += 1
            if j < n:
                j += 1
                while j < n and isinstance(self.steps[j], EventMark):
                    j += 1
            out.append((i, j))
            i = j
        return out


def pseudonym(role: str) -> Atom:
    return Atom(f"[{role}]", NUMBER)


def channel_message(action: Action) -> Term:
    """Encode a secure-channel action with the channel key functions."""
    m = action.message
    if action.channel != "secure":
        return m
    if action.sender_pseudonym:
        p = pseudonym(action.sender)
        inner = Pair(p, AsymEnc(Inv(p), m))
    else:
        inner = AsymEnc(Inv(Apply(AUTH_KEY, [Atom(action.sender, AGENT)])), m)
    if action.receiver_pseudonym:
        return AsymEnc(pseudonym(action.receiver), inner)
    return AsymEnc(Apply(CONF_KEY, [Atom(action.receiver, AGENT)]), inner)


def _contains(t: Term, m: Term) -> bool:
    return any(u == m for u in subterms(t))


def expand_goals(spec: ProtocolSpec) -> list:
    """Elementary checks per goal: (goal index, Secrecy | Authentication)."""
    out = []
    for gi, g in enumerate(spec.goals):
        if isinstance(g, SecureChannelGoal):
            out.append((gi, Secrecy(g.payload, (g.sender, g.receiver))))
            out.append((gi, Authentication(g.receiver, g.sender, g.payload)))
        else:
            out.append((gi, g))
    return out


class _RoleView:
    """What one role knows, and how it sees the terms it handles."""

    def __init__(self, spec: ProtocolSpec, role: str):
        self.spec = spec
        self.role = role
        self.fns = set(PUBLIC_BUILTINS)
        self.known: set = set()
        self.view: dict = {}
        self.fresh: set = set()
        self.blobs = 0
        me = Atom(role, AGENT)
        items = list(spec.knowledge.get(role, []))
        if me not in items:
            items.insert(0, me)
        items += [Inv(Apply(AUTH_KEY, [me])), Inv(Apply(CONF_KEY, [me]))]
        if any(a.sender_pseudonym and a.sender == role or a.receiver_pseudonym and a.receiver == role
               for a in spec.actions):
            p = pseudonym(role)
            items += [p, Inv(p)]
            self.fresh.add(p.name)
        self.initial = tuple(items)
        for t in items:
            if t.tag == T_ATOM and t.name in spec.function_names:
                self.fns.add(t.name)
            else:
                self._learn_known(t)

    def _learn_known(self, t: Term):
        # initial knowledge and its analysis; views are the terms themselves
        work = [t]
        while work:
            u = work.pop()
            if u in self.known:
                continue
            self.known.add(u)
            if u.tag == T_PAIR:
                work += [u._a, u._b]
        changed = True
        while changed:
            changed = False
            for u in list(self.known):
                if u.tag == T_SYM and self.composable(u._a) and u._b not in self.known:
                    work.append(u._b)
                elif u.tag == T_ASYM and self.composable(Inv(u._a)) and u._b not in self.known:
                    work.append(u._b)
                while work:
                    changed = True
                    w = work.pop()
                    if w not in self.known:
                        self.known.add(w)
                        if w.tag == T_PAIR:
                            work += [w._a, w._b]

    def is_constant(self, t: Term) -> bool:
        return t.tag == T_ATOM and t.kind == AGENT and not self.spec.is_variable(t.name)

    def composable(self, t: Term) -> bool:
        if t in self.known or self.is_constant(t):
            return True
        tag = t.tag
        if tag in (T_PAIR, T_SYM, T_ASYM):
            return self.composable(t._a) and self.composable(t._b)
        if tag == T_APPLY:
            return t.fn in self.fns and all(self.composable(a) for a in t.args)
        return False

    def term(self, t: Term) -> Term:
        """The role's rendering of a term it can compose."""
        v = self.view.get(t)
        if v is not None:
            return v
        kids = children(t)
        if not kids:
            return t
        new = tuple(self.term(k) for k in kids)
        return rebuild(t, new)

    def _blob(self, t: Term) -> Term:
        self.blobs += 1
        v = Var(f"_M{self.blobs}")
        self.view[t] = v
        self.known.add(t)
        return v

    def _pattern(self, t: Term) -> Term:
        if t in self.view:
            return self.view[t]
        if self.composable(t):
            return self.term(t)
        tag = t.tag
        if tag == T_ATOM:
            v = Var(t.name, 0, t.kind)
            self.view[t] = v
            self.known.add(t)
            return v
        if tag == T_PAIR:
            return Pair(self._pattern(t._a), self._pattern(t._b))
        if tag == T_SYM and self.composable(t._a):
            out = SymEnc(self.term(t._a), self._pattern(t._b))
            self.known.add(t)
            return out
        if tag == T_ASYM and self.composable(Inv(t._a)):
            k = t._a
            if not (self.composable(k) or k.tag == T_INV and self.composable(k.key)):
                raise ExecutabilityError(f"role {self.role} cannot express the key of {render(t)}")
            out = AsymEnc(self.term(t._a), self._pattern(t._b))
            self.known.add(t)
            return out
        return self._blob(t)

    def receive(self, t: Term) -> Term:
        # repeat until what is learned late in the message no longer changes
        # how earlier parts are read
        carry: dict = {}
        while True:
            saved = (set(self.known), dict(self.view), self.blobs)
            for k, v in carry.items():
                self.view[k] = v
                self.known.add(k)
            out = self._pattern(t)
            learned = {k: v for k, v in self.view.items()
                       if k.tag == T_ATOM and k not in saved[1]}
            if learned.keys() == carry.keys():
                return out
            carry = learned
            self.known, self.view, self.blobs = saved

    def send(self, t: Term) -> Term:
        for u in subterms(t):
            if (u.tag == T_ATOM and u.kind == NUMBER and u not in self.known
                    and u.name not in self.spec.function_names):
                self.known.add(u)
                self.fresh.add(u.name)
        if not self.composable(t):
            bad = next(u for u in _leaves_first(t) if not self.composable(u))
            raise ExecutabilityError(
                f"role {self.role} cannot produce {render(bad)} in message {render(t)}")
        return self.term(t)


def _leaves_first(t: Term):
    out = list(subterms(t))
    out.sort(key=lambda u: u.depth)
    return out


def compile_role(spec: ProtocolSpec, role: str) -> Strand:
    """Template strand of ``role`` with receiver-view patterns and goal events."""
    rv = _RoleView(spec, role)
    checks = expand_goals(spec)
    mine = [i for i, a in enumerate(spec.actions) if role in (a.sender, a.receiver)]
    last_touch = {}
    for ci, (gi, g) in enumerate(checks):
        if isinstance(g, Authentication) and g.authenticator == role:
            touching = [i for i in mine if _contains(spec.actions[i].message, g.payload)]
            last_touch[ci] = (touching or mine)[-1] if mine else None
    running_done: set = set()
    me = Atom(role, AGENT)
    steps: list = []
    for i in mine:
        a = spec.actions[i]
        m = channel_message(a)
        if a.sender == role:
            steps.append(Send(rv.send(m)))
        else:
            steps.append(Receive(rv.receive(m)))
        for ci, (gi, g) in enumerate(checks):
            if not isinstance(g, Authentication):
                continue
            peer, auth = Atom(g.peer, AGENT), Atom(g.authenticator, AGENT)
            if (g.peer == role and a.sender == role and ci not in running_done
                    and _contains(a.message, g.payload)):
                running_done.add(ci)
                steps.append(EventMark(Event("running", gi, (
                    rv.term(me), _view_or_var(rv, auth), _view_or_var(rv, g.payload)))))
            if g.authenticator == role and last_touch.get(ci) == i:
                steps.append(EventMark(Event("commit", gi, (
                    rv.term(me), _view_or_var(rv, peer), _view_or_var(rv, g.payload)))))
    for gi, g in checks:
        if isinstance(g, Secrecy) and role in g.parties and rv.composable(g.payload):
            peers = tuple(_view_or_var(rv, Atom(p, AGENT)) for p in g.parties if p != role)
            steps.append(EventMark(Event("secret", gi, (rv.term(g.payload), rv.term(me)) + peers)))
    return Strand(me, tuple(steps), role, 0, frozenset(rv.fresh), rv.initial)


def _view_or_var(rv: _RoleView, t: Term) -> Term:
    if rv.composable(t):
        return rv.term(t)
    v = rv.view.get(t)
    if v is None:
        if t.tag == T_ATOM:
            v = Var(t.name, 0, t.kind)
        else:
            v = Var(f"_M{rv.blobs + 1}")
        if t.tag != T_ATOM:
            rv.blobs += 1
        rv.view[t] = v
    return v


def roles_to_strands(spec: ProtocolSpec) -> dict:
    """Template strand per role, in order of first appearance."""
    return {r: compile_role(spec, r) for r in spec.roles}


# ---------------------------------------------------------------------------
# sessions


def _relabel(t: Term, atoms: dict, vars_: dict) -> Term:
    if t.tag == T_ATOM:
        return atoms.get(t.name, t)
    if t.tag == T_VAR:
        return vars_.get(t.name, t)
    kids = children(t)
    return rebuild(t, tuple(_relabel(k, atoms, vars_) for k in kids))


def _relabel_step(s, atoms, vars_):
    if isinstance(s, Send):
        return Send(_relabel(s.term, atoms, vars_))
    if isinstance(s, Receive):
        return Receive(_relabel(s.term, atoms, vars_))
    e = s.event
    return EventMark(Event(e.kind, e.goal, tuple(_relabel(t, atoms, vars_) for t in e.args)))


def session_assignments(spec: ProtocolSpec, n_sessions: int) -> list:
    """Role-to-agent maps per session, one representative per symmetry class.

    Capitalised roles range over two honest names and the intruder, subject
    to the ``where`` inequalities; every session needs an honest participant
    with a strand.
    """
    roles = spec.roles
    var_roles = [r for r in roles if spec.is_variable(r)]
    agents = HONEST + (INTRUDER,)
    per_session = []
    for combo in itertools.product(agents, repeat=len(var_roles)):
        amap = dict(zip(var_roles, combo))
        full = {r: amap.get(r, r) for r in roles}
        for x, y in spec.inequalities:
            if full.get(x, x) == full.get(y, y):
                break
        else:
            if any(full[r] != INTRUDER for r in roles):
                per_session.append(tuple(combo))
    seen = set()
    out = []
    perms = list(itertools.permutations(HONEST))
    for combo in itertools.product(per_session, repeat=n_sessions):
        variants = []
        for p in perms:
            ren = dict(zip(HONEST, p))
            variants.append(tuple(sorted(tuple(ren.get(a, a) for a in s) for s in combo)))
        canon = min(variants)
        if canon in seen:
            continue
        seen.add(canon)
        out.append([dict(zip(var_roles, s)) for s in canon])
    return out


def instantiate_sessions(spec: ProtocolSpec, n_sessions: int):
    """Initial state for ``n_sessions`` parallel sessions.

    The result is a choice node whose alternatives are the initial states of
    the session assignments (see :func:`session_assignments`).
    """
    from .transition_system import Context, SymbolicState, initial_state

    if n_sessions < 1:
        raise ValueError("n_sessions must be at least 1")
    reserved = {n for n, _ in spec.agents} & set(HONEST + (INTRUDER,))
    reserved |= (set(spec.numbers) | set(spec.keys) | spec.function_names) & set(HONEST + (INTRUDER,))
    if reserved:
        raise AnBError(f"identifiers {sorted(reserved)} clash with built-in agent names")
    templates = roles_to_strands(spec)
    ctx = Context.from_spec(spec)
    alternatives = []
    for assignment in session_assignments(spec, n_sessions):
        fresh_ids = FreshCounter()
        var_ids = FreshCounter()
        strands = []
        intruder_kn = [Atom(INTRUDER, AGENT)]
        me = Atom(INTRUDER, AGENT)
        for f in ("pk", AUTH_KEY, CONF_KEY):
            intruder_kn.append(Inv(Apply(f, [me])))
        if any(a.sender_pseudonym or a.receiver_pseudonym for a in spec.actions):
            own = pseudonym(INTRUDER)
            intruder_kn += [own, Inv(own)]
        pseudonyms = []
        for s, amap in enumerate(assignment, start=1):
            agent_of = {r: Atom(amap.get(r, r), AGENT) for r in spec.roles}
            for role, tpl in templates.items():
                atoms = {r: a for r, a in agent_of.items()}
                if agent_of[role].name == INTRUDER:
                    for t in tpl.knowledge:
                        if t.tag == T_ATOM and t.name in tpl.fresh:
                            continue
                        if t.tag == T_INV and t.key.tag == T_ATOM and t.key.name in tpl.fresh:
                            continue
                        intruder_kn.append(_relabel(t, atoms, {}))
                    continue
                for name in sorted(tpl.fresh):
                    kind = NUMBER
                    atoms[name] = Atom(f"{name}#{s}#{fresh_ids.next()}", kind)
                vmap = {}
                for st in tpl.steps:
                    terms = [st.term] if not isinstance(st, EventMark) else list(st.event.args)
                    for t in terms:
                        for v in t.vars():
                            if v.name not in vmap:
                                vmap[v.name] = Var(v.name, var_ids.next(), v.kind)
                steps = tuple(_relabel_step(st, atoms, vmap) for st in tpl.steps)
                strands.append(Strand(agent_of[role], steps, role, s, tpl.fresh))
                p = pseudonym(role).name
                if p in tpl.fresh:
                    pseudonyms.append(atoms[p])
        knowledge = []
        for t in intruder_kn + pseudonyms:
            if t not in knowledge:
                knowledge.append(t)
        alternatives.append(initial_state(ctx, strands, knowledge, assignment))
    return SymbolicState.choice(ctx, alternatives)
