"""Symbolic message terms, substitutions and syntactic unification.

Terms are immutable and hash-cached.  ``Inv(Inv(k))`` collapses to ``k`` at
construction, so structural equality is the only equality needed.
"""

from __future__ import annotations

import itertools
import threading
from collections.abc import Iterable, Iterator, Mapping
from typing import Optional

AGENT = "agent"
NUMBER = "number"
CONSTANT = "constant"
KINDS = (AGENT, NUMBER, CONSTANT)

# type tags, used for fast dispatch in the hot loops
T_ATOM, T_VAR, T_PAIR, T_SYM, T_ASYM, T_INV, T_APPLY = range(7)


class Term:
    __slots__ = ("_hash", "ground", "depth")
    tag = -1

    def __repr__(self) -> str:
        return render(self)

    def __lt__(self, other: "Term") -> bool:
        return sort_key(self) < sort_key(other)

    def vars(self) -> Iterator["Var"]:
        """Variables in left-to-right order, with repetitions."""
        stack = [self]
        while stack:
            t = stack.pop()
            if t.ground:
                continue
            if t.tag == T_VAR:
                yield t
            else:
                stack.extend(reversed(children(t)))


class Atom(Term):
    __slots__ = ("name", "kind")
    tag = T_ATOM

    def __init__(self, name: str, kind: str = CONSTANT):
        self.name = name
        self.kind = kind
        self.ground = True
        self.depth = 0
        self._hash = hash((T_ATOM, name, kind))

    def __eq__(self, other):
        return self is other or (
            type(other) is Atom and self.name == other.name and self.kind == other.kind
        )

    def __hash__(self):
        return self._hash

    def __reduce__(self):
        return (Atom, (self.name, self.kind))


class Var(Term):
    """Variable; ``kind`` restricts it to atoms of that kind (typed model)."""

    __slots__ = ("name", "index", "kind")
    tag = T_VAR

    def __init__(self, name: str, index: int = 0, kind: Optional[str] = None):
        self.name = name
        self.index = index
        self.kind = kind
        self.ground = False
        self.depth = 0
        self._hash = hash((T_VAR, name, index))

    def __eq__(self, other):
        return self is other or (
            type(other) is Var and self.index == other.index and self.name == other.name
        )

    def __hash__(self):
        return self._hash

    def __reduce__(self):
        return (Var, (self.name, self.index, self.kind))


class _Binary(Term):
    __slots__ = ("_a", "_b")

    def __init__(self, a: Term, b: Term):
        self._a = a
        self._b = b
        self.ground = a.ground and b.ground
        self.depth = 1 + max(a.depth, b.depth)
        self._hash = hash((self.tag, a._hash, b._hash))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            type(other) is type(self)
            and self._hash == other._hash
            and self._a == other._a
            and self._b == other._b
        )

    def __hash__(self):
        return self._hash

    def __reduce__(self):
        return (type(self), (self._a, self._b))


class Pair(_Binary):
    __slots__ = ()
    tag = T_PAIR

    @property
    def left(self) -> Term:
        return self._a

    @property
    def right(self) -> Term:
        return self._b


class SymEnc(_Binary):
    __slots__ = ()
    tag = T_SYM

    @property
    def key(self) -> Term:
        return self._a

    @property
    def body(self) -> Term:
        return self._b


class AsymEnc(_Binary):
    __slots__ = ()
    tag = T_ASYM

    @property
    def key(self) -> Term:
        return self._a

    @property
    def body(self) -> Term:
        return self._b


class Inv(Term):
    __slots__ = ("key",)
    tag = T_INV

    def __new__(cls, key: Term):
        if type(key) is Inv:
            return key.key
        return super().__new__(cls)

    def __init__(self, key: Term):
        if self is key:  # collapsed by __new__
            return
        self.key = key
        self.ground = key.ground
        self.depth = 1 + key.depth
        self._hash = hash((T_INV, key._hash))

    def __eq__(self, other):
        return self is other or (type(other) is Inv and self.key == other.key)

    def __hash__(self):
        return self._hash

    def __reduce__(self):
        return (Inv, (self.key,))


class Apply(Term):
    __slots__ = ("fn", "args")
    tag = T_APPLY

    def __init__(self, fn: str, args: Iterable[Term]):
        self.fn = fn
        self.args = tuple(args)
        self.ground = all(a.ground for a in self.args)
        self.depth = 1 + max((a.depth for a in self.args), default=0)
        self._hash = hash((T_APPLY, fn, tuple(a._hash for a in self.args)))

    def __eq__(self, other):
        if self is other:
            return True
        return (
            type(other) is Apply
            and self._hash == other._hash
            and self.fn == other.fn
            and self.args == other.args
        )

    def __hash__(self):
        return self._hash

    def __reduce__(self):
        return (Apply, (self.fn, self.args))


Substitution = dict  # Var -> Term, kept idempotent


def pair_all(items: Iterable[Term]) -> Term:
    """Right-nested pairing: ``a,b,c`` is ``Pair(a, Pair(b, c))``."""
    items = list(items)
    if not items:
        raise ValueError("cannot pair an empty sequence")
    t = items[-1]
    for x in reversed(items[:-1]):
        t = Pair(x, t)
    return t


def children(t: Term) -> tuple:
    tag = t.tag
    if tag in (T_PAIR, T_SYM, T_ASYM):
        return (t._a, t._b)
    if tag == T_INV:
        return (t.key,)
    if tag == T_APPLY:
        return t.args
    return ()


def rebuild(t: Term, kids) -> Term:
    tag = t.tag
    if tag == T_PAIR:
        return Pair(*kids)
    if tag == T_SYM:
        return SymEnc(*kids)
    if tag == T_ASYM:
        return AsymEnc(*kids)
    if tag == T_INV:
        return Inv(kids[0])
    if tag == T_APPLY:
        return Apply(t.fn, kids)
    return t


def subterms(t: Term) -> Iterator[Term]:
    stack = [t]
    while stack:
        u = stack.pop()
        yield u
        stack.extend(children(u))


def sort_key(t: Term) -> tuple:
    tag = t.tag
    if tag == T_ATOM:
        return (tag, t.name, t.kind)
    if tag == T_VAR:
        return (tag, t.name, t.index)
    if tag == T_APPLY:
        return (tag, t.fn, tuple(sort_key(a) for a in t.args))
    return (tag,) + tuple(sort_key(c) for c in children(t))


def render(t: Term) -> str:
    """AnB-style text: ``{m}k`` asymmetric, ``{|m|}k`` symmetric, comma pairs."""
    tag = t.tag
    if tag == T_ATOM:
        return t.name
    if tag == T_VAR:
        return f"{t.name}@{t.index}"
    if tag == T_PAIR:
        left = render(t._a)
        if t._a.tag == T_PAIR:
            left = f"({left})"
        return f"{left},{render(t._b)}"
    if tag == T_SYM:
        return "{|" + render(t._b) + "|}" + _render_key(t._a)
    if tag == T_ASYM:
        return "{" + render(t._b) + "}" + _render_key(t._a)
    if tag == T_INV:
        return f"inv({render(t.key)})"
    return f"{t.fn}({','.join(render(a) for a in t.args)})"


def _render_key(k: Term) -> str:
    s = render(k)
    return f"({s})" if k.tag == T_PAIR else s


# substitutions ------------------------------------------------------------


def apply(sub: Mapping[Var, Term], t: Term) -> Term:
    """Simultaneous replacement of the bound variables of ``t``."""
    if t.ground or not sub:
        return t
    return _apply(sub, t)


def _apply(sub, t):
    if t.ground:
        return t
    tag = t.tag
    if tag == T_VAR:
        return sub.get(t, t)
    if tag == T_PAIR:
        a, b = _apply(sub, t._a), _apply(sub, t._b)
        return t if a is t._a and b is t._b else Pair(a, b)
    if tag == T_SYM:
        a, b = _apply(sub, t._a), _apply(sub, t._b)
        return t if a is t._a and b is t._b else SymEnc(a, b)
    if tag == T_ASYM:
        a, b = _apply(sub, t._a), _apply(sub, t._b)
        return t if a is t._a and b is t._b else AsymEnc(a, b)
    if tag == T_INV:
        k = _apply(sub, t.key)
        return t if k is t.key else Inv(k)
    args = tuple(_apply(sub, a) for a in t.args)
    if all(x is y for x, y in zip(args, t.args)):
        return t
    return Apply(t.fn, args)


def compose(outer: Mapping[Var, Term], inner: Mapping[Var, Term]) -> dict:
    """Substitution equal to applying ``inner`` first, then ``outer``."""
    out = {}
    for v, t in inner.items():
        t = apply(outer, t)
        if t != v:
            out[v] = t
    for v, t in outer.items():
        if v not in inner:
            out[v] = t
    for v, t in out.items():
        for w in t.vars():
            if w == v:
                raise ValueError(f"occurs check fails for {render(v)} in composition")
            if w in out:
                raise ValueError(f"composition is not idempotent at {render(w)}")
    return out


def _walk(t, bind):
    # resolve the head of t under triangular bindings
    while True:
        if t.tag == T_VAR:
            u = bind.get(t)
            if u is None:
                return t
            t = u
        elif t.tag == T_INV and not t.ground:
            k = _walk(t.key, bind)
            if k is t.key:
                return t
            return Inv(k)
        else:
            return t


def _occurs(v, t, bind) -> bool:
    stack = [t]
    while stack:
        u = stack.pop()
        if u.ground:
            continue
        if u.tag == T_VAR:
            if u == v:
                return True
            w = bind.get(u)
            if w is not None:
                stack.append(w)
        else:
            stack.extend(children(u))
    return False


def _resolve(t, bind):
    if t.ground:
        return t
    if t.tag == T_VAR:
        u = bind.get(t)
        return t if u is None else _resolve(u, bind)
    kids = children(t)
    new = tuple(_resolve(k, bind) for k in kids)
    if all(x is y for x, y in zip(new, kids)):
        return t
    return rebuild(t, new)


def _fits(v: Var, t: Term) -> bool:
    k = v.kind
    return k is None or t.tag == T_ATOM and t.kind == k


def unify(s: Term, t: Term, sub: Optional[Mapping[Var, Term]] = None) -> Optional[dict]:
    """Most general unifier of ``s`` and ``t`` extending ``sub``, or None.

    Variables of ``s`` are preferred as binding targets.  ``Inv(X)`` against a
    term that is not an inverse binds ``X`` to the inverse of that term.  A
    typed variable only binds to an atom or variable of its own kind.
    """
    bind = dict(sub) if sub else {}
    stack = [(s, t)]
    while stack:
        a, b = stack.pop()
        if a is b:
            continue
        a = _walk(a, bind)
        b = _walk(b, bind)
        if a == b:
            continue
        if a.tag == T_VAR and b.tag == T_VAR:
            if a.kind is not None and b.kind is None:
                a, b = b, a
            elif a.kind != b.kind and b.kind is not None:
                return None
            bind[a] = b
            continue
        if a.tag == T_VAR:
            if not _fits(a, b) or _occurs(a, b, bind):
                return None
            bind[a] = b
            continue
        if b.tag == T_VAR:
            if not _fits(b, a) or _occurs(b, a, bind):
                return None
            bind[b] = a
            continue
        if a.tag == T_INV and a.key.tag == T_VAR and b.tag != T_INV:
            stack.append((a.key, Inv(b)))
            continue
        if b.tag == T_INV and b.key.tag == T_VAR and a.tag != T_INV:
            stack.append((Inv(a), b.key))
            continue
        if a.tag != b.tag or a.ground and b.ground:
            return None
        if a.tag == T_APPLY:
            if a.fn != b.fn or len(a.args) != len(b.args):
                return None
            stack.extend(zip(a.args, b.args))
        elif a.tag == T_INV:
            stack.append((a.key, b.key))
        elif a.tag == T_ATOM:
            return None
        else:
            stack.append((a._b, b._b))
            stack.append((a._a, b._a))
    out = {}
    for v in bind:
        r = _resolve(v, bind)
        if r != v:
            out[v] = r
    return out


# ground derivation closure (test oracle) -----------------------------------


def _composable(t: Term, have, public_functions) -> bool:
    tag = t.tag
    if tag == T_ATOM:
        return t.kind == AGENT
    if tag in (T_PAIR, T_SYM, T_ASYM):
        return t._a in have and t._b in have
    if tag == T_APPLY:
        return t.fn in public_functions and all(a in have for a in t.args)
    return False


def ground_closure(
    knowledge: Iterable[Term],
    depth_bound: Optional[int] = None,
    *,
    public_functions: Iterable[str] = (),
    targets: Iterable[Term] = (),
) -> frozenset:
    """Least fixpoint of Dolev-Yao analysis and bounded composition.

    Composition is restricted to subterms of ``knowledge`` and ``targets``
    whose depth is at most ``depth_bound`` (default: two more than the
    deepest input term).  A ground target is derivable iff it is in the
    result, since normal derivations only compose subterms of the goal and
    the knowledge.
    """
    knowledge = list(knowledge)
    targets = list(targets)
    for t in knowledge + targets:
        if not t.ground:
            raise ValueError(f"ground_closure needs ground terms, got {render(t)}")
    fns = frozenset(public_functions)
    if depth_bound is None:
        depth_bound = 2 + max((t.depth for t in knowledge + targets), default=0)
    universe = set()
    for t in knowledge + targets:
        universe.update(subterms(t))
    candidates = sorted((u for u in universe if u.depth <= depth_bound), key=lambda u: u.depth)
    have = set(knowledge)
    have.update(u for u in universe if u.tag == T_ATOM and u.kind == AGENT)
    changed = True
    while changed:
        changed = False
        for t in list(have):
            tag = t.tag
            if tag == T_PAIR:
                new = [t._a, t._b]
            elif tag == T_SYM and t._a in have:
                new = [t._b]
            elif tag == T_ASYM and Inv(t._a) in have:
                new = [t._b]
            else:
                continue
            for n in new:
                if n not in have:
                    have.add(n)
                    changed = True
        for u in candidates:
            if u not in have and _composable(u, have, fns):
                have.add(u)
                changed = True
    return frozenset(have)


def derivable(
    goal: Term,
    knowledge: Iterable[Term],
    *,
    public_functions: Iterable[str] = (),
    depth_bound: Optional[int] = None,
) -> bool:
    """Brute-force ground derivability via :func:`ground_closure`."""
    return goal in ground_closure(
        knowledge, depth_bound, public_functions=public_functions, targets=[goal]
    )


class FreshCounter:
    """Monotone, thread-safe index source for variables and fresh values."""

    def __init__(self, start: int = 1):
        self._it = itertools.count(start)
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            return next(self._it)
