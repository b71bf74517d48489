"""The compiled core against the Python reference, node for node."""

import os
import subprocess
import sys

import pytest

from pfmc.anb_frontend import CORPUS, instantiate_sessions, load_corpus
from pfmc.kernel import NATIVE_AVAILABLE, PythonBackend, decode, encode, make_backend
from pfmc.search_engine import build_tree, search_sequential
from pfmc.term_algebra import AGENT, Apply, AsymEnc, Atom, Inv, Pair, SymEnc, Var, render

needs_native = pytest.mark.skipif(not NATIVE_AVAILABLE, reason="compiled core not built")

DEPTH = {"sso_flawed": 5, "sso_standard": 5, "kerberos": 6, "tls": 5}


def fingerprint(state):
    """Everything a state carries that later steps or checks can observe."""
    sub = state.substitution
    return (
        state.depth,
        tuple(c.pos for c in state.cursors),
        tuple(render(t) for t in state.knowledge),
        tuple((lv, render(g)) for lv, g in state.store.entries),
        tuple(sorted(str(e) for e in state.events)),
        tuple((r.role, r.session) for r in state.trace),
        tuple(render(v) + "=" + render(sub[v]) for v in sorted(sub, key=lambda v: v.index)),
    )


def walk(backend, depth):
    out = []
    stack = [backend.root]
    while stack:
        n = stack.pop()
        st = backend.state(n)
        out.append((fingerprint(st) if not st.is_choice else "choice",
                    backend.check(n) is not None))
        if n.depth >= depth and not n.is_choice:
            continue
        stack.extend(reversed(backend.expand(n)))
    return out


def test_term_encoding_round_trips():
    t = Pair(AsymEnc(Inv(Apply("pk", [Atom("a", AGENT)])), Var("X", 3, "number")),
             SymEnc(Atom("k"), Var("Y", 4)))
    assert decode(encode(t), {}) == t


@needs_native
@pytest.mark.parametrize("name", CORPUS)
def test_native_tree_equals_reference(name):
    root = instantiate_sessions(load_corpus(name), 2)
    py = walk(PythonBackend(root), DEPTH[name])
    nat = walk(make_backend(root, "native"), DEPTH[name])
    assert len(py) == len(nat)
    assert py == nat


@needs_native
def test_native_attack_equals_reference():
    root = instantiate_sessions(load_corpus("sso_flawed"), 2)
    a = search_sequential(build_tree(root, backend="python"), max_depth=7)
    b = search_sequential(build_tree(root, backend="native"), max_depth=7)
    assert a.verdict == b.verdict == "attack-found"
    assert a.stats.nodes_visited == b.stats.nodes_visited
    assert fingerprint(a.attack.witness_state) == fingerprint(b.attack.witness_state)
    assert a.attack.goal_index == b.attack.goal_index


def test_backend_selection_by_environment():
    code = "from pfmc.kernel import default_backend; print(default_backend())"
    env = dict(os.environ, PFMC_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend_rejected():
    root = instantiate_sessions(load_corpus("tls"), 1)
    with pytest.raises(ValueError):
        make_backend(root, "fortran")
