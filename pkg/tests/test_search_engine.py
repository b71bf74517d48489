import threading

import pytest

from pfmc.anb_frontend import instantiate_sessions, load_corpus, parse_anb
from pfmc.kernel import NATIVE_AVAILABLE, SyntheticBackend
from pfmc.search_engine import (
    ATTACK,
    NO_ATTACK,
    MemoryMeter,
    build_tree,
    count_nodes,
    prune,
    search_sequential,
)
from pfmc.transition_system import successors

from oracles import enumerate_tree

TOY = """Protocol: Toy
Types: Agent A,B;
       Number N,M
Knowledge: A: A,B;
           B: A,B
Actions:
A -> B: N
B -> A: N,M
Goals:
B authenticates A on N
"""

BACKENDS = ["python"] + (["native"] if NATIVE_AVAILABLE else [])


def toy_root():
    return instantiate_sessions(parse_anb(TOY), 1)


def shape(state):
    return (len(state.trace), tuple(c.pos for c in state.cursors), state.knowledge)


@pytest.mark.parametrize("backend", BACKENDS)
def test_root_is_unforced(backend):
    root = toy_root()
    t = build_tree(root, backend=backend)
    assert not t.forced and t.expand_count == 0
    assert shape(t.state) == shape(root)


@pytest.mark.parametrize("backend", BACKENDS)
def test_forcing_is_idempotent(backend):
    t = build_tree(toy_root(), backend=backend)
    first = t.children()
    second = t.children()
    assert [c.node for c in first] == [c.node for c in second]
    assert t.expand_count == 1


@pytest.mark.parametrize("backend", BACKENDS)
def test_depth_two_matches_direct_enumeration(backend):
    root = toy_root()
    t = build_tree(root, backend=backend)
    direct = []
    for alt in successors(root):
        for kid in successors(alt):
            direct.append([shape(g) for g in successors(kid)])
    built = []
    for alt in t.children():
        for kid in alt.children():
            built.append([shape(g.state) for g in kid.children()])
    assert built == direct


def test_concurrent_forcing_expands_once():
    backend = SyntheticBackend.balanced(6, 3)
    t = build_tree(backend.root, backend=backend)
    barrier = threading.Barrier(16)
    seen = []

    def hammer():
        barrier.wait()
        stack = [t]
        while stack:
            n = stack.pop()
            kids = n.children()
            seen.append((n.path, tuple(k.cell for k in kids)))
            stack.extend(kids)

    ts = [threading.Thread(target=hammer) for _ in range(16)]
    for th in ts:
        th.start()
    for th in ts:
        th.join()
    stack = [t.cell]
    while stack:
        c = stack.pop()
        assert c.expand_count == 1
        stack.extend(c.kids or ())
    by_path = {}
    for path, kids in seen:
        assert by_path.setdefault(path, kids) == kids


def test_prune_zero_on_plain_root():
    backend = SyntheticBackend.balanced(3, 4)
    t = prune(build_tree(backend.root, backend=backend), 0)
    assert t.children() == []
    assert count_nodes(t, 0) == 1


def test_prune_zero_on_choice_root_keeps_alternatives():
    # a choice node adds no step: its alternatives sit at depth 0
    t = build_tree(instantiate_sessions(load_corpus("kerberos"), 1))
    p = prune(t, 0)
    kids = p.children()
    assert kids and all(k.depth == 0 and k.children() == [] for k in kids)


def test_prune_only_cuts():
    backend = SyntheticBackend.balanced(3, 5)
    t = build_tree(backend.root, backend=backend)
    full = enumerate_tree(backend, 5)
    for d in range(6):
        p = prune(t, d)
        assert count_nodes(p, 5) == sum(3 ** i for i in range(d + 1))
        assert count_nodes(p, 5) <= count_nodes(t, 5) == full[()] + 1
    # pruning twice keeps the smaller bound
    assert prune(prune(t, 2), 4).limit == 2


@pytest.mark.parametrize("d", range(0, 9))
def test_prune_equals_depth_bound_on_sso(d):
    root = instantiate_sessions(load_corpus("sso_flawed"), 2)
    a = search_sequential(prune(build_tree(root), d))
    b = search_sequential(build_tree(root), max_depth=d)
    assert a.verdict == b.verdict
    assert a.stats.nodes_visited == b.stats.nodes_visited
    if a.attack is not None:
        assert a.attack.witness_state.trace == b.attack.witness_state.trace


def test_depth_zero_is_never_an_attack():
    for name in ("sso_flawed", "kerberos"):
        res = search_sequential(build_tree(instantiate_sessions(load_corpus(name), 2)), max_depth=0)
        assert res.verdict == NO_ATTACK


def test_first_attack_in_preorder():
    backend = SyntheticBackend.balanced(3, 3, attack=lambda p: p in {(2,), (0, 1, 2), (1, 0)})
    res = search_sequential(build_tree(backend.root, backend=backend))
    assert res.verdict == ATTACK and res.attack == (0, 1, 2)
    res = search_sequential(build_tree(backend.root, backend=backend), max_depth=2)
    assert res.attack == (1, 0)


def test_release_keeps_memory_to_the_stack():
    backend = SyntheticBackend.balanced(4, 6)
    t = build_tree(backend.root, backend=backend)
    res = search_sequential(t)
    # the DFS holds one sibling list per level, never the whole tree
    full = sum(64 + 8 * len(p) for p in enumerate_tree(backend, 6))
    assert 0 < res.stats.peak_tracked_bytes < full / 20
    assert t.meter.live == 0
    # a released tree can be searched again
    again = search_sequential(t)
    assert again.stats.nodes_visited == res.stats.nodes_visited == 4 ** 7 // 3


def test_meter_reset_keeps_live_bytes():
    m = MemoryMeter()
    m.add(10)
    m.add(5)
    m.sub(12)
    assert m.peak == 15 and m.live == 3
    m.reset()
    assert m.peak == 3
