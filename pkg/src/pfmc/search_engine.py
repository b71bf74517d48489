"""Lazy search tree, depth pruning and the sequential reference search."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .kernel import make_backend

ATTACK = "attack-found"
NO_ATTACK = "no-attack-within-depth"


@dataclass
class RunStats:
    tasks_spawned: int = 0
    tasks_converted: int = 0
    tasks_fizzled: int = 0
    max_inflight: int = 0
    wall_elapsed: float = 0.0
    per_worker_busy: list = field(default_factory=list)
    nodes_expanded: int = 0
    nodes_pruned_unvisited: int = 0
    peak_tracked_bytes: int = 0
    max_outstanding: int = 0  # most speculative children pending at one node
    nodes_visited: int = 0
    spawn_sites: list = field(default_factory=list)  # (path, fuel allotted) per fuel-carrying task

    def as_dict(self) -> dict:
        return {
            "tasks_spawned": self.tasks_spawned,
            "tasks_converted": self.tasks_converted,
            "tasks_fizzled": self.tasks_fizzled,
            "max_inflight": self.max_inflight,
            "wall_elapsed": self.wall_elapsed,
            "per_worker_busy": list(self.per_worker_busy),
            "nodes_expanded": self.nodes_expanded,
            "nodes_pruned_unvisited": self.nodes_pruned_unvisited,
            "peak_tracked_bytes": self.peak_tracked_bytes,
            "max_outstanding": self.max_outstanding,
            "nodes_visited": self.nodes_visited,
        }

    @property
    def conversion_ratio(self) -> float:
        return self.tasks_converted / self.tasks_spawned if self.tasks_spawned else 0.0


@dataclass
class VerificationResult:
    verdict: str
    attack: object
    stats: RunStats

    @property
    def attack_found(self) -> bool:
        return self.verdict == ATTACK


class MemoryMeter:
    """Bytes of nodes created and not yet retired by a traversal, a
    stand-in for residency."""

    def __init__(self):
        self._lock = threading.Lock()
        self.live = 0
        self.peak = 0

    def add(self, n: int):
        with self._lock:
            self.live += n
            if self.live > self.peak:
                self.peak = self.live

    def sub(self, n: int):
        with self._lock:
            self.live -= n

    def reset(self):
        with self._lock:
            self.peak = self.live


class Cell:
    """One node of the shared tree: its state and memoised children.

    Exactly one expansion runs per cell; concurrent forcers wait on the
    lock and see the memo.  ``release`` drops the children; afterwards only
    a forcer passing ``revive`` (a later traversal) expands the cell again,
    speculative work skips it.  The remaining slots are scratch space for
    the evaluation strategies.
    """

    __slots__ = ("node", "lock", "kids", "expand_count", "released", "live", "path",
                 "check_run", "check_val", "task", "window", "subnodes", "__weakref__")

    def __init__(self, node, path: tuple = ()):
        self.node = node
        self.lock = threading.Lock()
        self.kids = None
        self.expand_count = 0
        self.released = False
        self.live = False  # counted by a meter
        self.path = path
        self.check_run = None
        self.check_val = None
        self.task = None
        self.window = None
        self.subnodes = None

    def force(self, backend, meter: Optional[MemoryMeter] = None, revive: bool = True,
              hook=None):
        """``(children, expanded_here)``; children are None for a released
        cell unless ``revive``.  ``hook(cell, kids)`` runs after an expansion
        and before other forcers can see the children."""
        kids = self.kids
        if kids is not None or (self.released and not revive):
            return kids, False
        with self.lock:
            if self.kids is not None or (self.released and not revive):
                return self.kids, False
            self.released = False
            states = backend.expand(self.node)
            path = self.path
            kids = [Cell(s, path + (i,)) for i, s in enumerate(states)]
            self.expand_count += 1
            if meter is not None:
                for c in kids:
                    c.live = True
                meter.add(sum(s.nbytes() for s in states))
            if hook is not None:
                hook(self, kids)
            self.kids = kids
            return kids, True

    def release(self, meter: Optional[MemoryMeter] = None):
        """Retire this node: drop its children and stop counting it."""
        with self.lock:
            if self.live and meter is not None:
                meter.sub(self.node.nbytes())
            self.live = False
            self.kids = None
            self.released = True


class SearchTree:
    """Rose tree of states whose children are computed on first demand.

    A tree is a view (``limit``, the pruning depth, ``None`` for unbounded)
    of a shared :class:`Cell`; views made by :func:`prune` share the cells,
    so every view observes one expansion.  ``node`` is the backend's handle
    and ``state`` the corresponding ``SymbolicState``.
    """

    __slots__ = ("cell", "backend", "limit", "meter")

    def __init__(self, cell: Cell, backend, limit: Optional[int] = None,
                 meter: Optional[MemoryMeter] = None):
        self.cell = cell
        self.backend = backend
        self.limit = limit
        self.meter = meter

    @property
    def node(self):
        return self.cell.node

    @property
    def state(self):
        return self.backend.state(self.cell.node)

    @property
    def depth(self) -> int:
        return self.cell.node.depth

    @property
    def path(self) -> tuple:
        return self.cell.path

    @property
    def forced(self) -> bool:
        return self.cell.kids is not None

    @property
    def cut(self) -> bool:
        """Children are cut here (a choice node never is: it adds no step)."""
        node = self.cell.node
        return self.limit is not None and node.depth >= self.limit and not node.is_choice

    def children(self) -> list:
        """Child trees; forcing them is memoised."""
        if self.cut:
            return []
        kids, _ = self.cell.force(self.backend, self.meter)
        return [SearchTree(c, self.backend, self.limit, self.meter) for c in kids]

    def release(self):
        """Drop the memoised children (the traversal is done with them)."""
        self.cell.release(self.meter)

    def check(self, goals=None):
        return self.backend.check(self.cell.node, goals)

    @property
    def expand_count(self) -> int:
        return self.cell.expand_count


def build_tree(initial, meter: Optional[MemoryMeter] = None, backend=None) -> SearchTree:
    """Root holding ``initial``; no successor has been computed yet.

    ``backend`` is a backend object, ``"native"``, ``"python"`` or None for
    the default (the compiled core when it is available).
    """
    if backend is None or isinstance(backend, str):
        backend = make_backend(initial, backend)
    if meter is None:
        meter = MemoryMeter()
    cell = Cell(backend.root)
    cell.live = True
    meter.add(backend.root.nbytes())
    return SearchTree(cell, backend, None, meter)


def prune(tree: SearchTree, max_depth: int) -> SearchTree:
    """View of ``tree`` whose nodes at depth ``max_depth`` have no children."""
    limit = max_depth if tree.limit is None else min(tree.limit, max_depth)
    return SearchTree(tree.cell, tree.backend, limit, tree.meter)


def search_sequential(tree: SearchTree, goals=None, max_depth: Optional[int] = None,
                      release: bool = True) -> VerificationResult:
    """Depth-first, left-to-right search of ``prune(tree, max_depth)``.

    Returns the first attack in preorder.  With ``release`` the children of a
    visited node are dropped from the shared tree, so memory follows the DFS
    stack.
    """
    t0 = time.perf_counter()
    if max_depth is not None:
        tree = prune(tree, max_depth)
    stats = RunStats()
    meter = tree.meter
    if meter is not None:
        meter.reset()
    stack = [tree]
    attack = None
    while stack:
        node = stack.pop()
        stats.nodes_visited += 1
        attack = node.check(goals)
        if attack is not None:
            break
        if node.cut:
            stats.nodes_pruned_unvisited += 1
            if release:
                node.release()
            continue
        kids = node.children()
        stats.nodes_expanded += 1
        if release:
            node.release()
        stack.extend(reversed(kids))
    stats.wall_elapsed = time.perf_counter() - t0
    stats.per_worker_busy = [stats.wall_elapsed]
    if meter is not None:
        stats.peak_tracked_bytes = meter.peak
    verdict = ATTACK if attack is not None else NO_ATTACK
    return VerificationResult(verdict, attack, stats)


def count_nodes(tree: SearchTree, max_depth: int) -> int:
    """Nodes of ``prune(tree, max_depth)``, forcing the whole pruned tree."""
    n = 0
    stack = [prune(tree, max_depth)]
    while stack:
        t = stack.pop()
        n += 1
        stack.extend(t.children())
    return n
