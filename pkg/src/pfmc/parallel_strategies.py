"""Parallel evaluation strategies over the lazy search tree.

A strategy never changes what is searched, only who computes it first.
The coordinating thread runs the same depth-first, left-to-right traversal
as :func:`search_sequential`; speculative tasks on a work-stealing pool
force node expansions and goal checks ahead of it through the shared memo
cells.  In deterministic mode the verdict and the attack are therefore the
sequential ones; in fast mode the first attack any thread finds wins.

Task accounting follows spark semantics: a spawned task is *converted*
when it computes something first (a goal check or an expansion) and
*fizzled* when the traversal consumed its node first, it found nothing to
do, or the run ended before it was picked up.
"""

from __future__ import annotations

import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .search_engine import (
    ATTACK,
    NO_ATTACK,
    Cell,
    RunStats,
    SearchTree,
    VerificationResult,
    prune,
)

KINDS = ("sequential", "par-tree-buffer", "enhanced-buffer", "chunk-subtrees",
         "hybrid-subtrees", "annotated-hybrid")
DEFAULT_BUFFER = 50
DEFAULT_PAR_DEPTH = 3
DEFAULT_FUEL = 400

_USES = {
    "sequential": (),
    "par-tree-buffer": ("par_depth", "buffer"),
    "enhanced-buffer": ("buffer",),
    "chunk-subtrees": ("fuel",),
    "hybrid-subtrees": ("fuel", "buffer"),
    "annotated-hybrid": ("fuel", "buffer"),
}
_DEFAULTS = {"par_depth": DEFAULT_PAR_DEPTH, "buffer": DEFAULT_BUFFER, "fuel": DEFAULT_FUEL}


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    workers: int = 1
    par_depth: Optional[int] = None
    buffer: Optional[int] = None
    fuel: Optional[int] = None

    def __post_init__(self):
        if self.kind not in _USES:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        uses = _USES[self.kind]
        for name in ("par_depth", "buffer", "fuel"):
            v = getattr(self, name)
            if name in uses:
                if v is None or v < 1:
                    raise ValueError(f"{self.kind} needs a positive {name}")
            elif v is not None:
                raise ValueError(f"{self.kind} takes no {name}")

    @classmethod
    def make(cls, kind: str, workers: int = 1, **params) -> "StrategyConfig":
        """Config with defaults for the parameters ``kind`` uses; the others
        are dropped."""
        uses = _USES.get(kind, ())
        kw = {}
        for name in uses:
            v = params.get(name)
            kw[name] = _DEFAULTS[name] if v is None else v
        return cls(kind, workers, **kw)


# ---------------------------------------------------------------------------
# tasks and the pool

_NEW, _PENDING, _RUNNING, _DONE, _CANCELLED, _DROPPED = range(6)


class _Task:
    __slots__ = ("state", "window", "cell")

    def __init__(self, cell: Optional[Cell], window: Optional["_Window"] = None):
        self.state = _NEW
        self.window = window
        self.cell = cell

    def execute(self, run: "_Run") -> bool:
        raise NotImplementedError


class _NodeTask(_Task):
    """Goal check and expansion of one node."""

    __slots__ = ()

    def execute(self, run):
        return run.evaluate(self.cell, True)[2]


class _SubtreeTask(_Task):
    """Depth-first evaluation of whole subtrees."""

    __slots__ = ("roots",)

    def __init__(self, roots: list, window=None):
        super().__init__(roots[0] if roots else None, window)
        self.roots = roots

    def execute(self, run):
        useful = False
        stack = list(reversed(self.roots))
        while stack and not run.stop:
            _, kids, worked = run.evaluate(stack.pop(), True)
            useful |= worked
            if kids:
                stack.extend(reversed(kids))
        return useful


class _HybridTask(_Task):
    """Evaluate a node, then apply the hybrid split below it."""

    __slots__ = ("fuel",)

    def __init__(self, cell, fuel: int, window=None):
        super().__init__(cell, window)
        self.fuel = fuel

    def execute(self, run):
        _, kids, worked = run.evaluate(self.cell, True)
        if kids:
            run.strategy.split(run, self.cell, self.fuel, kids)
        return worked


class _Window:
    """At most ``size`` outstanding tasks; the rest wait their turn."""

    __slots__ = ("size", "waiting", "outstanding")

    def __init__(self, size: int):
        self.size = size
        self.waiting = deque()
        self.outstanding = 0


SPECULATION_NICE = int(os.environ.get("PFMC_SPECULATION_NICE", "19"))


def _lower_priority(nice: int):
    # Speculation runs only when nothing demanded is runnable, like a spark
    # on an idle capability; thread-level nice is Linux-specific.
    try:
        os.setpriority(os.PRIO_PROCESS, threading.get_native_id(), nice)
    except (AttributeError, OSError):
        pass


class WorkPool:
    """Work-stealing pool of ``n`` threads.

    Each worker owns a deque it pushes and pops at the back; idle workers
    steal from the front of the coordinator's queue, then of the others.
    Workers run at OS priority ``nice`` (0 keeps the caller's).
    """

    def __init__(self, n: int, run: "_Run", nice: int = SPECULATION_NICE):
        self.run = run
        self.nice = nice
        self.cond = threading.Condition()
        self.queues = [deque() for _ in range(n + 1)]  # last one: coordinator
        self.queued = 0
        self.closing = False
        self.local = threading.local()
        self.busy = [0.0] * n
        self.threads = [threading.Thread(target=self._loop, args=(i,), daemon=True)
                        for i in range(n)]
        for t in self.threads:
            t.start()

    def submit(self, task: _Task):
        me = getattr(self.local, "index", len(self.queues) - 1)
        with self.cond:
            self.queues[me].append(task)
            self.queued += 1
            self.cond.notify()

    def _take(self, i: int) -> Optional[_Task]:
        own = self.queues[i]
        if own:
            return own.pop()
        n = len(self.queues)
        for k in range(n):
            q = self.queues[(n - 1 + k) % n]
            if q:
                return q.popleft()
        return None

    def _loop(self, i: int):
        self.local.index = i
        if self.nice:
            _lower_priority(self.nice)
        run = self.run
        t0 = time.thread_time()
        while True:
            with self.cond:
                while not self.queued and not self.closing:
                    self.cond.wait()
                if self.closing:
                    break
                task = self._take(i)
                self.queued -= 1
            run.execute(task)
        self.busy[i] = time.thread_time() - t0

    def close(self) -> list:
        """Stop the workers; returns the tasks never picked up."""
        with self.cond:
            self.closing = True
            self.cond.notify_all()
        for t in self.threads:
            t.join()
        left = [t for q in self.queues for t in q]
        for q in self.queues:
            q.clear()
        return left


# ---------------------------------------------------------------------------
# one evaluation run


class _Run:
    def __init__(self, tree: SearchTree, goals, strategy: "_Strategy", workers: int,
                 fast: bool, retain: bool):
        self.tree = tree
        self.backend = tree.backend
        self.limit = tree.limit
        self.meter = tree.meter
        self.goals = goals
        self.strategy = strategy
        self.fast = fast
        self.retain = retain
        self.token = object()
        self.stop = False
        self.found = None
        self.lock = threading.Lock()
        self.stats = RunStats()
        self.inflight = 0
        self.expanded = 0
        self.pool = WorkPool(workers - 1, self) if workers > 1 else None
        self._hook = self._on_expand

    # -- evaluation ---------------------------------------------------------

    def is_cut(self, cell: Cell) -> bool:
        node = cell.node
        return self.limit is not None and node.depth >= self.limit and not node.is_choice

    def _on_expand(self, cell: Cell, kids: list):
        with self.lock:
            self.expanded += 1
        self.strategy.on_expanded(self, cell, kids)

    def evaluate(self, cell: Cell, speculative: bool):
        """``(attack, children, worked)`` for ``cell``; children are None when
        a speculative caller meets a node the traversal already released."""
        if speculative and cell.released:
            return None, None, False
        worked = False
        token = self.token
        if cell.check_run is not token:
            with cell.lock:
                if cell.check_run is not token:
                    cell.check_val = self.backend.check(cell.node, self.goals)
                    cell.check_run = token
                    worked = True
        attack = cell.check_val
        if attack is not None:
            if worked and self.fast:
                self.report(attack)
            return attack, [], worked
        if self.is_cut(cell):
            return None, [], worked
        kids, here = cell.force(self.backend, self.meter, not speculative, self._hook)
        return None, kids, worked or here

    def report(self, attack):
        with self.lock:
            if self.found is None:
                self.found = attack

    # -- task bookkeeping ---------------------------------------------------

    def spawn(self, task: _Task, sites: Optional[tuple] = None):
        """Hand ``task`` to the pool (kept pending when there is no pool)."""
        with self.lock:
            self._spawn_locked(task, sites)

    def _spawn_locked(self, task: _Task, sites=None):
        st = self.stats
        task.state = _PENDING
        st.tasks_spawned += 1
        if sites is not None:
            st.spawn_sites.append(sites)
        self.inflight += 1
        if self.inflight > st.max_inflight:
            st.max_inflight = self.inflight
        if task.cell is not None:
            task.cell.task = task
        if self.pool is not None:
            self.pool.submit(task)

    def enqueue(self, window: _Window, task: _Task, sites: Optional[tuple] = None):
        with self.lock:
            if sites is not None:
                self.stats.spawn_sites.append(sites)
            window.waiting.append(task)
            self._pump(window)

    def _pump(self, window: _Window):
        while window.outstanding < window.size and window.waiting:
            task = window.waiting.popleft()
            if task.state == _DROPPED:
                continue
            window.outstanding += 1
            if window.outstanding > self.stats.max_outstanding:
                self.stats.max_outstanding = window.outstanding
            self._spawn_locked(task)

    def _settle(self, task: _Task, state: int, useful: bool):
        # caller holds the lock
        task.state = state
        self.inflight -= 1
        if useful:
            self.stats.tasks_converted += 1
        else:
            self.stats.tasks_fizzled += 1
        if task.cell is not None and task.cell.task is task:
            task.cell.task = None
        w = task.window
        if w is not None:
            w.outstanding -= 1
            self._pump(w)

    def execute(self, task: _Task):
        with self.lock:
            if task.state != _PENDING:
                return
            task.state = _RUNNING
        useful = False
        try:
            if not self.stop:
                useful = task.execute(self)
        finally:
            with self.lock:
                self._settle(task, _DONE, useful)

    def consume(self, cell: Cell):
        """The traversal reached ``cell``: its own pending task fizzles."""
        task = cell.task
        if task is None:
            return
        with self.lock:
            if task.state == _NEW:
                task.state = _DROPPED
            elif task.state == _PENDING:
                self._settle(task, _CANCELLED, False)

    # -- the traversal ------------------------------------------------------

    def traverse(self):
        stats = self.stats
        root = self.tree.cell
        self.strategy.start(self, root)
        stack = [root]
        attack = None
        while stack:
            if self.fast and self.found is not None:
                attack = self.found
                break
            cell = stack.pop()
            stats.nodes_visited += 1
            self.consume(cell)
            attack, kids, _ = self.evaluate(cell, False)
            if attack is not None:
                break
            if self.is_cut(cell):
                stats.nodes_pruned_unvisited += 1
                if not self.retain:
                    cell.release(self.meter)
                continue
            self.strategy.visited(self, cell, kids)
            if not self.retain:
                cell.release(self.meter)
            stack.extend(reversed(kids))
        if attack is None and self.fast and self.found is not None:
            attack = self.found
        return attack

    def finish(self):
        self.stop = True
        busy = []
        if self.pool is not None:
            left = self.pool.close()
            with self.lock:
                for t in left:
                    if t.state == _PENDING:
                        self._settle(t, _CANCELLED, False)
            busy = self.pool.busy
        with self.lock:
            # without workers every spawned task is still pending
            self.stats.tasks_fizzled += self.inflight
            self.inflight = 0
        return busy


# ---------------------------------------------------------------------------
# strategies


class _Strategy:
    def start(self, run: _Run, root: Cell):
        pass

    def on_expanded(self, run: _Run, cell: Cell, kids: list):
        pass

    def visited(self, run: _Run, cell: Cell, kids: list):
        pass


class _ParTreeBuffer(_Strategy):
    """Rounds of ``par_depth`` levels; the last level of a round goes
    through the round's window of ``buffer`` outstanding tasks."""

    def __init__(self, par_depth: int, buffer: int):
        self.par_depth = par_depth
        self.buffer = buffer

    def _spark(self, run, window, kids):
        p = self.par_depth
        for k in kids:
            k.window = window
            if len(k.path) % p == 0:
                run.enqueue(window, _NodeTask(k, window))
            else:
                run.spawn(_NodeTask(k))

    def on_expanded(self, run, cell, kids):
        if len(cell.path) % self.par_depth and cell.window is not None:
            self._spark(run, cell.window, kids)

    def visited(self, run, cell, kids):
        if len(cell.path) % self.par_depth == 0:
            self._spark(run, _Window(self.buffer), kids)


class _EnhancedBuffer(_Strategy):
    """The child list is built eagerly by whoever expands a node; its
    children are then sparked through a per-node window."""

    def __init__(self, buffer: int):
        self.buffer = buffer

    def on_expanded(self, run, cell, kids):
        if not kids:
            return
        w = _Window(self.buffer)
        for k in kids:
            run.enqueue(w, _NodeTask(k, w))


class _NaiveTree(_Strategy):
    """Every node sparked as soon as it exists (test-only)."""

    def on_expanded(self, run, cell, kids):
        for k in kids:
            run.spawn(_NodeTask(k))


def fuel_split(fuel: int, n: int) -> list:
    """Shares of ``fuel`` for ``n`` children: one unit stays with the node,
    child i gets ``(fuel-1)//n`` plus one for the first ``(fuel-1) % n``."""
    if n == 0:
        return []
    q, r = divmod(max(fuel - 1, 0), n)
    return [q + (1 if i < r else 0) for i in range(n)]


class _ChunkSubtrees(_Strategy):
    def __init__(self, fuel: int):
        self.fuel = fuel

    def start(self, run, root):
        work = [(root, self.fuel)]
        while work:
            cell, f = work.pop()
            if f <= 0:
                continue
            if f == 1:
                run.spawn(_SubtreeTask([cell]), (cell.path, 1))
                continue
            attack, kids, _ = run.evaluate(cell, False)
            if attack is not None or not kids:
                continue
            work.extend(reversed(list(zip(kids, fuel_split(f, len(kids))))))


class _HybridSubtrees(_Strategy):
    def __init__(self, fuel: int, buffer: int):
        self.fuel = fuel
        self.buffer = buffer

    def shares(self, fuel: int, kids: list) -> list:
        return fuel_split(fuel, len(kids))

    def start(self, run, root):
        attack, kids, _ = run.evaluate(root, False)
        if attack is None and kids:
            self.split(run, root, self.fuel, kids)

    def split(self, run, cell, fuel, kids):
        """``cell`` is evaluated; spend ``fuel`` below it."""
        if fuel <= 0 or not kids:
            return
        if fuel < self.buffer:
            run.spawn(_SubtreeTask(list(kids)), (cell.path, fuel))
            return
        w = _Window(self.buffer)
        for k, s in zip(kids, self.shares(fuel, kids)):
            if s >= 1:
                run.enqueue(w, _HybridTask(k, s - 1, w), (k.path, s))


class _AnnotatedHybrid(_HybridSubtrees):
    def shares(self, fuel, kids):
        out = []
        for k, s in zip(kids, fuel_split(fuel, len(kids))):
            cap = (k.subnodes if k.subnodes is not None else 0) + 1
            out.append(min(s, cap))
        return out


def _evaluate(tree: SearchTree, goals, max_depth: Optional[int], strategy: _Strategy,
              workers: int, fast: bool = False, retain: bool = False) -> VerificationResult:
    t0 = time.perf_counter()
    c0 = time.thread_time()
    if max_depth is not None:
        tree = prune(tree, max_depth)
    meter = tree.meter
    if meter is not None:
        meter.reset()
    run = _Run(tree, goals, strategy, workers, fast, retain)
    try:
        attack = run.traverse()
    finally:
        busy = run.finish()
    stats = run.stats
    stats.wall_elapsed = time.perf_counter() - t0
    stats.per_worker_busy = [time.thread_time() - c0] + list(busy)
    stats.nodes_expanded = run.expanded
    if meter is not None:
        stats.peak_tracked_bytes = meter.peak
    assert stats.tasks_converted + stats.tasks_fizzled <= stats.tasks_spawned
    return VerificationResult(ATTACK if attack is not None else NO_ATTACK, attack, stats)


# ---------------------------------------------------------------------------
# public operations


def eval_sequential(tree, goals=None, max_depth=None, workers: int = 1, fast: bool = False):
    """The traversal alone, through the same machinery as the strategies."""
    return _evaluate(tree, goals, max_depth, _Strategy(), 1, fast)


def eval_par_tree_buffer(tree, goals=None, max_depth=None, par_depth: int = DEFAULT_PAR_DEPTH,
                         buffer: int = DEFAULT_BUFFER, workers: int = 1, fast: bool = False):
    if par_depth < 1 or buffer < 1:
        raise ValueError("par_depth and buffer must be positive")
    return _evaluate(tree, goals, max_depth, _ParTreeBuffer(par_depth, buffer), workers, fast)


def eval_enhanced_buffer(tree, goals=None, max_depth=None, buffer: int = DEFAULT_BUFFER,
                         workers: int = 1, fast: bool = False):
    if buffer < 1:
        raise ValueError("buffer must be positive")
    return _evaluate(tree, goals, max_depth, _EnhancedBuffer(buffer), workers, fast)


def eval_chunk_subtrees(tree, goals=None, max_depth=None, fuel: int = DEFAULT_FUEL,
                        workers: int = 1, fast: bool = False):
    if fuel < 1:
        raise ValueError("fuel must be positive")
    return _evaluate(tree, goals, max_depth, _ChunkSubtrees(fuel), workers, fast)


def eval_hybrid_subtrees(tree, goals=None, max_depth=None, fuel: int = DEFAULT_FUEL,
                         buffer: int = DEFAULT_BUFFER, workers: int = 1, fast: bool = False):
    if fuel < 1 or buffer < 1:
        raise ValueError("fuel and buffer must be positive")
    return _evaluate(tree, goals, max_depth, _HybridSubtrees(fuel, buffer), workers, fast)


def eval_par_tree_naive(tree, goals=None, max_depth=None, workers: int = 1):
    """Every node sparked, nothing released: the unbounded baseline.

    Test-only; it holds the whole pruned tree, so use it on small instances.
    """
    return _evaluate(tree, goals, max_depth, _NaiveTree(), workers, retain=True)


class AnnotatedTree:
    """A tree forced to ``bound`` with descendant counts on every node."""

    def __init__(self, tree: SearchTree, bound: int, expanded: int = 0):
        self.tree = tree
        self.bound = bound
        self.expanded = expanded  # expansions the annotation performed

    @property
    def subnode_counts(self) -> dict:
        """Descendants within the bound, keyed by path from the root."""
        out = {}
        stack = [self.tree.cell]
        while stack:
            c = stack.pop()
            out[c.path] = c.subnodes
            if c.kids:
                stack.extend(c.kids)
        return out

    def count(self, path: tuple = ()) -> int:
        c = self.tree.cell
        for i in path:
            c = c.kids[i]
        return c.subnodes


def annotate_tree(tree: SearchTree, max_depth: int) -> AnnotatedTree:
    """Force ``prune(tree, max_depth)`` entirely and count descendants."""
    t = prune(tree, max_depth)
    backend, meter = t.backend, t.meter

    def cut(c):
        return c.node.depth >= t.limit and not c.node.is_choice

    expanded = 0
    stack = [(t.cell, False)]
    while stack:
        c, done = stack.pop()
        if done:
            c.subnodes = sum(1 + k.subnodes for k in c.kids) if c.kids else 0
            continue
        if cut(c):
            c.subnodes = 0
            continue
        kids, here = c.force(backend, meter)
        expanded += here
        stack.append((c, True))
        stack.extend((k, False) for k in reversed(kids))
    return AnnotatedTree(t, max_depth, expanded)


def eval_annotated_hybrid(annotated: AnnotatedTree, goals=None, max_depth=None,
                          fuel: int = DEFAULT_FUEL, buffer: int = DEFAULT_BUFFER,
                          workers: int = 1, fast: bool = False):
    """Hybrid evaluation where a child's share is capped by its size."""
    if fuel < 1 or buffer < 1:
        raise ValueError("fuel and buffer must be positive")
    if max_depth is None:
        max_depth = annotated.bound
    if max_depth > annotated.bound:
        raise ValueError("annotation bound is below the search depth")
    # the annotated tree is kept whole: it is reused across evaluations
    return _evaluate(annotated.tree, goals, max_depth, _AnnotatedHybrid(fuel, buffer), workers,
                     fast, retain=True)


def evaluate(tree: SearchTree, cfg: StrategyConfig, goals=None, max_depth=None,
             fast: bool = False) -> VerificationResult:
    """Run ``cfg`` on ``tree``; the sequential kind is the reference search."""
    from .search_engine import search_sequential

    k = cfg.kind
    if k == "sequential":
        return search_sequential(tree, goals, max_depth)
    if k == "par-tree-buffer":
        return eval_par_tree_buffer(tree, goals, max_depth, cfg.par_depth, cfg.buffer,
                                    cfg.workers, fast)
    if k == "enhanced-buffer":
        return eval_enhanced_buffer(tree, goals, max_depth, cfg.buffer, cfg.workers, fast)
    if k == "chunk-subtrees":
        return eval_chunk_subtrees(tree, goals, max_depth, cfg.fuel, cfg.workers, fast)
    if k == "hybrid-subtrees":
        return eval_hybrid_subtrees(tree, goals, max_depth, cfg.fuel, cfg.buffer, cfg.workers,
                                    fast)
    if max_depth is None:
        raise ValueError("annotated-hybrid needs a depth bound")
    t0 = time.perf_counter()
    c0 = time.thread_time()
    annotated = annotate_tree(tree, max_depth)
    c1 = time.thread_time()
    res = eval_annotated_hybrid(annotated, goals, max_depth, cfg.fuel, cfg.buffer, cfg.workers,
                                fast)
    # annotation is part of the cost
    res.stats.wall_elapsed = time.perf_counter() - t0
    res.stats.nodes_expanded += annotated.expanded
    res.stats.per_worker_busy[0] += c1 - c0
    return res
