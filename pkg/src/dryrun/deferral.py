"""Register-access deferral: per-thread queues, symbols, commits.

Inside a hot scope, reads return fresh symbols instead of stalling and
writes queue their (possibly symbolic) value expressions.  A flush drains
the queue into a Commit that travels to the device in one round trip; the
device answers with the concrete read values, and resolution replaces
every expression those symbols reach.

Symbolic register *addresses* are not supported: the driver model only
ever symbolizes values, and anything else indicates a workload bug.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ArityMismatch, QueueOverflow
from .exprs import eval_expr, expr_depth, expr_symbols

DEFAULT_QUEUE_CAP = 4096
DEFAULT_EXPR_DEPTH = 64

# commit trigger classification
CONTROL_DEP = "control-dep"
KERNEL_LOCK = "kernel-api(lock)"
KERNEL_UNLOCK = "kernel-api(unlock)"
KERNEL_SCHED = "kernel-api(sched)"
EXPLICIT_DELAY = "explicit-delay"
SCOPE_EXIT = "scope-exit"
EXTERN = "extern"
LOOP_OFFLOAD = "loop-offload"


@dataclass(frozen=True)
class ReadEntry:
    addr: int
    sym: int


@dataclass(frozen=True)
class WriteEntry:
    addr: int
    expr: tuple  # over ("lit",v) and ("sym",id); ids may cite this commit's reads
    taint: frozenset = frozenset()  # speculative commit ids this value depends on


@dataclass
class Commit:
    commit_id: int
    site: tuple  # (thread id, pc of the flush trigger)
    reason: str
    entries: list  # ReadEntry | WriteEntry, program order
    category: str = "other"
    control_taint: frozenset = frozenset()

    def reads(self):
        return [e for e in self.entries if isinstance(e, ReadEntry)]

    def signature(self) -> tuple:
        return tuple(("r", e.addr) if isinstance(e, ReadEntry) else ("w", e.addr) for e in self.entries)

    def taint(self) -> frozenset:
        out = set(self.control_taint)
        for e in self.entries:
            if isinstance(e, WriteEntry):
                out |= e.taint
        return frozenset(out)


@dataclass
class CommitResult:
    commit_id: int
    read_values: list


class SymbolTable:
    """Run-global symbol allocator and binding store."""

    def __init__(self):
        self._next = 0
        self.bindings: dict[int, int] = {}
        self.owner: dict[int, int] = {}  # sym -> thread id

    def fresh(self, thread_id: int) -> int:
        self._next += 1
        self.owner[self._next] = thread_id
        return self._next

    def bind(self, sym: int, value: int) -> None:
        self.bindings[sym] = value

    def lookup(self, tag, payload):
        if tag == "sym" and payload in self.bindings:
            return self.bindings[payload]
        return (tag, payload)

    def reduce(self, expr):
        """Fold an expression under current bindings; int when fully bound."""
        if isinstance(expr, int):
            return expr
        return eval_expr(expr, self.lookup)


class DeferralQueue:
    """One queue per driver thread; drains in program order."""

    def __init__(self, thread_id: int, symbols: SymbolTable,
                 cap: int = DEFAULT_QUEUE_CAP, max_depth: int = DEFAULT_EXPR_DEPTH):
        self.thread_id = thread_id
        self.symbols = symbols
        self.cap = cap
        self.max_depth = max_depth
        self.entries: list = []

    def __len__(self):
        return len(self.entries)

    def enqueue_read(self, addr: int):
        """Queue a read; returns its placeholder expression."""
        self._check_cap()
        sym = self.symbols.fresh(self.thread_id)
        self.entries.append(ReadEntry(addr, sym))
        return ("sym", sym)

    def enqueue_write(self, addr: int, expr, taint=frozenset()) -> None:
        self._check_cap()
        if isinstance(expr, int):
            expr = ("lit", expr)
        if expr_depth(expr) > self.max_depth:
            raise QueueOverflow(f"expression depth beyond {self.max_depth}")
        self.entries.append(WriteEntry(addr, expr, frozenset(taint)))

    def _check_cap(self):
        if len(self.entries) >= self.cap:
            raise QueueOverflow(
                f"thread {self.thread_id} queued {self.cap} accesses without a commit trigger"
            )


class CommitBuilder:
    """Assigns run-monotone commit ids and builds commits from queues."""

    def __init__(self):
        self._next_id = 0

    def flush(self, queue: DeferralQueue, reason: str, site: tuple,
              category: str = "other", control_taint=frozenset()):
        """Drain the queue into a Commit; empty queues yield None."""
        if not queue.entries:
            return None
        self._next_id += 1
        commit = Commit(
            commit_id=self._next_id,
            site=site,
            reason=reason,
            entries=queue.entries,
            category=category,
            control_taint=frozenset(control_taint),
        )
        queue.entries = []
        return commit


def resolve(symbols: SymbolTable, commit: Commit, result: CommitResult, vars_store=None) -> None:
    """Bind each read symbol to its concrete value and fold dependent state.

    ``vars_store`` maps names to values; entries holding expressions over
    now-bound symbols collapse to concrete ints.
    """
    reads = commit.reads()
    if len(reads) != len(result.read_values):
        raise ArityMismatch(
            f"commit {commit.commit_id}: {len(reads)} reads but {len(result.read_values)} values"
        )
    for entry, value in zip(reads, result.read_values):
        symbols.bind(entry.sym, value)
    if vars_store is not None:
        for name, value in list(vars_store.items()):
            if not isinstance(value, int):
                vars_store[name] = symbols.reduce(value)


def wire_expr(expr, local_syms: dict):
    """Rewrite symbol ids to commit-local read indexes for the wire.

    ``local_syms`` maps symbol id -> index of the read within the commit.
    Symbols of other commits must have been bound before flushing; finding
    one here means the protocol let a symbol escape its commit.
    """
    tag = expr[0]
    if tag == "lit":
        return expr
    if tag == "sym":
        if expr[1] not in local_syms:
            raise ArityMismatch(f"symbol {expr[1]} is not produced by this commit")
        return ("sym", local_syms[expr[1]])
    return (tag, wire_expr(expr[1], local_syms), wire_expr(expr[2], local_syms))


def unresolved_symbols(expr) -> set:
    if isinstance(expr, int):
        return set()
    return expr_symbols(expr)
