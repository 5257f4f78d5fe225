"""Driver-side runtime: interprets workload threads against the remote device.

One deterministic event loop drives everything.  Threads execute at zero
virtual cost until they block (on a synchronous exchange, a lock, a
delay, the job-boundary memory barrier, or a speculation stall); the loop
then delivers the next timed event.  Scheduling among runnable threads is
round-robin by default or drawn from a seeded generator for interleaving
tests.

Modes:

* ``naive``  every register access is one synchronous round trip; memory
             sync ships the entire image raw.
* ``m``      naive register path, but metastate-only delta sync.
* ``md``     adds register-access deferral in hot scopes plus polling
             offload; commits are synchronous.
* ``mds``    adds k-confidence value prediction (asynchronous commits),
             poll predicate speculation, taint stalls, and replay-based
             misprediction recovery.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass

from . import memsync, recording as rec, transport
from .deferral import (
    CONTROL_DEP,
    EXPLICIT_DELAY,
    EXTERN,
    KERNEL_LOCK,
    KERNEL_SCHED,
    KERNEL_UNLOCK,
    LOOP_OFFLOAD,
    SCOPE_EXIT,
    CommitBuilder,
    CommitResult,
    DeferralQueue,
    ReadEntry,
    SymbolTable,
)
from .device import Device, RegisterAccess, TRANSFORM_ADD, TRANSFORM_CHECKSUM, TOUCH_WRITE, pack_descriptor
from .errors import (
    DivergenceError,
    DryrunError,
    ReleaseConsistencyViolation,
    SymbolLeak,
)
from .exprs import apply_op, eval_expr, expr_symbols
from .memsync import DATA, METASTATE, UNKNOWN, MemoryImage, RegionOwner
from .polling import OffloadRequest, run_loop_on_device
from .speculation import (
    CommitHistory,
    Prediction,
    SpeculationPolicy,
    TaintSet,
    may_issue,
    poll_signature,
    poll_site,
    validate,
)
from .workload import (
    Assign,
    BarrierNote,
    BranchIf,
    Delay,
    Extern,
    Label,
    LockOp,
    Poll,
    Program,
    Read,
    SubmitJob,
    Write,
)

MODES = ("naive", "m", "md", "mds")

_TRANSFORM_CODES = {"add": TRANSFORM_ADD, "checksum": TRANSFORM_CHECKSUM}
_ALL_CLASSES = {METASTATE, DATA, UNKNOWN}


class GpuShim:
    """Device-side endpoint: executes messages, logs interactions, forwards
    completion interrupts together with the device's metastate delta."""

    def __init__(self, device: Device, recorder: rec.Recorder, owner: RegionOwner, mode: str):
        self.device = device
        self.recorder = recorder
        self.owner = owner
        self.mode = mode
        self.channel: transport.Channel | None = None
        self.events: transport.EventQueue | None = None
        self.tag_thread = -1
        self.sync_classes = _ALL_CLASSES if mode == "naive" else {METASTATE, UNKNOWN}
        self._scheduled_done_at = None

    def handle(self, kind, payload, start):
        self.device.advance_to(start)
        tick = self.device.tick_cost["access"]
        if kind == transport.SYNC_ACCESS:
            is_write, addr, value = transport.decode_sync_access(payload)
            result = self.device.apply_access(RegisterAccess(is_write, addr, value))
            self._log_access(is_write, addr, value if is_write else result)
            self._maybe_schedule_completion()
            return transport.SYNC_ACCESS_RESP, struct.pack("<Q", result or 0), tick

        if kind == transport.COMMIT_REQUEST:
            commit_id, _site, entries = transport.decode_commit(payload)
            values: list = []
            for entry in entries:
                if entry[0] == "r":
                    value = self.device.apply_access(RegisterAccess(False, entry[1]))
                    self._log_access(False, entry[1], value)
                    values.append(value)
                else:
                    _, addr, expr = entry
                    concrete = eval_expr(expr, lambda tag, i: self._read_binding(values, i))
                    if not isinstance(concrete, int):
                        raise SymbolLeak(f"commit {commit_id} write to {addr:#x} kept a symbol")
                    self.device.apply_access(RegisterAccess(True, addr, concrete))
                    self._log_access(True, addr, concrete)
            self._maybe_schedule_completion()
            resp = transport.encode_commit_response(CommitResult(commit_id, values))
            return transport.COMMIT_RESPONSE, resp, tick * max(1, len(entries))

        if kind == transport.LOOP_OFFLOAD:
            addr, cmpop, operand, max_iters, backoff, _cap = transport.decode_loop_offload(payload)
            result, end = run_loop_on_device(
                self.device, addr, cmpop, operand, max_iters, backoff, start,
                on_read=lambda v: self._log_access(False, addr, v),
            )
            resp = transport.encode_loop_result(result.iterations, result.final_value, result.updated_vars)
            return transport.LOOP_RESULT, resp, end - start

        if kind == transport.MEM_PUSH:
            (job_seq,) = struct.unpack_from("<Q", payload, 0)
            delta = memsync.decode_delta(payload[8:])
            self.owner.push_applied()
            memsync.apply_delta(self.device.mem, delta)
            self.recorder.record(rec.LogEntry(rec.JOB_BOUNDARY, value=job_seq), self.tag_thread)
            self.recorder.record(rec.LogEntry(rec.MEM_PUSH, blob=payload[8:]), self.tag_thread)
            return transport.ACK, b"", tick * max(1, len(delta.records))

        if kind == transport.REPLAY_PREFIX:
            return transport.ACK, b"", 0

        raise DryrunError(f"device cannot handle message kind {kind}")

    @staticmethod
    def _read_binding(values, index):
        if index >= len(values):
            raise SymbolLeak(f"write references read #{index} that this commit never made")
        return values[index]

    def _log_access(self, is_write, addr, value):
        kind = rec.REG_WRITE if is_write else rec.REG_READ
        self.recorder.record(rec.LogEntry(kind, addr=addr, value=value or 0), self.tag_thread)

    def _maybe_schedule_completion(self):
        done_at = self.device.job_done_at
        if done_at is not None and done_at != self._scheduled_done_at and self.events is not None:
            self._scheduled_done_at = done_at
            self.events.schedule(done_at, lambda: self._on_job_complete(done_at))

    def _on_job_complete(self, done_at):
        device = self.device
        if device.job_fsm == "running" and device.job_done_at == done_at:
            device.advance_to(done_at)  # runs the job
        if device.job_fsm != "done":
            return  # stale event (recovery reset or already forwarded)
        self._scheduled_done_at = None
        self.recorder.record(rec.LogEntry(rec.IRQ), -1)
        job_seq = device.regs[device.dmap.addr_of("JOB_START")]

        delta = memsync.build_delta(device.mem, self.sync_classes,
                                    full=(self.mode == "naive"), raw=(self.mode == "naive"))
        memsync.commit_baseline(device.mem, self.sync_classes)
        blob = memsync.encode_delta(delta)
        self.recorder.record(rec.LogEntry(rec.MEM_PULL, blob=blob), -1)
        self.owner.pull_sent()
        device.finish_job()

        depart = max(done_at, self.channel.device_busy_until)
        self.channel.push_from_device(transport.IRQ_EVENT, struct.pack("<Q", job_seq), depart,
                                      count_round_trip=False)
        self.channel.push_from_device(transport.MEM_PULL, struct.pack("<Q", job_seq) + blob, depart)


@dataclass
class _PollProgress:
    loop: object
    operand: int
    iterations: int = 0


@dataclass
class _Outstanding:
    commit: object
    prediction: Prediction | None
    base_log_index: int
    ticket: object


class _StallToken:
    """Stall marker for tainted synchronous accesses and offload operands;
    the instruction re-executes once the origins validate."""

    def __init__(self, origins):
        self.origins = frozenset(origins)

    def taint(self):
        return self.origins


class ThreadCtx:
    def __init__(self, tid, body, queue):
        self.tid = tid
        self.body = body
        self.pc = 0
        self.queue = queue
        self.locals: dict = {}
        self.held_locks: set = set()
        self.blocked = None  # (kind, payload)
        self.finished = False
        self.poll: _PollProgress | None = None
        self.submit_cont = None  # (job, job_seq) after the memory push acked
        self.control_taints: list = []  # (end pc, frozenset of commit ids)
        self.last_scope = None

    def live_control_taint(self, taintset: TaintSet) -> frozenset:
        live = set()
        kept = []
        for end, origins in self.control_taints:
            origins = origins & taintset.inflight
            if self.pc < end and origins:
                kept.append((end, origins))
                live |= origins
        self.control_taints = kept
        return frozenset(live)


@dataclass
class RunReport:
    mode: str
    metrics: dict
    final_vars: dict  # thread id -> vars, plus "global"
    device_digest: str
    vars_digest: str
    externs: list
    recording: rec.Recording
    recorder: rec.Recorder
    error: str | None = None


class Run:
    """One full execution of a program against a fresh device."""

    def __init__(self, program: Program, device: Device, net: transport.NetworkConfig,
                 mode: str = "naive", policy: SpeculationPolicy | None = None,
                 history: CommitHistory | None = None, schedule_seed: int | None = None,
                 inject_commit_at: int | None = None, inject_poll_at: int | None = None,
                 restart_ticks: int = 0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.program = program
        self.device = device
        self.mode = mode
        self.policy = policy or SpeculationPolicy()
        self.history = history if history is not None else CommitHistory()
        self.inject_commit_at = inject_commit_at
        self.inject_poll_at = inject_poll_at
        self.restart_ticks = restart_ticks

        self.clock = transport.SimClock()
        self.events = transport.EventQueue(self.clock)
        self.owner = RegionOwner()
        self.recorder = rec.Recorder(
            device_map_hash=device.dmap.fingerprint(),
            workload_hash=program.fingerprint(),
            mode=mode,
            net_name=net.name,
            rtt_us=net.rtt_us,
            bandwidth_bps=net.bandwidth_bps,
        )
        self.shim = GpuShim(device, self.recorder, self.owner, mode)
        self.channel = transport.Channel(net, self.clock, self.events, self.shim.handle)
        self.shim.channel = self.channel
        self.shim.events = self.events
        self.channel.on_push = self._on_device_push

        self.driver_mem = MemoryImage("driver")
        self.symbols = SymbolTable()
        self.builder = CommitBuilder()
        self.taint = TaintSet()
        self.globals: dict = {}
        self.extern_log: list = []  # (log position, thread, value)
        self.zero_data = program.zero_data_mode()
        self.banned_sites: set = set()
        self.outstanding: dict = {}
        self.outstanding_polls: dict = {}
        self.pending_mispredict = None
        self.job_seq = 0
        self.feed = None  # [entries, pos, end] while replaying a recovery prefix
        self.feed_tags: list = []
        self._inject_candidates = 0
        self._rng = random.Random(schedule_seed) if schedule_seed is not None else None
        self._rr_next = 0
        self._locks = {name: (None, []) for name in program.locks}

        self.metrics = {
            "commits": 0,
            "deferred_accesses": 0,
            "speculated_commits": 0,
            "mispredictions": 0,
            "sync_accesses": 0,
            "polls_offloaded": 0,
            "polls_local": 0,
            "polls_speculated": 0,
            "jobs": 0,
            "recoveries": 0,
            "stalls": 0,
        }
        for cat in ("init", "interrupt", "power", "polling", "other"):
            self.metrics[f"commit_cat_{cat}"] = 0

        self._setup_memory()
        self.threads = [
            ThreadCtx(tid, body, DeferralQueue(tid, self.symbols))
            for tid, body in program.threads
        ]

    # -- memory layout --------------------------------------------------------

    def _setup_memory(self):
        classes = self.program.page_classes()
        for page, cls in classes.items():
            self.driver_mem.ensure_page(page, cls)
            self.device.mem.ensure_page(page, cls)
        self.device._initial_mem = self.device.mem.snapshot()

    def seed_device_inputs(self, pages: dict):
        """Install device-local program data (page index -> bytes)."""
        self.device.seed_input_pages(pages)
        classes = self.program.page_classes()
        for page, cls in classes.items():
            self.device.mem.page_class[page] = cls
        self.device._initial_mem = self.device.mem.snapshot()

    # -- var store --------------------------------------------------------------

    @staticmethod
    def _var_key(tid, name):
        return f"g:{name}" if name.startswith("g_") else f"{tid}:{name}"

    def get_var(self, ctx, name):
        store = self.globals if name.startswith("g_") else ctx.locals
        value = store.get(name, 0)
        if not isinstance(value, int):
            for sym in expr_symbols(value):
                if self.symbols.owner.get(sym) != ctx.tid:
                    raise ReleaseConsistencyViolation(
                        f"thread {ctx.tid} read {name!r} holding thread "
                        f"{self.symbols.owner.get(sym)}'s unresolved symbol"
                    )
        return value

    def set_var(self, ctx, name, value, origins=frozenset()):
        store = self.globals if name.startswith("g_") else ctx.locals
        store[name] = value
        self.taint.mark(self._var_key(ctx.tid, name), origins)

    def _eval(self, ctx, expr):
        """Evaluate an instruction expression; returns (value, taint origins)."""
        origins = set()

        def lookup(tag, payload):
            if tag != "var":
                return (tag, payload)
            value = self.get_var(ctx, payload)
            origins.update(self.taint.taint_of(self._var_key(ctx.tid, payload)))
            return value

        value = eval_expr(expr, lookup)
        origins |= ctx.live_control_taint(self.taint)
        return value, frozenset(origins)

    # -- top-level loop ------------------------------------------------------------

    def execute(self) -> RunReport:
        error = None
        try:
            self._loop()
        except DryrunError as exc:
            error = f"{type(exc).__name__}: {exc}"
        recording_obj = self.recorder.finalize()
        metrics = dict(self.metrics)
        metrics.update(
            round_trips=self.channel.round_trips,
            bytes_to_device=self.channel.bytes_to_device,
            bytes_from_device=self.channel.bytes_from_device,
            sim_time_us=self.clock.now,
            zero_data_mode=int(self.zero_data),
            recording_entries=len(recording_obj.entries),
            externs=len(self.extern_log),
        )
        commits = metrics["commits"]
        metrics["avg_batch_size"] = (metrics["deferred_accesses"] / commits) if commits else 0.0

        final_vars = {"global": dict(self.globals)}
        for ctx in self.threads:
            final_vars[ctx.tid] = dict(ctx.locals)
        digest_src = repr(sorted((str(k), sorted(v.items())) for k, v in final_vars.items()))
        return RunReport(
            mode=self.mode,
            metrics=metrics,
            final_vars=final_vars,
            device_digest=self.device.state_digest(),
            vars_digest=hashlib.sha256(digest_src.encode()).hexdigest(),
            externs=[(t, v) for _, t, v in self.extern_log],
            recording=recording_obj,
            recorder=self.recorder,
            error=error,
        )

    def _runnable(self, ctx):
        if ctx.finished:
            return False
        if ctx.blocked is None:
            return True
        kind = ctx.blocked[0]
        if kind == "region":
            return self.owner.state == memsync.DRIVER
        if kind == "stall":
            return may_issue(ctx.blocked[1], self.taint)
        if kind == "drain":
            return not self.outstanding and not self.outstanding_polls
        if kind == "lock":
            holder, waiters = self._locks[ctx.blocked[1]]
            return holder is None and (not waiters or waiters[0] == ctx.tid)
        return False  # "ticket" and "timer" clear through event callbacks

    def _pick(self, runnable):
        if self.feed is not None:
            # follow the recorded thread interleaving while replaying the
            # prefix, so each thread meets exactly its own entries
            tag = self._feed_next_tag()
            if tag is not None:
                for ctx in runnable:
                    if ctx.tid == tag:
                        return ctx
        if self._rng is not None:
            return self._rng.choice(runnable)
        for _ in range(len(self.threads)):
            ctx = self.threads[self._rr_next % len(self.threads)]
            self._rr_next += 1
            if ctx in runnable:
                return ctx
        return runnable[0]

    def _feed_next_tag(self):
        prefix, pos, end = self.feed
        while pos < end and prefix[pos].kind in (rec.IRQ, rec.MEM_PULL):
            pos += 1
        if pos >= end or pos >= len(self.feed_tags):
            return None
        tag = self.feed_tags[pos]
        return tag if tag >= 0 else None

    def _loop(self):
        guard = 0
        while True:
            guard += 1
            if guard > 100_000_000:
                raise DryrunError("run did not settle (scheduler guard tripped)")
            if self.pending_mispredict is not None:
                self._recover()
                continue
            runnable = [ctx for ctx in self.threads if self._runnable(ctx)]
            if runnable:
                ctx = self._pick(runnable)
                if ctx.blocked is not None:
                    self._unblock(ctx)
                    if ctx.blocked is not None:
                        continue
                self._step(ctx)
                continue
            if not self.events.empty():
                self.events.run_next()
                continue
            if all(ctx.finished for ctx in self.threads):
                if self.outstanding or self.outstanding_polls:
                    raise DryrunError("run ended with unresolved commits in flight")
                return
            blocked = [(c.tid, c.blocked and c.blocked[0]) for c in self.threads if not c.finished]
            raise DryrunError(f"deadlock: no runnable thread, no pending events ({blocked})")

    def _unblock(self, ctx):
        kind = ctx.blocked[0]
        if kind == "lock":
            lock = ctx.blocked[1]
            holder, waiters = self._locks[lock]
            if waiters and waiters[0] == ctx.tid:
                waiters.pop(0)
            self._locks[lock] = (ctx.tid, waiters)
            ctx.held_locks.add(lock)
            ctx.blocked = None
            ctx.pc += 1
            return
        if kind == "stall":
            token = ctx.blocked[1]
            ctx.blocked = None
            if not isinstance(token, _StallToken):
                self._issue_commit(ctx, token, stalled=True)
            return
        ctx.blocked = None

    # -- instruction stepping ------------------------------------------------------

    def _step(self, ctx):
        if ctx.poll is not None:
            self._poll_continue(ctx)
            return
        if ctx.submit_cont is not None:
            job, job_seq = ctx.submit_cont
            ctx.submit_cont = None
            self._submit_start_writes(ctx, job, job_seq)
            return
        if ctx.pc >= len(ctx.body):
            self._flush_and_issue(ctx, SCOPE_EXIT, scope_for_category=ctx.last_scope)
            if ctx.blocked is not None:
                return
            if ctx.held_locks:
                raise DryrunError(f"thread {ctx.tid} finished holding locks {sorted(ctx.held_locks)}")
            ctx.finished = True
            return

        scope = self.program.scope_at(ctx.tid, ctx.pc)
        if ctx.last_scope is not None and scope is not ctx.last_scope:
            prev = ctx.last_scope
            ctx.last_scope = scope
            self._flush_and_issue(ctx, SCOPE_EXIT, scope_for_category=prev)
            if ctx.blocked is not None:
                return
        else:
            ctx.last_scope = scope

        instr = ctx.body[ctx.pc]
        self._DISPATCH[type(instr)](self, ctx, instr, scope)

    @staticmethod
    def _category(scope):
        return scope.category if scope is not None else "other"

    def _in_deferral(self, scope):
        return self.mode in ("md", "mds") and scope is not None

    def _do_read(self, ctx, instr, scope):
        if self._feed_active():
            value = self._feed_register(False, instr.addr)
            if value is not None:
                self.set_var(ctx, instr.dst, value)
                ctx.pc += 1
                return
            # feed ended exactly here; fall through to live execution
        if self._in_deferral(scope):
            placeholder = ctx.queue.enqueue_read(instr.addr)
            self.metrics["deferred_accesses"] += 1
            self.set_var(ctx, instr.dst, placeholder, ctx.live_control_taint(self.taint))
            ctx.pc += 1
            return
        value = self._sync_access(ctx, False, instr.addr, 0)
        self.set_var(ctx, instr.dst, value, ctx.live_control_taint(self.taint))
        ctx.pc += 1

    def _do_write(self, ctx, instr, scope):
        value, origins = self._eval(ctx, instr.expr)
        if self._feed_active():
            concrete = value if isinstance(value, int) else None
            if self._feed_register(True, instr.addr, concrete) is not None:
                ctx.pc += 1
                return
        if self._in_deferral(scope):
            expr = ("lit", value) if isinstance(value, int) else value
            ctx.queue.enqueue_write(instr.addr, expr, origins)
            self.metrics["deferred_accesses"] += 1
            ctx.pc += 1
            return
        if not isinstance(value, int):
            raise SymbolLeak(f"synchronous write of unresolved symbol to {instr.reg}")
        if origins & self.taint.inflight:
            self.metrics["stalls"] += 1
            ctx.blocked = ("stall", _StallToken(origins))
            return
        self._sync_access(ctx, True, instr.addr, value)
        ctx.pc += 1

    def _do_assign(self, ctx, instr, scope):
        value, origins = self._eval(ctx, instr.expr)
        self.set_var(ctx, instr.var, value, origins)
        ctx.pc += 1

    def _do_branch(self, ctx, instr, scope):
        value, origins = self._eval(ctx, instr.expr)
        if not isinstance(value, int):
            # control dependency: commit the queue, then take the branch on
            # the concrete (possibly predicted) value
            self._flush_and_issue(ctx, CONTROL_DEP, scope_for_category=scope)
            if ctx.blocked is not None:
                return
            value, origins = self._eval(ctx, instr.expr)
            if not isinstance(value, int):
                raise SymbolLeak(f"branch predicate kept symbols after commit in thread {ctx.tid}")
        target = self._label_pc(ctx, instr.label)
        if origins:
            # taint writes on the taken path up to the join point
            end = target if target > ctx.pc else ctx.pc
            ctx.control_taints.append((end, frozenset(origins)))
        ctx.pc = target if value else ctx.pc + 1

    def _label_pc(self, ctx, label):
        for pc, ins in enumerate(ctx.body):
            if isinstance(ins, Label) and ins.name == label:
                return pc
        raise DryrunError(f"unknown label {label}")

    def _do_label(self, ctx, instr, scope):
        ctx.pc += 1

    def _do_lock(self, ctx, instr, scope):
        self._flush_and_issue(ctx, KERNEL_LOCK if instr.acquire else KERNEL_UNLOCK,
                              scope_for_category=scope)
        if ctx.blocked is not None:
            return
        holder, waiters = self._locks[instr.lock]
        if instr.acquire:
            if holder is None and not waiters:
                self._locks[instr.lock] = (ctx.tid, waiters)
                ctx.held_locks.add(instr.lock)
                ctx.pc += 1
            else:
                if ctx.tid not in waiters:
                    waiters.append(ctx.tid)
                ctx.blocked = ("lock", instr.lock)
        else:
            if holder != ctx.tid:
                raise DryrunError(f"thread {ctx.tid} unlocking {instr.lock} it does not hold")
            self._locks[instr.lock] = (None, waiters)
            ctx.held_locks.discard(instr.lock)
            ctx.pc += 1

    def _do_delay(self, ctx, instr, scope):
        self._flush_and_issue(ctx, EXPLICIT_DELAY, scope_for_category=scope)
        if ctx.blocked is not None:
            return
        ctx.pc += 1
        if self._feed_active():
            return
        ctx.blocked = ("timer",)
        self.events.schedule(self.clock.now + instr.ticks, lambda: self._wake(ctx))

    def _wake(self, ctx):
        if ctx.blocked is not None and ctx.blocked[0] == "timer":
            ctx.blocked = None

    def _do_extern(self, ctx, instr, scope):
        self._flush_and_issue(ctx, EXTERN, scope_for_category=scope)
        if ctx.blocked is not None:
            return
        if not self._feed_active() and (self.outstanding or self.outstanding_polls):
            ctx.blocked = ("drain",)
            return
        value, origins = self._eval(ctx, instr.expr)
        if not isinstance(value, int):
            raise SymbolLeak("externalizing an unresolved symbol")
        if origins & self.taint.inflight:
            raise SymbolLeak("externalizing a speculative value")
        if not self._feed_active():
            self.extern_log.append((len(self.recorder), ctx.tid, value))
        ctx.pc += 1

    def _do_barrier_note(self, ctx, instr, scope):
        ctx.pc += 1

    # -- polling ----------------------------------------------------------------

    def _do_poll(self, ctx, instr, scope):
        loop = instr.loop
        self._flush_and_issue(ctx, LOOP_OFFLOAD, scope_for_category=scope)
        if ctx.blocked is not None:
            return
        operand, origins = self._eval(ctx, loop.operand)
        if not isinstance(operand, int):
            raise SymbolLeak("poll operand kept symbols after the pre-poll commit")
        if self._feed_active():
            self._feed_poll(ctx, loop, operand)
            return
        if origins & self.taint.inflight:
            self.metrics["stalls"] += 1
            ctx.blocked = ("stall", _StallToken(origins))
            return
        if self.mode in ("md", "mds") and loop.simple:
            self._poll_offload(ctx, loop, operand)
        else:
            self.metrics["polls_local"] += 1
            ctx.poll = _PollProgress(loop, operand)
            self._poll_continue(ctx)

    def _poll_continue(self, ctx):
        prog = ctx.poll
        loop = prog.loop
        value = self._sync_access(ctx, False, loop.addr, 0)
        if self.pending_mispredict is not None:
            return
        prog.iterations += 1
        if apply_op(loop.cmpop, value, prog.operand) or prog.iterations >= loop.max_iters:
            ctx.poll = None
            ctx.pc += 1
            return
        ctx.blocked = ("timer",)
        self.events.schedule(self.clock.now + loop.backoff_ticks, lambda: self._wake(ctx))

    def _poll_offload(self, ctx, loop, operand):
        captured = {}
        if loop.operand[0] == "var":
            captured[loop.operand[1]] = operand
        OffloadRequest(loop, captured)  # asserts the loop is offloadable
        payload = transport.encode_loop_offload(
            loop.addr, loop.cmpop, operand, loop.max_iters, loop.backoff_ticks, captured
        )
        self.metrics["polls_offloaded"] += 1
        site = poll_site(ctx.tid, ctx.pc)
        self.shim.tag_thread = ctx.tid

        predicted = None
        if self.mode == "mds" and self.policy.enabled and site not in self.banned_sites:
            pred = self.history.predict(site, poll_signature(loop.addr, loop.cmpop),
                                        self.policy.confidence_k)
            if pred is not None:
                predicted = bool(pred.values[0])

        if predicted is not None:
            if self.inject_poll_at is not None \
                    and self.metrics["polls_speculated"] + 1 == self.inject_poll_at:
                predicted = not predicted
            self.metrics["polls_speculated"] += 1
            base = len(self.recorder)
            info = dict(site=site, loop=loop, operand=operand, predicted=predicted, base=base)
            ticket = self.channel.send_async(transport.LOOP_OFFLOAD, payload,
                                             on_ready=lambda t: self._poll_validated(t, info))
            self.outstanding_polls[ticket.seq] = info
            info["seq"] = ticket.seq
            ctx.pc += 1
            return

        ticket = self.channel.issue(transport.LOOP_OFFLOAD, payload)
        ctx.blocked = ("ticket",)
        ticket.on_ready = lambda t: self._poll_done_sync(ctx, t, site, loop, operand)

    @staticmethod
    def _loop_satisfied(loop, final_value, operand) -> bool:
        return bool(apply_op(loop.cmpop, final_value, operand))

    def _poll_done_sync(self, ctx, ticket, site, loop, operand):
        _iters, final_value, _updated = transport.decode_loop_result(ticket.response_payload)
        satisfied = self._loop_satisfied(loop, final_value, operand)
        self.history.record(site, poll_signature(loop.addr, loop.cmpop), (int(satisfied),))
        ctx.blocked = None
        ctx.pc += 1

    def _poll_validated(self, ticket, info):
        self.outstanding_polls.pop(info.get("seq", ticket.seq), None)
        _iters, final_value, _updated = transport.decode_loop_result(ticket.response_payload)
        loop = info["loop"]
        satisfied = self._loop_satisfied(loop, final_value, info["operand"])
        self.history.record(info["site"], poll_signature(loop.addr, loop.cmpop), (int(satisfied),))
        if satisfied != info["predicted"]:
            self.metrics["mispredictions"] += 1
            self.banned_sites.add(info["site"])
            self.pending_mispredict = info["base"]

    # -- job submission -----------------------------------------------------------

    def _do_submit(self, ctx, instr, scope):
        self._flush_and_issue(ctx, KERNEL_SCHED, scope_for_category=scope)
        if ctx.blocked is not None:
            return
        if self._feed_active():
            self._feed_consume_passive()
        if self._feed_active():
            job = self.program.jobs[instr.job]
            self.job_seq += 1
            self._prepare_job_memory(job)
            self._feed_submit(ctx, job, self.job_seq)
            return
        if self.owner.state != memsync.DRIVER:
            ctx.blocked = ("region",)  # job queue length 1: wait out the window
            return
        job = self.program.jobs[instr.job]
        self.job_seq += 1
        self.metrics["jobs"] += 1
        job_seq = self.job_seq
        self._prepare_job_memory(job)

        delta = memsync.build_delta(
            self.driver_mem,
            _ALL_CLASSES if self.mode == "naive" else {METASTATE, UNKNOWN},
            full=(self.mode == "naive"),
            raw=(self.mode == "naive"),
        )
        memsync.commit_baseline(self.driver_mem, _ALL_CLASSES)
        self.owner.push_sent()
        self.driver_mem.accessible = False
        self.shim.tag_thread = ctx.tid
        payload = struct.pack("<Q", job_seq) + memsync.encode_delta(delta)
        ticket = self.channel.issue(transport.MEM_PUSH, payload)
        ctx.blocked = ("ticket",)
        ticket.on_ready = lambda t: self._push_acked(ctx, job, job_seq)

    def _push_acked(self, ctx, job, job_seq):
        ctx.blocked = None
        ctx.submit_cont = (job, job_seq)

    def _submit_start_writes(self, ctx, job, job_seq):
        head_addr = self.device.dmap.addr_of("JOB_HEAD")
        start_addr = self.device.dmap.addr_of("JOB_START")
        ctx.pc += 1
        if self.mode in ("md", "mds"):
            ctx.queue.enqueue_write(head_addr, ("lit", job.desc_page))
            ctx.queue.enqueue_write(start_addr, ("lit", job_seq))
            self.metrics["deferred_accesses"] += 2
            self._flush_and_issue(ctx, KERNEL_SCHED)
        else:
            self._sync_access(ctx, True, head_addr, job.desc_page)
            self._sync_access(ctx, True, start_addr, job_seq)

    def _prepare_job_memory(self, job):
        mem = self.driver_mem
        desc = pack_descriptor(
            _TRANSFORM_CODES[job.kind],
            job.const,
            job.status_page,
            list(job.shader_pages),
            list(job.in_pages),
            list(job.out_pages),
            [p | (TOUCH_WRITE if rw == "w" else 0) for rw, p in job.touch],
        )
        mem.write(job.desc_page, 0, desc.ljust(256, b"\x00"))
        for i, page in enumerate(job.shader_pages):
            pattern = bytes(((i + 1) * 37 + k * 11) & 0xFF for k in range(256)) * 16
            mem.write(page, 0, pattern)
        mem.write(job.status_page, 0, bytes(16))
        if self.zero_data:
            for page in list(job.in_pages) + list(job.out_pages):
                if mem.page_class.get(page) == UNKNOWN:
                    mem.write(page, 0, bytes(memsync.PAGE_SIZE))

    # -- commit issuance ------------------------------------------------------------

    def _flush_and_issue(self, ctx, reason, scope_for_category=None):
        if not len(ctx.queue):
            return
        scope = scope_for_category if scope_for_category is not None \
            else self.program.scope_at(ctx.tid, ctx.pc)
        commit = self.builder.flush(
            ctx.queue, reason, (ctx.tid, ctx.pc), self._category(scope),
            control_taint=ctx.live_control_taint(self.taint),
        )
        if commit is not None:
            self._issue_commit(ctx, commit)

    def _issue_commit(self, ctx, commit, stalled=False):
        if not may_issue(commit, self.taint):
            if not stalled:
                self.metrics["stalls"] += 1
            ctx.blocked = ("stall", commit)
            return
        self.metrics["commits"] += 1
        self.metrics[f"commit_cat_{commit.category}"] += 1
        payload = transport.encode_commit(commit)
        self.shim.tag_thread = ctx.tid

        prediction = None
        if self.mode == "mds" and self.policy.enabled and commit.site not in self.banned_sites:
            prediction = self.history.predict(commit.site, commit.signature(),
                                              self.policy.confidence_k)

        if prediction is not None:
            if commit.reads():
                self._inject_candidates += 1
                if self.inject_commit_at is not None and self._inject_candidates == self.inject_commit_at:
                    prediction = Prediction([v ^ 0xDEADBEEF for v in prediction.values])
            self.metrics["speculated_commits"] += 1
            base = len(self.recorder)
            out = _Outstanding(commit, prediction, base, None)
            ticket = self.channel.send_async(transport.COMMIT_REQUEST, payload,
                                             on_ready=lambda t: self._commit_returned(out))
            out.ticket = ticket
            self.outstanding[commit.commit_id] = out
            self.taint.begin(commit.commit_id)
            self._bind_and_fold(commit, prediction.values, predicted=True)
            return

        base = len(self.recorder)
        out = _Outstanding(commit, None, base, None)
        ticket = self.channel.issue(transport.COMMIT_REQUEST, payload)
        out.ticket = ticket
        ctx.blocked = ("ticket",)
        ticket.on_ready = lambda t: self._commit_sync_done(ctx, out, t)

    def _commit_sync_done(self, ctx, out, ticket):
        result = transport.decode_commit_response(ticket.response_payload)
        self.history.record(out.commit.site, out.commit.signature(), tuple(result.read_values))
        self._bind_and_fold(out.commit, result.read_values, predicted=False)
        ctx.blocked = None

    def _commit_returned(self, out):
        result = transport.decode_commit_response(out.ticket.response_payload)
        self.history.record(out.commit.site, out.commit.signature(), tuple(result.read_values))
        self.outstanding.pop(out.commit.commit_id, None)
        miss = validate(out.prediction, result.read_values)
        if miss is None:
            self.taint.settle(out.commit.commit_id)
            return
        self.metrics["mispredictions"] += 1
        self.banned_sites.add(out.commit.site)
        read_positions = [i for i, e in enumerate(out.commit.entries) if isinstance(e, ReadEntry)]
        pos = read_positions[min(miss.read_index, len(read_positions) - 1)] if read_positions else 0
        self.pending_mispredict = out.base_log_index + pos

    def _bind_and_fold(self, commit, values, predicted):
        reads = commit.reads()
        predicted_syms = set()
        for entry, value in zip(reads, values):
            self.symbols.bind(entry.sym, value)
            if predicted:
                predicted_syms.add(entry.sym)
        stores = [(None, self.globals)] + [(ctx, ctx.locals) for ctx in self.threads]
        for ctx, store in stores:
            for name, value in list(store.items()):
                if isinstance(value, int):
                    continue
                syms = expr_symbols(value)
                folded = self.symbols.reduce(value)
                if folded is not value:
                    store[name] = folded
                if predicted and syms & predicted_syms:
                    tid = ctx.tid if ctx is not None else -1
                    self.taint.mark(self._var_key(tid, name), {commit.commit_id})

    # -- synchronous register path -----------------------------------------------------

    def _sync_access(self, ctx, is_write, addr, value):
        self.metrics["sync_accesses"] += 1
        self.shim.tag_thread = ctx.tid
        payload = transport.encode_sync_access(is_write, addr, value)
        (kind, resp), _elapsed = self.channel.send_request(transport.SYNC_ACCESS, payload)
        if is_write:
            return 0
        return struct.unpack("<Q", resp)[0]

    # -- device push handling (irq + memory pull) ----------------------------------------

    def _on_device_push(self, kind, payload, arrival):
        if kind == transport.MEM_PULL:
            delta = memsync.decode_delta(payload[8:])
            self.owner.pull_applied()
            memsync.apply_delta(self.driver_mem, delta)
            self.driver_mem.accessible = True

    # -- misprediction recovery ------------------------------------------------------------

    def _recover(self):
        log_index = self.pending_mispredict
        self.pending_mispredict = None
        self.metrics["recoveries"] += 1
        entries = self.recorder.recording.entries
        boundary = rec.snap_to_job_boundary(entries, log_index)

        # one message tells the device side where to rewind; the prefix replay
        # itself happens on both sides with no network traffic
        self.events.clear()
        self.channel.send_request(transport.REPLAY_PREFIX, struct.pack("<Q", boundary))
        self.clock.advance_to(self.clock.now + self.restart_ticks)

        self.recorder.truncate(boundary)
        self.extern_log = [e for e in self.extern_log if e[0] <= boundary]
        prefix = list(self.recorder.recording.entries)
        self.feed_tags = list(self.recorder.thread_tags)

        # device side: reset, then fast-forward by the recorded stimuli
        self.device.reset()
        self.owner.state = memsync.DRIVER
        self.shim._scheduled_done_at = None
        self._feed_device_side(prefix)

        # driver side: fresh state consuming the same prefix as it re-executes
        self.symbols = SymbolTable()
        self.taint.clear()
        self.globals = {}
        self.outstanding.clear()
        self.outstanding_polls.clear()
        self._locks = {name: (None, []) for name in self.program.locks}
        self.driver_mem = MemoryImage("driver")
        for page, cls in self.program.page_classes().items():
            self.driver_mem.ensure_page(page, cls)
        self.job_seq = 0
        self.threads = [
            ThreadCtx(tid, body, DeferralQueue(tid, self.symbols))
            for tid, body in self.program.threads
        ]
        self.channel.device_busy_until = self.clock.now
        self.channel._arrival_to_device = self.clock.now
        self.channel._arrival_from_device = self.clock.now
        self.feed = [prefix, 0, len(prefix)] if prefix else None

    def _feed_device_side(self, prefix):
        device = self.device
        for index, entry in enumerate(prefix):
            if entry.kind == rec.MEM_PUSH:
                self.owner.push_sent()
                self.owner.push_applied()
                memsync.apply_delta(device.mem, memsync.decode_delta(entry.blob))
            elif entry.kind == rec.MEM_PULL:
                memsync.build_delta(device.mem, self.shim.sync_classes,
                                    full=(self.mode == "naive"), raw=(self.mode == "naive"))
                memsync.commit_baseline(device.mem, self.shim.sync_classes)
                self.owner.pull_sent()
                self.owner.pull_applied()
                device.finish_job()
            elif entry.kind == rec.IRQ:
                device.force_complete_job()
            elif entry.kind == rec.REG_WRITE:
                device.apply_access(RegisterAccess(True, entry.addr, entry.value))
            elif entry.kind == rec.REG_READ:
                got = device.apply_access(RegisterAccess(False, entry.addr))
                spec = device.dmap.by_addr.get(entry.addr)
                if got != entry.value and spec is not None and spec.kind != "nondet":
                    if spec.kind in ("job-status", "power-fsm") and device.job_done_at is not None:
                        device.force_complete_job()
                        got = device.apply_access(RegisterAccess(False, entry.addr))
                    if got != entry.value:
                        raise DivergenceError(index, "device prefix replay diverged")

    # -- driver-side feed during recovery ----------------------------------------------------

    def _feed_active(self):
        return self.feed is not None

    def _feed_consume_passive(self):
        """Swallow Irq/MemPull entries the driver would have received async."""
        if self.feed is None:
            return
        prefix, pos, end = self.feed
        while pos < end and prefix[pos].kind in (rec.IRQ, rec.MEM_PULL):
            if prefix[pos].kind == rec.MEM_PULL:
                memsync.apply_delta(self.driver_mem, memsync.decode_delta(prefix[pos].blob))
                self.driver_mem.accessible = True
            pos += 1
        self.feed[1] = pos
        if pos >= end:
            self.feed = None

    def _feed_register(self, is_write, addr, value=None):
        """Consume one register entry from the feed; None when the feed ended."""
        self._feed_consume_passive()
        if self.feed is None:
            return None
        prefix, pos, end = self.feed
        entry = prefix[pos]
        want = rec.REG_WRITE if is_write else rec.REG_READ
        if entry.kind != want or entry.addr != addr:
            raise DivergenceError(pos, f"driver replay expected {entry.brief()}, got access to {addr:#x}")
        if is_write and value is not None and entry.value != value:
            raise DivergenceError(pos, "driver replay computed a different write value")
        self.feed[1] = pos + 1
        if self.feed[1] >= end:
            self.feed = None
        return entry.value

    def _feed_poll(self, ctx, loop, operand):
        while True:
            value = self._feed_register(False, loop.addr)
            if value is None:
                # feed ended inside the poll; continue it live
                self.metrics["polls_local"] += 1
                ctx.poll = _PollProgress(loop, operand)
                self._poll_continue(ctx)
                return
            if apply_op(loop.cmpop, value, operand):
                break
        ctx.pc += 1

    def _feed_submit(self, ctx, job, job_seq):
        prefix, pos, end = self.feed
        if prefix[pos].kind != rec.JOB_BOUNDARY or prefix[pos].value != job_seq:
            raise DivergenceError(pos, "driver replay expected a job boundary")
        pos += 1
        if pos < end and prefix[pos].kind == rec.MEM_PUSH:
            # mirror the live bookkeeping without touching the network
            memsync.build_delta(self.driver_mem, self.shim.sync_classes,
                                full=(self.mode == "naive"), raw=(self.mode == "naive"))
            memsync.commit_baseline(self.driver_mem, _ALL_CLASSES)
            self.driver_mem.accessible = False
            pos += 1
        self.feed[1] = pos
        if pos >= end:
            self.feed = None
        ctx.pc += 1
        head_addr = self.device.dmap.addr_of("JOB_HEAD")
        start_addr = self.device.dmap.addr_of("JOB_START")
        for addr, val in ((head_addr, job.desc_page), (start_addr, job_seq)):
            if self._feed_active():
                if self._feed_register(True, addr, val) is not None:
                    continue
            if self.mode in ("md", "mds"):
                ctx.queue.enqueue_write(addr, ("lit", val))
                self.metrics["deferred_accesses"] += 1
            else:
                self._sync_access(ctx, True, addr, val)
        if not self._feed_active() and self.mode in ("md", "mds") and len(ctx.queue):
            self._flush_and_issue(ctx, KERNEL_SCHED)

    _DISPATCH = {}


Run._DISPATCH = {
    Read: Run._do_read,
    Write: Run._do_write,
    Assign: Run._do_assign,
    BranchIf: Run._do_branch,
    Label: Run._do_label,
    LockOp: Run._do_lock,
    Delay: Run._do_delay,
    Extern: Run._do_extern,
    Poll: Run._do_poll,
    SubmitJob: Run._do_submit,
    BarrierNote: Run._do_barrier_note,
}
