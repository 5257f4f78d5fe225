"""Synthetic driver programs: the assembly-like workload DSL.

A workload stands in for the instrumented GPU driver: threads of register
reads/writes, branches, locks, delays, externalization calls, polling
loops, and job submissions.  Programs are parsed against a device map so
every register name resolves to an address, poll loops get classified as
offloadable or not, and lock balance plus hot-scope shape are checked
statically.  Programs are immutable after parse.

File format (one statement per line, ``#`` comments)::

    thread 0
    hot_begin interrupt
      r1 = read JOB_IRQ_STATUS
      branch-if r1 == 0, skip
      write JOB_IRQ_CLEAR, r1
      label skip
    hot_end
    delay 2000
    poll JOB_IRQ_RAWSTAT == 1 max 64 backoff 100
    submit-job j0
    job j0 meta=3 in=4 out=4 kind=add const=3
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, field

from .device import DeviceMap
from .errors import OverlappingHotScope, UnbalancedLock, UnknownRegister, WorkloadSyntaxError
from .exprs import ExprSyntaxError, format_expr, parse_expr
from .memsync import UNKNOWN, MappingRecord, PagePerm, classify

CATEGORIES = ("init", "interrupt", "power", "polling", "other")

IDEMPOTENT_KINDS = {"constant", "job-status", "power-fsm"}


# --- instructions -----------------------------------------------------------


@dataclass(frozen=True)
class Read:
    dst: str
    reg: str
    addr: int


@dataclass(frozen=True)
class Write:
    reg: str
    addr: int
    expr: tuple


@dataclass(frozen=True)
class Assign:
    var: str
    expr: tuple


@dataclass(frozen=True)
class BranchIf:
    expr: tuple
    label: str


@dataclass(frozen=True)
class Label:
    name: str


@dataclass(frozen=True)
class LockOp:
    lock: str
    acquire: bool


@dataclass(frozen=True)
class Delay:
    ticks: int


@dataclass(frozen=True)
class Extern:
    expr: tuple


@dataclass(frozen=True)
class PollLoopSpec:
    reg: str
    addr: int
    cmpop: str
    operand: tuple  # ("lit", v) or ("var", name)
    max_iters: int
    backoff_ticks: int
    simple: bool


@dataclass(frozen=True)
class Poll:
    loop: PollLoopSpec


@dataclass(frozen=True)
class SubmitJob:
    job: str


@dataclass(frozen=True)
class BarrierNote:
    note: str


@dataclass(frozen=True)
class Scope:
    thread: int
    start: int
    end: int  # exclusive
    category: str


@dataclass
class JobDecl:
    name: str
    meta: int
    n_in: int
    n_out: int
    kind: str = "add"
    const: int = 3
    touch: tuple = ()  # (("r"|"w", absolute page), ...)
    hints: str = "full"  # "full" or "none"
    # page layout, assigned after all declarations are collected
    desc_page: int = -1
    shader_pages: tuple = ()
    status_page: int = -1
    in_pages: tuple = ()
    out_pages: tuple = ()

    def all_pages(self):
        return [self.desc_page, *self.shader_pages, self.status_page, *self.in_pages, *self.out_pages]


@dataclass
class Program:
    threads: list  # list of (thread_id, [Instr])
    locks: set
    jobs: dict  # name -> JobDecl
    scopes: list  # [Scope]
    device_map: DeviceMap

    def thread_ids(self):
        return [tid for tid, _ in self.threads]

    def body(self, tid):
        for t, instrs in self.threads:
            if t == tid:
                return instrs
        raise KeyError(tid)

    def scopes_of(self, tid):
        return [s for s in self.scopes if s.thread == tid]

    def scope_at(self, tid, pc):
        for s in self.scopes:
            if s.thread == tid and s.start <= pc < s.end:
                return s
        return None

    def page_count(self) -> int:
        n = 0
        for job in self.jobs.values():
            n = max(n, max(job.all_pages(), default=-1) + 1)
        return n

    def page_classes(self) -> dict:
        """Page classification from each job's mapping records."""
        classes = {}
        for job in self.jobs.values():
            hinted = job.hints != "none"
            for p in [job.desc_page, *job.shader_pages, job.status_page]:
                classes[p] = classify(MappingRecord(PagePerm(True, True, True), False, True))
            for p in job.in_pages:
                classes[p] = classify(MappingRecord(PagePerm(True, False, False), hinted, hinted))
            for p in job.out_pages:
                classes[p] = classify(MappingRecord(PagePerm(True, True, False), False, hinted))
        return classes

    def zero_data_mode(self) -> bool:
        return any(cls == UNKNOWN for cls in self.page_classes().values())

    def fingerprint(self) -> str:
        return hashlib.sha256(print_program(self).encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Program):
            return NotImplemented
        return (
            self.threads == other.threads
            and self.locks == other.locks
            and self.jobs == other.jobs
            and self.scopes == other.scopes
        )


# --- parsing ----------------------------------------------------------------

_JOB_RE = re.compile(r"(\w+)=(\S+)")


def _parse_expr_or_err(text, line_no):
    try:
        return parse_expr(text)
    except ExprSyntaxError as exc:
        raise WorkloadSyntaxError(line_no, 0, str(exc)) from exc


def _resolve(dmap: DeviceMap, name: str, line_no: int) -> int:
    spec = dmap.by_name.get(name)
    if spec is None:
        raise UnknownRegister(name)
    return spec.addr


def parse(text: str, dmap: DeviceMap) -> Program:
    threads: list = []
    jobs: dict = {}
    scopes: list = []
    locks: set = set()

    cur_tid = None
    cur_body: list = []
    open_scope = None  # (start, category, line_no)

    def finish_thread():
        nonlocal cur_tid, cur_body, open_scope
        if open_scope is not None:
            raise WorkloadSyntaxError(open_scope[2], 0, "hot_begin without hot_end")
        if cur_tid is not None:
            threads.append((cur_tid, cur_body))
        cur_tid, cur_body = None, []

    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()

        if head == "thread":
            finish_thread()
            cur_tid = int(rest)
            if any(t == cur_tid for t, _ in threads):
                raise WorkloadSyntaxError(line_no, 0, f"duplicate thread {cur_tid}")
            continue
        if head == "job":
            _parse_job_decl(rest, jobs, line_no)
            continue
        if cur_tid is None:
            raise WorkloadSyntaxError(line_no, 0, "statement before any 'thread' directive")

        if head == "hot_begin":
            if open_scope is not None:
                raise OverlappingHotScope(f"line {line_no}: nested hot scope")
            category = rest or "other"
            if category not in CATEGORIES:
                raise WorkloadSyntaxError(line_no, 0, f"unknown scope category {category!r}")
            open_scope = (len(cur_body), category, line_no)
            continue
        if head == "hot_end":
            if open_scope is None:
                raise WorkloadSyntaxError(line_no, 0, "hot_end without hot_begin")
            start, category, _ = open_scope
            scopes.append(Scope(cur_tid, start, len(cur_body), category))
            open_scope = None
            continue

        cur_body.append(_parse_statement(head, rest, line, dmap, locks, line_no))

    finish_thread()

    program = Program(threads=threads, locks=locks, jobs=jobs, scopes=scopes, device_map=dmap)
    _assign_job_layout(program)
    _check_labels(program)
    _check_locks(program)
    _check_scopes(program)
    _check_jobs(program)
    return program


def _parse_statement(head, rest, line, dmap, locks, line_no):
    if head == "write":
        reg, _, expr_s = rest.partition(",")
        reg = reg.strip()
        if not expr_s.strip():
            raise WorkloadSyntaxError(line_no, 0, "write needs 'write REG, expr'")
        return Write(reg, _resolve(dmap, reg, line_no), _parse_expr_or_err(expr_s, line_no))
    if head == "branch-if":
        expr_s, _, label = rest.rpartition(",")
        if not expr_s:
            raise WorkloadSyntaxError(line_no, 0, "branch-if needs 'branch-if expr, label'")
        return BranchIf(_parse_expr_or_err(expr_s, line_no), label.strip())
    if head == "label":
        return Label(rest)
    if head == "lock" or head == "unlock":
        locks.add(rest)
        return LockOp(rest, head == "lock")
    if head == "delay":
        return Delay(int(rest, 0))
    if head == "extern":
        return Extern(_parse_expr_or_err(rest, line_no))
    if head == "poll":
        return _parse_poll(rest, dmap, line_no)
    if head == "submit-job":
        return SubmitJob(rest)
    if head == "barrier-note":
        return BarrierNote(rest)
    # var = read REG   |   var = expr
    m = re.match(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.+)$", line)
    if not m:
        raise WorkloadSyntaxError(line_no, 0, f"cannot parse statement {line!r}")
    var, rhs = m.group(1), m.group(2).strip()
    if rhs.startswith("read "):
        reg = rhs[5:].strip()
        return Read(var, reg, _resolve(dmap, reg, line_no))
    return Assign(var, _parse_expr_or_err(rhs, line_no))


_POLL_RE = re.compile(
    r"^(?P<reg>[A-Za-z_][A-Za-z0-9_]*)\s*(?P<op>==|!=|<|>)\s*(?P<operand>\S+)"
    r"\s+max\s+(?P<max>\d+)(?:\s+backoff\s+(?P<backoff>\d+))?$"
)


def _parse_poll(rest, dmap, line_no):
    m = _POLL_RE.match(rest)
    if not m:
        raise WorkloadSyntaxError(line_no, 0, "poll needs 'poll REG <cmp> operand max N [backoff T]'")
    reg = m.group("reg")
    addr = _resolve(dmap, reg, line_no)
    operand = _parse_expr_or_err(m.group("operand"), line_no)
    if operand[0] not in ("lit", "var"):
        raise WorkloadSyntaxError(line_no, 0, "poll operand must be a literal or variable")
    kind = dmap.by_addr[addr].kind
    simple = kind in IDEMPOTENT_KINDS
    return Poll(
        PollLoopSpec(
            reg=reg,
            addr=addr,
            cmpop=m.group("op"),
            operand=operand,
            max_iters=int(m.group("max")),
            backoff_ticks=int(m.group("backoff") or 100),
            simple=simple,
        )
    )


def _parse_job_decl(rest, jobs, line_no):
    parts = rest.split()
    if not parts:
        raise WorkloadSyntaxError(line_no, 0, "job needs a name")
    name = parts[0]
    if name in jobs:
        raise WorkloadSyntaxError(line_no, 0, f"duplicate job {name}")
    fields = dict(_JOB_RE.findall(" ".join(parts[1:])))
    try:
        meta = int(fields["meta"])
        n_in = int(fields["in"])
        n_out = int(fields["out"])
    except KeyError as exc:
        raise WorkloadSyntaxError(line_no, 0, f"job missing field {exc}") from exc
    if meta < 2:
        raise WorkloadSyntaxError(line_no, 0, "job needs meta>=2 (descriptor + status page)")
    touch = []
    if "touch" in fields:
        for item in fields["touch"].split(","):
            rw, _, page = item.partition(":")
            if rw not in ("r", "w"):
                raise WorkloadSyntaxError(line_no, 0, f"touch entries are r:<page> or w:<page>, got {item!r}")
            touch.append((rw, int(page)))
    jobs[name] = JobDecl(
        name=name,
        meta=meta,
        n_in=n_in,
        n_out=n_out,
        kind=fields.get("kind", "add"),
        const=int(fields.get("const", "3"), 0),
        touch=tuple(touch),
        hints=fields.get("hints", "full"),
    )


def _assign_job_layout(program: Program) -> None:
    next_page = 0
    for job in program.jobs.values():  # declaration order (dict preserves it)
        job.desc_page = next_page
        next_page += 1
        job.shader_pages = tuple(range(next_page, next_page + job.meta - 2))
        next_page += job.meta - 2
        job.status_page = next_page
        next_page += 1
        job.in_pages = tuple(range(next_page, next_page + job.n_in))
        next_page += job.n_in
        job.out_pages = tuple(range(next_page, next_page + job.n_out))
        next_page += job.n_out


def _check_labels(program: Program) -> None:
    for tid, body in program.threads:
        labels = {}
        for pc, instr in enumerate(body):
            if isinstance(instr, Label):
                if instr.name in labels:
                    raise WorkloadSyntaxError(0, 0, f"thread {tid}: duplicate label {instr.name}")
                labels[instr.name] = pc
        for instr in body:
            if isinstance(instr, BranchIf) and instr.label not in labels:
                raise WorkloadSyntaxError(0, 0, f"thread {tid}: unknown label {instr.label}")


def _successors(body, pc, labels):
    instr = body[pc]
    if isinstance(instr, BranchIf):
        return [pc + 1, labels[instr.label]]
    return [pc + 1]


def _check_locks(program: Program) -> None:
    """Every acquire must match a release on all control paths."""
    for tid, body in program.threads:
        labels = {i.name: pc for pc, i in enumerate(body) if isinstance(i, Label)}
        states = {0: frozenset()}
        work = [0]
        while work:
            pc = work.pop()
            held = states[pc]
            if pc >= len(body):
                continue
            instr = body[pc]
            if isinstance(instr, LockOp):
                if instr.acquire:
                    if instr.lock in held:
                        raise UnbalancedLock(f"thread {tid}: lock {instr.lock} acquired twice")
                    held = held | {instr.lock}
                else:
                    if instr.lock not in held:
                        raise UnbalancedLock(f"thread {tid}: unlock of {instr.lock} not held")
                    held = held - {instr.lock}
            for nxt in _successors(body, pc, labels):
                if nxt > len(body):
                    continue
                if nxt in states:
                    if states[nxt] != held:
                        raise UnbalancedLock(f"thread {tid}: inconsistent locks at pc {nxt}")
                else:
                    states[nxt] = held
                    if nxt < len(body):
                        work.append(nxt)
        end_state = states.get(len(body), frozenset())
        if end_state:
            raise UnbalancedLock(f"thread {tid}: locks held at end: {sorted(end_state)}")


def _check_scopes(program: Program) -> None:
    for tid in program.thread_ids():
        spans = sorted((s.start, s.end) for s in program.scopes_of(tid))
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            if s2 < e1:
                raise OverlappingHotScope(f"thread {tid}: scopes [{s1},{e1}) and [{s2},{e2}) overlap")


def _check_jobs(program: Program) -> None:
    for tid, body in program.threads:
        for instr in body:
            if isinstance(instr, SubmitJob) and instr.job not in program.jobs:
                raise WorkloadSyntaxError(0, 0, f"thread {tid}: unknown job {instr.job}")


# --- printing ---------------------------------------------------------------


def _format_instr(instr) -> str:
    if isinstance(instr, Read):
        return f"{instr.dst} = read {instr.reg}"
    if isinstance(instr, Write):
        return f"write {instr.reg}, {format_expr(instr.expr)}"
    if isinstance(instr, Assign):
        return f"{instr.var} = {format_expr(instr.expr)}"
    if isinstance(instr, BranchIf):
        return f"branch-if {format_expr(instr.expr)}, {instr.label}"
    if isinstance(instr, Label):
        return f"label {instr.name}"
    if isinstance(instr, LockOp):
        return f"{'lock' if instr.acquire else 'unlock'} {instr.lock}"
    if isinstance(instr, Delay):
        return f"delay {instr.ticks}"
    if isinstance(instr, Extern):
        return f"extern {format_expr(instr.expr)}"
    if isinstance(instr, Poll):
        lp = instr.loop
        return (
            f"poll {lp.reg} {lp.cmpop} {format_expr(lp.operand)} max {lp.max_iters} "
            f"backoff {lp.backoff_ticks}"
        )
    if isinstance(instr, SubmitJob):
        return f"submit-job {instr.job}"
    if isinstance(instr, BarrierNote):
        return f"barrier-note {instr.note}".rstrip()
    raise TypeError(f"unknown instruction {instr!r}")


def print_program(program: Program) -> str:
    lines = []
    for job in program.jobs.values():
        extra = ""
        if job.kind != "add":
            extra += f" kind={job.kind}"
        if job.const != 3:
            extra += f" const={job.const}"
        if job.touch:
            extra += " touch=" + ",".join(f"{rw}:{p}" for rw, p in job.touch)
        if job.hints != "full":
            extra += f" hints={job.hints}"
        lines.append(f"job {job.name} meta={job.meta} in={job.n_in} out={job.n_out}{extra}")
    for tid, body in program.threads:
        lines.append(f"thread {tid}")
        begins = {s.start: s.category for s in program.scopes_of(tid)}
        ends = {s.end for s in program.scopes_of(tid)}
        for pc, instr in enumerate(body):
            if pc in ends:
                lines.append("hot_end")
            if pc in begins:
                lines.append(f"hot_begin {begins[pc]}")
            lines.append("  " + _format_instr(instr))
        if len(body) in ends:
            lines.append("hot_end")
    return "\n".join(lines) + "\n"


# --- access accounting (static oracle) ---------------------------------------


def static_access_count(program: Program) -> int:
    """Register accesses a run will issue, assuming every poll satisfies its
    predicate on the first read and every branch-guarded access executes.
    Used as the independent round-trip oracle for bundled workloads, which
    are built to make those assumptions hold."""
    n = 0
    for _, body in program.threads:
        for instr in body:
            if isinstance(instr, (Read, Write, Poll)):
                n += 1
            elif isinstance(instr, SubmitJob):
                n += 2  # the JOB_HEAD and JOB_START writes
    return n


def static_poll_count(program: Program) -> int:
    return sum(isinstance(i, Poll) for _, body in program.threads for i in body)


def static_job_count(program: Program) -> int:
    return sum(isinstance(i, SubmitJob) for _, body in program.threads for i in body)


# --- bundled workload generator ----------------------------------------------

PROFILES = {
    "mnist-like": dict(n_jobs=12, accesses=2800, n_polls=117, n_in=4, n_out=4, meta=3),
    "vgg16-like": dict(n_jobs=24, accesses=5600, n_polls=492, n_in=2, n_out=2, meta=3),
    "micro": dict(n_jobs=1, accesses=44, n_polls=6, n_in=1, n_out=1, meta=2),
    "syncheavy": dict(n_jobs=2, accesses=48, n_polls=8, n_in=96, n_out=96, meta=2),
}

_PROBE_REGS = [
    "GPU_ID", "CORE_FEATURES", "CORE_COUNT", "L2_FEATURES", "L2_COUNT",
    "TILER_FEATURES", "MEM_FEATURES", "MMU_FEATURES", "AS_PRESENT", "JS_PRESENT",
    "JS0_FEATURES", "JS1_FEATURES", "JS2_FEATURES", "TEXTURE_FEATURES_0",
    "TEXTURE_FEATURES_1", "THREAD_FEATURES", "SHADER_PRESENT", "TILER_PRESENT",
]


class _Emitter:
    def __init__(self):
        self.lines = []
        self.accesses = 0
        self.polls = 0
        self._uniq = 0

    def uniq(self, prefix):
        self._uniq += 1
        return f"{prefix}{self._uniq}"

    def emit(self, line, accesses=0, polls=0):
        self.lines.append(line)
        self.accesses += accesses
        self.polls += polls

    def boot_probe(self, count=None):
        regs = _PROBE_REGS if count is None else [_PROBE_REGS[i % len(_PROBE_REGS)] for i in range(count)]
        self.emit("hot_begin init")
        for reg in regs:
            self.emit(f"  {self.uniq('p')} = read {reg}", accesses=1)
        self.emit("hot_end")

    def probe_pad(self, count):
        self.boot_probe(count)

    def power(self, up: bool):
        target = 1 if up else 0
        self.emit("hot_begin power")
        self.emit(f"  write PWR_CTRL, {target}", accesses=1)
        self.emit(f"  poll PWR_CTRL == {target} max 64 backoff 100", accesses=1, polls=1)
        self.emit("hot_end")

    def cache_flush(self):
        self.emit("hot_begin polling")
        self.emit("  write FLUSH_CTRL, 1", accesses=1)
        self.emit("  poll FLUSH_CTRL == 1 max 64 backoff 50", accesses=1, polls=1)
        self.emit("  write FLUSH_CTRL, 0", accesses=1)
        self.emit("  poll FLUSH_CTRL == 0 max 64 backoff 50", accesses=1, polls=1)
        self.emit("hot_end")

    def status_poll(self):
        self.emit("hot_begin polling")
        self.emit("  poll JS_PRESENT == 7 max 8 backoff 50", accesses=1, polls=1)
        self.emit("hot_end")

    def mmu_quirk(self):
        q = self.uniq("q")
        self.emit("hot_begin other")
        self.emit("  lock mmu")
        self.emit(f"  {q} = read MMU_CONFIG", accesses=1)
        self.emit(f"  write MMU_CONFIG, {q} | 0x10", accesses=1)
        self.emit("  unlock mmu")
        self.emit("hot_end")

    def irq_ack(self):
        r = self.uniq("irq")
        skip = self.uniq("skip")
        self.emit("hot_begin interrupt")
        self.emit(f"  {r} = read JOB_IRQ_STATUS", accesses=1)
        self.emit(f"  branch-if {r} == 0, {skip}")
        self.emit(f"  write JOB_IRQ_CLEAR, {r}", accesses=1)
        self.emit(f"  {self.uniq('t')} = read TILER_PRESENT", accesses=1)
        self.emit(f"  {self.uniq('s')} = read SHADER_PRESENT", accesses=1)
        self.emit(f"  label {skip}")
        self.emit("hot_end")

    def job_cycle(self, job_name, job_ticks=1000):
        f = self.uniq("f")
        self.emit("hot_begin other")
        self.emit("  lock js")
        self.emit(f"  {f} = read LATEST_FLUSH_ID", accesses=1)
        self.emit(f"  write JOB_CFG, {f} & 0xff", accesses=1)
        # submit = memory sync plus the JOB_HEAD and JOB_START writes
        self.emit(f"  submit-job {job_name}", accesses=2)
        self.emit("  unlock js")
        self.emit("hot_end")
        self.emit("  barrier-note job settle")
        self.emit(f"  delay {2 * job_ticks}")
        self.emit("hot_begin interrupt")
        self.emit("  poll JOB_IRQ_RAWSTAT == 1 max 64 backoff 100", accesses=1, polls=1)
        self.emit("hot_end")
        self.irq_ack()


def synthesize_workload(profile, dmap: DeviceMap | None = None, seed: int = 0) -> str:
    """Emit workload text for a named profile or a parameter dict.

    Deterministic for a given (profile, seed).  Access and poll totals are
    exact; the generator pads with probe segments to land on them.
    """
    if isinstance(profile, str):
        params = dict(PROFILES[profile])
    else:
        params = dict(profile)
    n_jobs = params["n_jobs"]
    target_accesses = params.get("accesses", 0)
    target_polls = params.get("n_polls", 0)
    rnd = random.Random(seed)

    em = _Emitter()
    header = [
        f"# generated workload (jobs={n_jobs}, accesses={target_accesses}, polls={target_polls}, seed={seed})"
    ]
    jobs = []
    for j in range(n_jobs):
        kind = "add" if j % 2 == 0 else "checksum"
        jobs.append(
            f"job j{j} meta={params['meta']} in={params['n_in']} out={params['n_out']} "
            f"kind={kind} const={3 + j}"
        )

    em.emit("thread 0")
    em.boot_probe()
    em.power(up=True)
    for j in range(n_jobs):
        em.cache_flush()
        em.job_cycle(f"j{j}")
    em.power(up=False)

    if target_polls and em.polls > target_polls:
        raise ValueError(f"profile wants {target_polls} polls but the base layout needs {em.polls}")
    while target_polls and em.polls < target_polls:
        em.status_poll()

    remaining = target_accesses - em.accesses
    if target_accesses and remaining < 0:
        raise ValueError(f"profile wants {target_accesses} accesses but the base layout needs {em.accesses}")
    # pad deterministically; mostly 4-read probes with a few rmw pairs mixed in
    while remaining > 0:
        if remaining >= 6 and rnd.random() < 0.25:
            em.mmu_quirk()
            remaining -= 2
        elif remaining >= 4:
            em.probe_pad(4)
            remaining -= 4
        else:
            em.probe_pad(remaining)
            remaining = 0

    text = "\n".join(header + jobs + em.lines) + "\n"
    if target_accesses:
        assert em.accesses == target_accesses, (em.accesses, target_accesses)
    if target_polls:
        assert em.polls == target_polls, (em.polls, target_polls)
    return text


def bundled_workload(name: str, dmap: DeviceMap | None = None, seed: int = 0) -> str:
    """Workload text for bundled names, including the violating trio."""
    if name in PROFILES:
        return synthesize_workload(name, dmap, seed)
    if name == "mt3":
        return _mt3_text()
    if name in ("violate-read", "violate-write", "violate-window"):
        return _violation_text(name)
    raise KeyError(name)


def _mt3_text() -> str:
    """Three threads updating a lock-guarded shared accumulator."""
    regs = [("CORE_COUNT", "MMU_CONFIG"), ("JS_PRESENT", "PWR_OVERRIDE"), ("AS_PRESENT", "AS0_MEMATTR")]
    lines = []
    for tid, (src, dst) in enumerate(regs):
        lines.append(f"thread {tid}")
        for rep in range(4):
            v = f"t{tid}v{rep}"
            lines += [
                "hot_begin other",
                f"  lock shared",
                f"  {v} = read {src}",
                f"  g_sum = g_sum + {v}",
                f"  write {dst}, g_sum & 0xff",
                f"  unlock shared",
                "hot_end",
            ]
    return "\n".join(lines) + "\n"


def _violation_text(name: str) -> str:
    """Jobs whose shaders reach outside their mapped pages."""
    if name == "violate-read":
        jobs = ["job v0 meta=2 in=1 out=1 touch=r:500"]
        submits = ["v0"]
    elif name == "violate-write":
        jobs = ["job v0 meta=2 in=1 out=1 touch=w:500"]
        submits = ["v0"]
    else:  # second job reads the first job's status page after it was unmapped
        jobs = ["job v0 meta=2 in=1 out=1", "job v1 meta=2 in=1 out=1 touch=r:1"]
        submits = ["v0", "v1"]
    em = _Emitter()
    em.emit("thread 0")
    em.boot_probe(4)
    for j in submits:
        em.job_cycle(j)
    return "\n".join(jobs + em.lines) + "\n"
