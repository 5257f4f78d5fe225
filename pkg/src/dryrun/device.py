"""Mock memory-mapped GPU: register file, job state machine, shared pages.

Registers live in a device map (one line per register, see
``parse_device_map``).  Kinds give read/write semantics:

* ``constant``      reads return the value, writes are ignored
* ``counter``       reads return then increment, writes set
* ``clear-on-read`` reads return then zero, writes set
* ``job-status``    value maintained by the job state machine
* ``power-fsm``     writes become visible after a configurable transition
                    delay (0 by default, which makes a plain r/w register)
* ``nondet``        reads draw from the device's seeded xorshift64* stream

A few register *names* additionally carry job-control wiring: a write to
``JOB_START`` launches the job whose descriptor page index sits in
``JOB_HEAD``; a write to ``JOB_IRQ_CLEAR`` acknowledges the completion
interrupt.  Job completion sets ``JOB_IRQ_RAWSTAT``/``JOB_IRQ_STATUS`` and
raises ``irq_pending``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from .errors import JobBusy, SymbolLeak, TrapFault, UnknownRegister
from .memsync import DATA, PAGE_SIZE, MemoryImage, PagePerm

MASK64 = (1 << 64) - 1

KINDS = ("constant", "counter", "clear-on-read", "job-status", "power-fsm", "nondet")

# transforms a job descriptor can request
TRANSFORM_ADD = 0
TRANSFORM_CHECKSUM = 1

DESC_MAGIC = 0x31304A44  # "JD01"
TOUCH_WRITE = 0x80000000


def xorshift64(state: int) -> int:
    """One step of the pinned xorshift64* generator."""
    state &= MASK64
    state ^= state >> 12
    state ^= (state << 25) & MASK64
    state ^= state >> 27
    return state


def xorshift64_output(state: int) -> int:
    return (state * 0x2545F4914F6CDD1D) & MASK64


@dataclass(frozen=True)
class RegisterSpec:
    addr: int
    name: str
    kind: str
    init: int = 0
    nondet_seed_dependent: bool = False


class DeviceMap:
    def __init__(self, regs: list[RegisterSpec]):
        self.by_addr: dict[int, RegisterSpec] = {}
        self.by_name: dict[str, RegisterSpec] = {}
        for spec in regs:
            if spec.addr in self.by_addr:
                raise ValueError(f"duplicate register address {spec.addr:#x}")
            if spec.name in self.by_name:
                raise ValueError(f"duplicate register name {spec.name}")
            self.by_addr[spec.addr] = spec
            self.by_name[spec.name] = spec

    def addr_of(self, name: str) -> int:
        spec = self.by_name.get(name)
        if spec is None:
            raise UnknownRegister(name)
        return spec.addr

    def canonical_text(self) -> str:
        lines = []
        for spec in sorted(self.by_addr.values(), key=lambda s: s.addr):
            lines.append(f"REG {spec.addr:#06x} {spec.name} {spec.kind} {spec.init:#x}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def parse_device_map(text: str) -> DeviceMap:
    """Parse the line-oriented map: ``REG <hex-addr> <name> <kind> <hex-init>``."""
    regs = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "REG" or len(parts) != 5:
            raise ValueError(f"device map line {line_no}: expected 'REG <addr> <name> <kind> <init>'")
        _, addr_s, name, kind, init_s = parts
        if kind not in KINDS:
            raise ValueError(f"device map line {line_no}: unknown register kind {kind!r}")
        regs.append(
            RegisterSpec(
                addr=int(addr_s, 16),
                name=name,
                kind=kind,
                init=int(init_s, 16),
                nondet_seed_dependent=(kind == "nondet"),
            )
        )
    return DeviceMap(regs)


DEFAULT_DEVICE_MAP_TEXT = """\
# Desk-scale mock GPU register map
REG 0x0000 GPU_ID constant 0x72120000
REG 0x0004 CORE_FEATURES constant 0x809
REG 0x0008 CORE_COUNT constant 0x4
REG 0x000c L2_FEATURES constant 0x7120206
REG 0x0010 L2_COUNT constant 0x1
REG 0x0014 TILER_FEATURES constant 0x809
REG 0x0018 MEM_FEATURES constant 0x301
REG 0x001c MMU_FEATURES constant 0x2830
REG 0x0020 AS_PRESENT constant 0xff
REG 0x0024 JS_PRESENT constant 0x7
REG 0x0028 JS0_FEATURES constant 0x20e
REG 0x002c JS1_FEATURES constant 0x1fe
REG 0x0030 JS2_FEATURES constant 0x7e
REG 0x0034 TEXTURE_FEATURES_0 constant 0xfe001e
REG 0x0038 TEXTURE_FEATURES_1 constant 0xffff
REG 0x003c THREAD_FEATURES constant 0x400ffff
REG 0x0040 SHADER_PRESENT constant 0xf
REG 0x0044 TILER_PRESENT constant 0x1
REG 0x0100 MMU_CONFIG power-fsm 0x0
REG 0x0104 AS0_MEMATTR power-fsm 0x0
REG 0x0108 AS0_TRANSTAB power-fsm 0x0
REG 0x0110 PWR_CTRL power-fsm 0x0
REG 0x0114 PWR_OVERRIDE power-fsm 0x0
REG 0x0120 FLUSH_CTRL power-fsm 0x0
REG 0x0130 FAULT_STATUS clear-on-read 0x0
REG 0x0140 CYCLE_COUNT counter 0x0
REG 0x0144 TIMESTAMP counter 0x0
REG 0x0150 LATEST_FLUSH_ID nondet 0x0
REG 0x0200 JOB_HEAD power-fsm 0x0
REG 0x0204 JOB_CFG power-fsm 0x0
REG 0x0208 JOB_START job-status 0x0
REG 0x020c JOB_STATUS job-status 0x0
REG 0x0210 JOB_IRQ_RAWSTAT job-status 0x0
REG 0x0214 JOB_IRQ_STATUS clear-on-read 0x0
REG 0x0218 JOB_IRQ_CLEAR power-fsm 0x0
"""


def default_device_map() -> DeviceMap:
    return parse_device_map(DEFAULT_DEVICE_MAP_TEXT)


@dataclass
class RegisterAccess:
    """One concrete MMIO access as the device sees it."""

    is_write: bool
    addr: int
    value: int = 0  # write value; must be concrete by the time it gets here


@dataclass
class JobResult:
    job_page: int
    status_page: int
    out_pages: list[int] = field(default_factory=list)


def pack_descriptor(kind: int, const: int, status_page: int, shader, in_pages, out_pages, touch=()) -> bytes:
    body = struct.pack(
        "<IIQIIIII",
        DESC_MAGIC,
        kind,
        const & MASK64,
        status_page,
        len(shader),
        len(in_pages),
        len(out_pages),
        len(touch),
    )
    for idx in list(shader) + list(in_pages) + list(out_pages) + list(touch):
        body += struct.pack("<I", idx)
    return body


def parse_descriptor(raw: bytes) -> dict:
    magic, kind, const, status_page, n_sh, n_in, n_out, n_touch = struct.unpack_from("<IIQIIIII", raw, 0)
    if magic != DESC_MAGIC:
        raise TrapFault(-1, "bad job descriptor magic")
    pos = struct.calcsize("<IIQIIIII")
    idxs = list(struct.unpack_from(f"<{n_sh + n_in + n_out + n_touch}I", raw, pos))
    shader = idxs[:n_sh]
    in_pages = idxs[n_sh : n_sh + n_in]
    out_pages = idxs[n_sh + n_in : n_sh + n_in + n_out]
    touch = idxs[n_sh + n_in + n_out :]
    return {
        "kind": kind,
        "const": const,
        "status_page": status_page,
        "shader": shader,
        "in": in_pages,
        "out": out_pages,
        "touch": touch,
    }


class Device:
    """The client-side GPU model.  Single logical executor; callers hand it
    one message at a time in arrival order, advancing its clock first."""

    def __init__(self, dmap: DeviceMap, mem: MemoryImage | None = None, seed: int = 1,
                 tick_cost: dict | None = None):
        self.dmap = dmap
        self.mem = mem if mem is not None else MemoryImage("device")
        self.seed = seed
        self.tick_cost = {"job": 1000, "access": 1, "fsm": 0}
        if tick_cost:
            self.tick_cost.update(tick_cost)
        self.now = 0
        self._initial_mem = self.mem.snapshot()
        self.reset()

    # -- lifecycle ---------------------------------------------------------

    def reset(self) -> None:
        self.regs = {spec.addr: spec.init for spec in self.dmap.by_addr.values()}
        self.job_fsm = "idle"
        self.irq_pending = False
        self.pagetable: dict[int, PagePerm] = {}
        self._prng = self.seed if self.seed != 0 else 0x9E3779B97F4A7C15
        self._pending_fsm: dict[int, tuple[int, int]] = {}  # addr -> (target, due)
        self._job_done_at: int | None = None
        self._job_id: int | None = None
        self._job_desc: dict | None = None
        self.now = 0
        self.mem.restore(self._initial_mem)

    def seed_input_pages(self, pages: dict[int, bytes]) -> None:
        """Install device-local program data; refreshes the reset snapshot."""
        for idx, data in pages.items():
            self.mem.ensure_page(idx, DATA)
            self.mem.write(idx, 0, data[:PAGE_SIZE], guard=False)
            self.mem.baseline[idx] = bytes(self.mem.pages[idx])
        self._initial_mem = self.mem.snapshot()

    # -- time --------------------------------------------------------------

    def advance_to(self, t: int) -> None:
        """Move device-local time forward, firing due internal transitions."""
        if t < self.now:
            return
        if self._job_done_at is not None and self._job_done_at <= t:
            done_at = self._job_done_at
            self.now = max(self.now, done_at)
            self.run_job()
        for addr in list(self._pending_fsm):
            target, due = self._pending_fsm[addr]
            if due <= t:
                self.regs[addr] = target
                del self._pending_fsm[addr]
        self.now = max(self.now, t)

    # -- register file -----------------------------------------------------

    def apply_access(self, acc: RegisterAccess, now: int | None = None) -> int | None:
        """Apply one access at time ``now``; returns the value for reads."""
        if now is not None:
            self.advance_to(now)
        spec = self.dmap.by_addr.get(acc.addr)
        if spec is None:
            raise UnknownRegister(acc.addr)
        if not isinstance(acc.value, int):
            raise SymbolLeak(f"non-concrete value reached register {spec.name}")

        if acc.is_write:
            value = acc.value & MASK64
            if spec.name == "JOB_START":
                self._start_job(value)
            elif spec.name == "JOB_IRQ_CLEAR":
                self.irq_pending = False
                self.regs[self.dmap.addr_of("JOB_IRQ_RAWSTAT")] = 0
            elif spec.kind == "power-fsm":
                delay = self.tick_cost.get("fsm", 0)
                if delay > 0:
                    self._pending_fsm[acc.addr] = (value, self.now + delay)
                else:
                    self.regs[acc.addr] = value
            elif spec.kind == "constant":
                pass
            else:
                self.regs[acc.addr] = value
            return None

        if spec.kind == "clear-on-read":
            value = self.regs[acc.addr]
            self.regs[acc.addr] = 0
            return value
        if spec.kind == "counter":
            value = self.regs[acc.addr]
            self.regs[acc.addr] = (value + 1) & MASK64
            return value
        if spec.kind == "nondet":
            self._prng = xorshift64(self._prng)
            value = xorshift64_output(self._prng)
            self.regs[acc.addr] = value
            return value
        return self.regs[acc.addr]

    # -- job state machine ---------------------------------------------------

    def _start_job(self, value: int) -> None:
        if self.job_fsm != "idle":
            raise JobBusy(f"JOB_START while {self.job_fsm}")
        desc_page = self.regs[self.dmap.addr_of("JOB_HEAD")]
        desc = parse_descriptor(self.mem.read(desc_page, guard=False))
        self._job_desc = desc
        self._job_id = value
        self._map_job_pages(desc_page, desc)
        self.job_fsm = "running"
        self.regs[self.dmap.addr_of("JOB_STATUS")] = 1
        self.regs[self.dmap.addr_of("JOB_START")] = value
        self._job_done_at = self.now + self.tick_cost["job"]
        self._desc_page = desc_page

    def _map_job_pages(self, desc_page: int, desc: dict) -> None:
        table: dict[int, PagePerm] = {
            desc_page: PagePerm(True, False, True, True),
            desc["status_page"]: PagePerm(True, True, False, True),
        }
        for idx in desc["shader"]:
            table[idx] = PagePerm(True, False, True, True)
        for idx in desc["in"]:
            table[idx] = PagePerm(True, False, False, True)
        for idx in desc["out"]:
            table[idx] = PagePerm(True, True, False, True)
        self.pagetable = table

    def _gpu_read(self, idx: int) -> bytes:
        perm = self.pagetable.get(idx)
        if perm is None or not perm.mapped_to_device or not perm.readable:
            self._fault(idx)
        self.mem.ensure_page(idx, self.mem.page_class.get(idx, DATA))
        return self.mem.read(idx, guard=False)

    def _gpu_write(self, idx: int, offset: int, data: bytes) -> None:
        perm = self.pagetable.get(idx)
        if perm is None or not perm.mapped_to_device or not perm.writable:
            self._fault(idx)
        self.mem.ensure_page(idx, self.mem.page_class.get(idx, DATA))
        self.mem.write(idx, offset, data, guard=False)

    def _fault(self, idx: int):
        self.regs[self.dmap.addr_of("FAULT_STATUS")] = 0x100 | (idx & 0xFF)
        raise TrapFault(idx, "GPU touched a page not mapped to the device")

    def run_job(self) -> JobResult:
        """Execute the outstanding job's scripted transform."""
        if self.job_fsm != "running":
            raise JobBusy("run_job without a running job")
        desc = self._job_desc
        for idx in [self._desc_page, desc["status_page"], *desc["shader"]]:
            perm = self.pagetable.get(idx)
            if perm is None or not perm.mapped_to_device:
                self._fault(idx)

        for entry in desc["touch"]:
            idx = entry & ~TOUCH_WRITE
            if entry & TOUCH_WRITE:
                self._gpu_write(idx, 0, b"\x00")
            else:
                self._gpu_read(idx)

        if desc["kind"] == TRANSFORM_ADD:
            table = bytes((i + desc["const"]) & 0xFF for i in range(256))
            for src, dst in zip(desc["in"], desc["out"]):
                self._gpu_write(dst, 0, self._gpu_read(src).translate(table))
        elif desc["kind"] == TRANSFORM_CHECKSUM:
            if desc["out"]:
                sums = bytearray(PAGE_SIZE)
                for k, src in enumerate(desc["in"]):
                    total = sum(self._gpu_read(src)) & MASK64
                    sums[8 * k : 8 * k + 8] = struct.pack("<Q", total)
                self._gpu_write(desc["out"][0], 0, bytes(sums))
        else:
            raise TrapFault(self._desc_page, f"unknown transform {desc['kind']}")

        status_word = struct.pack("<Q", ((self._job_id & 0xFFFFFF) << 8) | 0x01)
        self._gpu_write(desc["status_page"], 0, status_word)

        self.job_fsm = "done"
        self._job_done_at = None
        self.irq_pending = True
        self.regs[self.dmap.addr_of("JOB_STATUS")] = 2
        self.regs[self.dmap.addr_of("JOB_IRQ_RAWSTAT")] = 1
        self.regs[self.dmap.addr_of("JOB_IRQ_STATUS")] = 1
        return JobResult(self._desc_page, desc["status_page"], list(desc["out"]))

    def finish_job(self) -> None:
        """Called by the device-side shim once the completion was forwarded."""
        if self.job_fsm == "done":
            self.job_fsm = "idle"
            self.pagetable = {}

    def force_complete_job(self) -> None:
        """Jump device time to the pending completion (replay helper)."""
        if self._job_done_at is not None:
            self.advance_to(self._job_done_at)

    @property
    def job_done_at(self) -> int | None:
        return self._job_done_at

    # -- identity ------------------------------------------------------------

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for addr in sorted(self.regs):
            h.update(struct.pack("<IQ", addr, self.regs[addr]))
        h.update(self.job_fsm.encode())
        h.update(b"1" if self.irq_pending else b"0")
        h.update(struct.pack("<Q", self._prng))
        for idx in sorted(self.pagetable):
            p = self.pagetable[idx]
            h.update(struct.pack("<I????", idx, p.readable, p.writable, p.executable, p.mapped_to_device))
        h.update(self.mem.digest().encode())
        return h.hexdigest()
