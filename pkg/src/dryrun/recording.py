"""Interaction recordings: append-only logs, files, and device-side replay.

A recording holds the device-observed interaction stream: register reads
and writes with their concrete values, interrupts, memory deltas in both
directions, and job boundaries.  Replay feeds the stream back into a
device with no driver present: writes are stimuli, reads are compared
against the recorded values (nondet-kind registers exempt), and memory
pushes are applied with the job input pages substituted by fresh data.

File format: ``CODYREC1`` magic, header (version, device-map hash,
workload hash, mode, network config), length-prefixed entries
(u16 kind, u64 seq, payload), the delta payload blob, and a 32-byte
keyed digest over everything before it.  Little-endian.  The digest key
is a fixed placeholder standing in for the recording signature.
"""

from __future__ import annotations

import hmac
import hashlib
import struct
from dataclasses import dataclass, field

from . import memsync
from .device import Device, RegisterAccess
from .errors import (
    DeviceMapMismatch,
    DigestMismatch,
    DivergenceError,
    RecordAfterFinalize,
)

MAGIC = b"CODYREC1"
VERSION = 1
_DIGEST_KEY = b"dryrun-recording-signing-key-v1"

# entry kinds
REG_READ = 1
REG_WRITE = 2
IRQ = 3
MEM_PUSH = 4
MEM_PULL = 5
JOB_BOUNDARY = 6

KIND_NAMES = {
    REG_READ: "RegRead",
    REG_WRITE: "RegWrite",
    IRQ: "Irq",
    MEM_PUSH: "MemPush",
    MEM_PULL: "MemPull",
    JOB_BOUNDARY: "JobBoundary",
}


@dataclass(frozen=True)
class LogEntry:
    kind: int
    addr: int = 0  # register entries
    value: int = 0  # register value / job sequence number
    blob: bytes = b""  # delta payload for memory entries

    def brief(self) -> str:
        if self.kind in (REG_READ, REG_WRITE):
            return f"{KIND_NAMES[self.kind]}({self.addr:#x}, {self.value:#x})"
        if self.kind == JOB_BOUNDARY:
            return f"JobBoundary({self.value})"
        return KIND_NAMES[self.kind]


@dataclass
class Recording:
    device_map_hash: str
    workload_hash: str
    mode: str
    net_name: str
    rtt_us: int
    bandwidth_bps: int
    entries: list = field(default_factory=list)
    digest: bytes = b""

    def compute_digest(self) -> bytes:
        return hmac.new(_DIGEST_KEY, self._signed_bytes(), hashlib.sha256).digest()

    def _signed_bytes(self) -> bytes:
        head, body, blob = _serialize_parts(self)
        return head + body + blob

    def verify(self) -> None:
        if self.digest != self.compute_digest():
            raise DigestMismatch("recording digest does not verify")


class Recorder:
    """Append-only log owned by the run's event loop."""

    def __init__(self, device_map_hash="", workload_hash="", mode="", net_name="", rtt_us=0, bandwidth_bps=0):
        self.recording = Recording(device_map_hash, workload_hash, mode, net_name, rtt_us, bandwidth_bps)
        self.thread_tags: list = []  # parallel to entries; reviewer aid, not serialized
        self._finalized = False

    def __len__(self):
        return len(self.recording.entries)

    def record(self, entry: LogEntry, thread: int = -1) -> int:
        if self._finalized:
            raise RecordAfterFinalize("recording already finalized")
        self.recording.entries.append(entry)
        self.thread_tags.append(thread)
        return len(self.recording.entries) - 1

    def truncate(self, n: int) -> None:
        if self._finalized:
            raise RecordAfterFinalize("recording already finalized")
        del self.recording.entries[n:]
        del self.thread_tags[n:]

    def finalize(self) -> Recording:
        if not self._finalized:
            self.recording.digest = self.recording.compute_digest()
            self._finalized = True
        return self.recording


# --- serialization ------------------------------------------------------------


def _serialize_parts(rec: Recording):
    def hstr(s: str) -> bytes:
        b = s.encode()
        return struct.pack("<H", len(b)) + b

    head = MAGIC + struct.pack("<I", VERSION)
    head += bytes.fromhex(rec.device_map_hash) if rec.device_map_hash else bytes(32)
    head += bytes.fromhex(rec.workload_hash) if rec.workload_hash else bytes(32)
    head += hstr(rec.mode) + hstr(rec.net_name)
    head += struct.pack("<QQ", rec.rtt_us, rec.bandwidth_bps)

    body = bytearray(struct.pack("<I", len(rec.entries)))
    blob = bytearray()
    for seq, e in enumerate(rec.entries):
        body.extend(struct.pack("<HQ", e.kind, seq))
        if e.kind in (REG_READ, REG_WRITE):
            body.extend(struct.pack("<IQ", e.addr, e.value))
        elif e.kind == JOB_BOUNDARY:
            body.extend(struct.pack("<Q", e.value))
        elif e.kind in (MEM_PUSH, MEM_PULL):
            body.extend(struct.pack("<QI", len(blob), len(e.blob)))
            blob.extend(e.blob)
        # IRQ carries no payload
    return head, bytes(body), bytes(blob)


def save_recording(rec: Recording, path: str) -> None:
    head, body, blob = _serialize_parts(rec)
    digest = rec.digest or rec.compute_digest()
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(body)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(digest)


def load_recording(path: str) -> Recording:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise DigestMismatch("not a recording file")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != VERSION:
        raise DigestMismatch(f"unsupported recording version {version}")
    dm_hash = data[pos : pos + 32].hex()
    pos += 32
    wl_hash = data[pos : pos + 32].hex()
    pos += 32

    def rstr():
        nonlocal pos
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        s = data[pos : pos + n].decode()
        pos += n
        return s

    mode = rstr()
    net_name = rstr()
    rtt, bw = struct.unpack_from("<QQ", data, pos)
    pos += 16
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    raw_entries = []
    for _ in range(count):
        kind, _seq = struct.unpack_from("<HQ", data, pos)
        pos += 10
        if kind in (REG_READ, REG_WRITE):
            addr, value = struct.unpack_from("<IQ", data, pos)
            pos += 12
            raw_entries.append((kind, addr, value, 0, 0))
        elif kind == JOB_BOUNDARY:
            (value,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            raw_entries.append((kind, 0, value, 0, 0))
        elif kind in (MEM_PUSH, MEM_PULL):
            off, ln = struct.unpack_from("<QI", data, pos)
            pos += 12
            raw_entries.append((kind, 0, 0, off, ln))
        else:
            raw_entries.append((kind, 0, 0, 0, 0))
    (blob_len,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    blob = data[pos : pos + blob_len]
    pos += blob_len
    digest = data[pos : pos + 32]
    if len(digest) != 32:
        raise DigestMismatch("recording truncated before digest")

    rec = Recording(dm_hash, wl_hash, mode, net_name, rtt, bw, digest=digest)
    for kind, addr, value, off, ln in raw_entries:
        blob_part = bytes(blob[off : off + ln]) if kind in (MEM_PUSH, MEM_PULL) else b""
        rec.entries.append(LogEntry(kind, addr, value, blob_part))
    rec.verify()
    return rec


# --- replay -------------------------------------------------------------------


@dataclass
class ReplayReport:
    outputs: dict  # job sequence -> list of output page bytes
    divergence: int | None = None
    entries_replayed: int = 0


def snap_to_job_boundary(entries, upto: int) -> int:
    """Round a prefix end down to the last job boundary at or before it."""
    if upto >= len(entries):
        return len(entries)
    snapped = 0
    for i in range(upto, -1, -1):
        if i < len(entries) and entries[i].kind == JOB_BOUNDARY:
            snapped = i
            break
    return snapped


def _is_transition_kind(device: Device, addr: int) -> bool:
    spec = device.dmap.by_addr.get(addr)
    return spec is not None and spec.kind in ("job-status", "power-fsm")


def feed_device_prefix(recording: Recording, upto: int, device: Device) -> int:
    """Fast-forward a reset device by the recorded stimuli in [0, upto).

    Reads are re-applied too (they carry side effects: clear-on-read,
    counters, the nondet stream) and checked against recorded values.
    Returns the number of entries consumed.
    """
    for index in range(upto):
        entry = recording.entries[index]
        _apply_entry_to_device(device, entry, index)
    return upto


def replay_prefix(recording: Recording, upto: int, device: Device) -> int:
    """Rewind recovery: reset the device and fast-forward it to ``upto``.

    The prefix end snaps down to the last job boundary, since mid-job
    device state is not reconstructible from the outside.  Returns the
    snapped index; the driver side fast-forwards itself by re-executing
    its program against the same prefix (see the runtime's recovery path).
    No network messages are involved.
    """
    if upto > len(recording.entries):
        raise DivergenceError(upto, "prefix end beyond the recording")
    snapped = snap_to_job_boundary(recording.entries, upto)
    device.reset()
    feed_device_prefix(recording, snapped, device)
    return snapped


def _apply_entry_to_device(device: Device, entry: LogEntry, index: int,
                           strict_reads: bool = True) -> None:
    if entry.kind == REG_WRITE:
        device.apply_access(RegisterAccess(True, entry.addr, entry.value))
    elif entry.kind == REG_READ:
        got = device.apply_access(RegisterAccess(False, entry.addr))
        if got != entry.value and _is_transition_kind(device, entry.addr) and device.job_done_at is not None:
            # a busy-wait read that recorded the post-transition value: let
            # the device catch up the way a replayer polling would
            device.force_complete_job()
            got = device.apply_access(RegisterAccess(False, entry.addr))
        if strict_reads and got != entry.value:
            spec = device.dmap.by_addr.get(entry.addr)
            if spec is None or spec.kind != "nondet":
                raise DivergenceError(index, f"read {entry.addr:#x} got {got:#x} want {entry.value:#x}")
    elif entry.kind == MEM_PUSH:
        memsync.apply_delta(device.mem, memsync.decode_delta(entry.blob))
    elif entry.kind == MEM_PULL:
        # regenerate the device-side delta to keep baselines and generations
        # marching exactly as they did at record time
        memsync.build_delta(device.mem, {memsync.METASTATE, memsync.UNKNOWN})
        memsync.commit_baseline(device.mem, {memsync.METASTATE, memsync.UNKNOWN})
        device.finish_job()
    elif entry.kind == IRQ:
        device.force_complete_job()
    # JOB_BOUNDARY is a marker only


def replay(recording: Recording, device: Device, new_input_pages=None) -> ReplayReport:
    """Re-execute a recording against a device with no driver and no network.

    ``new_input_pages`` is a flat list of 4096-byte pages consumed in job
    order; each job's input pages are substituted right before its start.
    """
    recording.verify()
    if recording.device_map_hash and recording.device_map_hash != device.dmap.fingerprint():
        raise DeviceMapMismatch("recording was made against a different device map")

    device.reset()
    inputs = list(new_input_pages or [])
    next_input = 0
    outputs: dict = {}
    job_pages: dict = {}
    current_job = None
    job_head_addr = device.dmap.addr_of("JOB_HEAD")
    job_start_addr = device.dmap.addr_of("JOB_START")
    divergence = None
    replayed = 0

    for index, entry in enumerate(recording.entries):
        if entry.kind == JOB_BOUNDARY:
            current_job = entry.value
            replayed += 1
            continue
        if entry.kind == REG_WRITE and entry.addr == job_start_addr:
            # substitute fresh inputs before the job consumes them
            desc_page = device.regs[job_head_addr]
            from .device import parse_descriptor

            desc = parse_descriptor(device.mem.read(desc_page, guard=False))
            for page in desc["in"]:
                if next_input < len(inputs):
                    data = inputs[next_input]
                    next_input += 1
                    device.mem.write(page, 0, data[: memsync.PAGE_SIZE].ljust(memsync.PAGE_SIZE, b"\x00"),
                                     guard=False)
            job_pages[current_job] = desc["out"]
        try:
            _apply_entry_to_device(device, entry, index)
        except DivergenceError as err:
            divergence = err.index
            break
        replayed += 1
        if entry.kind == IRQ and current_job is not None:
            outputs[current_job] = [_page_or_zeros(device, p) for p in job_pages.get(current_job, [])]

    return ReplayReport(outputs=outputs, divergence=divergence, entries_replayed=replayed)


def _page_or_zeros(device: Device, page: int) -> bytes:
    """Output pages a job never touched read back as zeros."""
    if page not in device.mem.pages:
        return bytes(memsync.PAGE_SIZE)
    return device.mem.read(page, guard=False)
