"""Simulated ordered channel between the driver side and the device side.

All timing is virtual, in integer microseconds.  A request/response
exchange costs::

    elapsed = rtt + ser(request payload) + ser(response payload) + processing

with serialization at the configured bandwidth; payload excludes the
22-byte frame envelope, so zero-payload exchanges cost exactly one RTT
plus device processing.  Delivery is lossless and FIFO per direction;
when computed arrivals would reorder, the later send is clamped behind
the earlier one.  The device is a single executor: message handling
starts no earlier than the previous message finished.

Frames (also the optional socket format): magic ``CDY1``, u32 length of
everything after the length field, u16 message kind, u64 sequence number,
payload, u32 CRC32 over all preceding bytes.  Little-endian throughout.
"""

from __future__ import annotations

import heapq
import struct
import zlib
from dataclasses import dataclass, field

from .deferral import Commit, CommitResult, ReadEntry, wire_expr
from .errors import AwaitBeforeSend, CorruptStream
from .exprs import BINOPS

MAGIC = b"CDY1"
FRAME_OVERHEAD = 4 + 4 + 2 + 8 + 4

# message kinds
SYNC_ACCESS = 1
SYNC_ACCESS_RESP = 2
COMMIT_REQUEST = 3
COMMIT_RESPONSE = 4
LOOP_OFFLOAD = 5
LOOP_RESULT = 6
MEM_PUSH = 7
MEM_PULL = 8
IRQ_EVENT = 9
REPLAY_PREFIX = 10
ACK = 11

KIND_NAMES = {
    SYNC_ACCESS: "SyncAccess",
    SYNC_ACCESS_RESP: "SyncAccessResp",
    COMMIT_REQUEST: "CommitRequest",
    COMMIT_RESPONSE: "CommitResponse",
    LOOP_OFFLOAD: "LoopOffload",
    LOOP_RESULT: "LoopResult",
    MEM_PUSH: "MemPush",
    MEM_PULL: "MemPull",
    IRQ_EVENT: "IrqEvent",
    REPLAY_PREFIX: "ReplayPrefix",
    ACK: "Ack",
}

# request kinds that count as one network round trip
_ROUND_TRIP_KINDS = {SYNC_ACCESS, COMMIT_REQUEST, LOOP_OFFLOAD, MEM_PUSH, MEM_PULL, REPLAY_PREFIX}


@dataclass(frozen=True)
class NetworkConfig:
    rtt_us: int
    bandwidth_bps: int
    name: str = "custom"

    def __post_init__(self):
        if self.rtt_us <= 0 or self.bandwidth_bps <= 0:
            raise ValueError("rtt and bandwidth must be positive")

    def ser_us(self, payload_bytes: int) -> int:
        bits = payload_bytes * 8
        return (bits * 1_000_000 + self.bandwidth_bps - 1) // self.bandwidth_bps


WIFI = NetworkConfig(20_000, 80_000_000, "wifi")
CELLULAR = NetworkConfig(50_000, 40_000_000, "cellular")
PRESETS = {"wifi": WIFI, "cellular": CELLULAR}


class SimClock:
    def __init__(self):
        self.now = 0

    def advance_to(self, t: int) -> None:
        if t > self.now:
            self.now = t


class EventQueue:
    """Deterministic virtual-time event queue (ties break by schedule order)."""

    def __init__(self, clock: SimClock):
        self.clock = clock
        self._heap: list = []
        self._seq = 0

    def schedule(self, at: int, fn) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, fn))

    def empty(self) -> bool:
        return not self._heap

    def next_time(self):
        return self._heap[0][0] if self._heap else None

    def run_next(self) -> bool:
        if not self._heap:
            return False
        at, _, fn = heapq.heappop(self._heap)
        self.clock.advance_to(at)
        fn()
        return True

    def run_until(self, t: int) -> None:
        while self._heap and self._heap[0][0] <= t:
            self.run_next()
        self.clock.advance_to(t)

    def clear(self) -> None:
        self._heap.clear()


# --- wire encoding -----------------------------------------------------------


def pack_frame(kind: int, seq: int, payload: bytes) -> bytes:
    body = MAGIC + struct.pack("<IHQ", 2 + 8 + len(payload) + 4, kind, seq) + payload
    return body + struct.pack("<I", zlib.crc32(body))


def unpack_frame(data: bytes):
    if len(data) < FRAME_OVERHEAD or data[:4] != MAGIC:
        raise CorruptStream("bad frame magic")
    length, kind, seq = struct.unpack_from("<IHQ", data, 4)
    end = 8 + length
    if end > len(data):
        raise CorruptStream("frame truncated")
    payload = data[18 : end - 4]
    (crc,) = struct.unpack_from("<I", data, end - 4)
    if zlib.crc32(data[: end - 4]) != crc:
        raise CorruptStream("frame CRC mismatch")
    return kind, seq, bytes(payload), data[end:]


def encode_wire_expr(expr) -> bytes:
    """Postfix encoding over literals, commit-local read indexes, binops."""
    out = bytearray()

    def walk(node):
        tag = node[0]
        if tag == "lit":
            out.append(0)
            out.extend(struct.pack("<Q", node[1]))
        elif tag == "sym":
            out.append(1)
            out.extend(struct.pack("<H", node[1]))
        else:
            walk(node[1])
            walk(node[2])
            out.append(2)
            out.append(BINOPS.index(tag))

    walk(expr)
    return bytes(out)


def decode_wire_expr(blob: bytes, offset: int = 0):
    stack = []
    pos = offset
    n = len(blob)
    while pos < n:
        op = blob[pos]
        pos += 1
        if op == 0:
            stack.append(("lit", struct.unpack_from("<Q", blob, pos)[0]))
            pos += 8
        elif op == 1:
            stack.append(("sym", struct.unpack_from("<H", blob, pos)[0]))
            pos += 2
        elif op == 2:
            b = stack.pop()
            a = stack.pop()
            stack.append((BINOPS[blob[pos]], a, b))
            pos += 1
        else:
            raise CorruptStream(f"bad expression opcode {op}")
    if len(stack) != 1:
        raise CorruptStream("unbalanced expression stream")
    return stack[0]


def encode_sync_access(is_write: bool, addr: int, value: int = 0) -> bytes:
    return struct.pack("<BIQ", 1 if is_write else 0, addr, value)


def decode_sync_access(payload: bytes):
    w, addr, value = struct.unpack("<BIQ", payload)
    return bool(w), addr, value


def encode_commit(commit: Commit) -> bytes:
    local = {e.sym: i for i, e in enumerate(commit.reads())}
    out = bytearray(struct.pack("<QiiI", commit.commit_id, commit.site[0], commit.site[1], len(commit.entries)))
    for entry in commit.entries:
        if isinstance(entry, ReadEntry):
            out += struct.pack("<BI", 0, entry.addr)
        else:
            blob = encode_wire_expr(wire_expr(entry.expr, local))
            out += struct.pack("<BIH", 1, entry.addr, len(blob))
            out += blob
    return bytes(out)


def decode_commit(payload: bytes):
    commit_id, thread, pc, n = struct.unpack_from("<QiiI", payload, 0)
    pos = struct.calcsize("<QiiI")
    entries = []
    for _ in range(n):
        tag, addr = struct.unpack_from("<BI", payload, pos)
        pos += 5
        if tag == 0:
            entries.append(("r", addr))
        else:
            (blen,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            entries.append(("w", addr, decode_wire_expr(payload[pos : pos + blen])))
            pos += blen
    return commit_id, (thread, pc), entries


def encode_commit_response(result: CommitResult) -> bytes:
    out = struct.pack("<QI", result.commit_id, len(result.read_values))
    return out + b"".join(struct.pack("<Q", v) for v in result.read_values)


def decode_commit_response(payload: bytes) -> CommitResult:
    commit_id, n = struct.unpack_from("<QI", payload, 0)
    values = list(struct.unpack_from(f"<{n}Q", payload, 12)) if n else []
    return CommitResult(commit_id, values)


def encode_loop_offload(addr: int, cmpop: str, operand: int, max_iters: int,
                        backoff: int, captured: dict) -> bytes:
    out = bytearray(struct.pack("<IBQIIH", addr, BINOPS.index(cmpop),
                                operand, max_iters, backoff, len(captured)))
    for name, value in sorted(captured.items()):
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb + struct.pack("<Q", value)
    return bytes(out)


def decode_loop_offload(payload: bytes):
    addr, op_i, operand, max_iters, backoff, n = struct.unpack_from("<IBQIIH", payload, 0)
    pos = struct.calcsize("<IBQIIH")
    captured = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", payload, pos)
        pos += 2
        name = payload[pos : pos + ln].decode()
        pos += ln
        (val,) = struct.unpack_from("<Q", payload, pos)
        pos += 8
        captured[name] = val
    return addr, BINOPS[op_i], operand, max_iters, backoff, captured


def encode_loop_result(iterations: int, final_value: int, updated: dict | None = None) -> bytes:
    updated = updated or {}
    out = bytearray(struct.pack("<IQH", iterations, final_value, len(updated)))
    for name, value in sorted(updated.items()):
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb + struct.pack("<Q", value)
    return bytes(out)


def decode_loop_result(payload: bytes):
    iterations, final_value, n = struct.unpack_from("<IQH", payload, 0)
    pos = struct.calcsize("<IQH")
    updated = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", payload, pos)
        pos += 2
        name = payload[pos : pos + ln].decode()
        pos += ln
        (val,) = struct.unpack_from("<Q", payload, pos)
        pos += 8
        updated[name] = val
    return iterations, final_value, updated


# --- the channel -------------------------------------------------------------


@dataclass
class Ticket:
    seq: int
    kind: int
    ready_at: int
    response_kind: int
    response_payload: bytes
    elapsed: int
    awaited: bool = False
    delivered: bool = False
    on_ready: object = None


class Channel:
    """Driver<->device pipe under one virtual clock.

    The device handler runs eagerly when a message is issued (its effects
    are timestamped with the virtual arrival time), and the response
    becomes visible to the driver side at ``ready_at`` through the event
    queue.  Device-initiated pushes travel the other way with the same
    rules.
    """

    def __init__(self, config: NetworkConfig, clock: SimClock, events: EventQueue, handler):
        self.config = config
        self.clock = clock
        self.events = events
        self.handler = handler  # handler(kind, payload, start_time) -> (kind, payload, processing)
        self.bytes_to_device = 0
        self.bytes_from_device = 0
        self.round_trips = 0
        self.requests = 0
        self._seq_to_device = 0
        self._seq_from_device = 0
        self._arrival_to_device = 0
        self._arrival_from_device = 0
        self.device_busy_until = 0
        self.on_push = None  # runtime hook for device-initiated messages

    # -- driver -> device ------------------------------------------------------

    def issue(self, kind: int, payload: bytes) -> Ticket:
        t0 = self.clock.now
        self._seq_to_device += 1
        frame = pack_frame(kind, self._seq_to_device, payload)
        self.bytes_to_device += len(frame)
        half_out = self.config.rtt_us // 2
        half_back = self.config.rtt_us - half_out

        arrival = t0 + half_out + self.config.ser_us(len(payload))
        arrival = max(arrival, self._arrival_to_device)
        self._arrival_to_device = arrival

        start = max(arrival, self.device_busy_until)
        resp_kind, resp_payload, processing = self.handler(kind, payload, start)
        self.device_busy_until = start + processing

        self._seq_from_device += 1
        resp_frame = pack_frame(resp_kind, self._seq_from_device, resp_payload)
        self.bytes_from_device += len(resp_frame)
        ready = start + processing + self.config.ser_us(len(resp_payload)) + half_back
        ready = max(ready, self._arrival_from_device)
        self._arrival_from_device = ready

        if kind in _ROUND_TRIP_KINDS:
            self.round_trips += 1
        self.requests += 1

        ticket = Ticket(self._seq_to_device, kind, ready, resp_kind, resp_payload, ready - t0)
        self.events.schedule(ready, lambda: self._deliver(ticket))
        return ticket

    def _deliver(self, ticket: Ticket) -> None:
        if ticket.delivered:
            return
        ticket.delivered = True
        if ticket.on_ready is not None:
            ticket.on_ready(ticket)

    def send_async(self, kind: int, payload: bytes, on_ready=None) -> Ticket:
        ticket = self.issue(kind, payload)
        ticket.on_ready = on_ready
        return ticket

    def await_ticket(self, ticket: Ticket):
        if ticket.awaited:
            raise AwaitBeforeSend("ticket already awaited")
        ticket.awaited = True
        self.events.run_until(ticket.ready_at)
        return (ticket.response_kind, ticket.response_payload), ticket.elapsed

    def send_request(self, kind: int, payload: bytes):
        """Synchronous exchange; returns ((kind, payload), elapsed)."""
        return self.await_ticket(self.issue(kind, payload))

    # -- device -> driver ------------------------------------------------------

    def push_from_device(self, kind: int, payload: bytes, depart: int, count_round_trip: bool = True) -> int:
        """Device-initiated message; returns driver-side arrival time."""
        self._seq_from_device += 1
        frame = pack_frame(kind, self._seq_from_device, payload)
        self.bytes_from_device += len(frame)
        half = self.config.rtt_us - self.config.rtt_us // 2
        arrival = depart + self.config.ser_us(len(payload)) + half
        arrival = max(arrival, self._arrival_from_device)
        self._arrival_from_device = arrival
        if count_round_trip and kind in _ROUND_TRIP_KINDS:
            self.round_trips += 1
            # the driver-side Ack rides back; account for its frame
            self._seq_to_device += 1
            self.bytes_to_device += len(pack_frame(ACK, self._seq_to_device, b""))
        if self.on_push is not None:
            self.events.schedule(arrival, lambda: self.on_push(kind, payload, arrival))
        return arrival
