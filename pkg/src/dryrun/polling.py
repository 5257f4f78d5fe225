"""Simple polling loops executed device-side in a single round trip.

Iteration semantics, used identically by the device executor and the
local oracle: read the register, count the iteration, test the
predicate; when it fails, wait ``backoff_ticks`` of device time and read
again, up to ``max_iters`` reads.  The returned count therefore equals
the number of reads performed, and a predicate true on the first read
costs one iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .device import Device, RegisterAccess
from .errors import NotSimpleLoop
from .exprs import apply_op
from .workload import PollLoopSpec


@dataclass
class OffloadRequest:
    loop: PollLoopSpec
    captured: dict  # name -> concrete value for vars the predicate references

    def __post_init__(self):
        if not self.loop.simple:
            raise NotSimpleLoop(f"loop over {self.loop.reg} is not offloadable")

    def operand_value(self) -> int:
        if self.loop.operand[0] == "lit":
            return self.loop.operand[1]
        return self.captured[self.loop.operand[1]]


@dataclass
class OffloadResult:
    iterations: int
    final_value: int
    updated_vars: dict = field(default_factory=dict)
    timed_out: bool = False


def run_loop_on_device(device: Device, addr: int, cmpop: str, operand: int,
                       max_iters: int, backoff: int, start: int, on_read=None):
    """Execute the loop locally on the device; returns (result, end_time).

    Device time advances by the per-access cost for each read and by the
    backoff between reads, so loops racing an in-flight job observe its
    completion exactly when a real busy-wait would.
    """
    t = start
    access_tick = device.tick_cost["access"]
    iterations = 0
    value = 0
    satisfied = False
    while iterations < max_iters:
        device.advance_to(t)
        value = device.apply_access(RegisterAccess(False, addr))
        if on_read is not None:
            on_read(value)
        iterations += 1
        t += access_tick
        if apply_op(cmpop, value, operand):
            satisfied = True
            break
        t += backoff
    return OffloadResult(iterations, value, {}, timed_out=not satisfied), t


def execute_offload(device: Device, request: OffloadRequest, start: int):
    """Device-side handling of one LoopOffload message."""
    loop = request.loop
    result, end = run_loop_on_device(
        device, loop.addr, loop.cmpop, request.operand_value(),
        loop.max_iters, loop.backoff_ticks, start,
    )
    return result, end - start


def local_oracle(device: Device, request: OffloadRequest, start: int = None) -> OffloadResult:
    """Reference execution used to check offloaded runs on cloned devices."""
    loop = request.loop
    result, _ = run_loop_on_device(
        device, loop.addr, loop.cmpop, request.operand_value(),
        loop.max_iters, loop.backoff_ticks, device.now if start is None else start,
    )
    return result
