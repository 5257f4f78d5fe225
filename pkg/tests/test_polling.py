import copy
import random

import pytest

from dryrun.device import Device, RegisterAccess, default_device_map, pack_descriptor
from dryrun.errors import NotSimpleLoop
from dryrun.memsync import DATA, METASTATE, MemoryImage
from dryrun.polling import OffloadRequest, execute_offload, local_oracle
from dryrun.workload import PollLoopSpec, parse

DMAP = default_device_map()


def make_device(seed=1, **tick):
    return Device(DMAP, MemoryImage("device"), seed=seed, tick_cost=tick)


def loop_spec(reg="PWR_CTRL", cmpop="==", operand=("lit", 1), max_iters=64, backoff=100):
    addr = DMAP.addr_of(reg)
    simple = DMAP.by_addr[addr].kind in ("constant", "job-status", "power-fsm")
    return PollLoopSpec(reg, addr, cmpop, operand, max_iters, backoff, simple)


def start_job(dev):
    desc_page, status_page = 0, 1
    dev.mem.ensure_page(desc_page, METASTATE)
    dev.mem.ensure_page(status_page, METASTATE)
    dev.mem.ensure_page(2, DATA)
    dev.mem.ensure_page(3, DATA)
    dev.mem.write(desc_page, 0, pack_descriptor(0, 3, status_page, [], [2], [3]), guard=False)
    dev.apply_access(RegisterAccess(True, DMAP.addr_of("JOB_HEAD"), desc_page))
    dev.apply_access(RegisterAccess(True, DMAP.addr_of("JOB_START"), 1))


def test_predicate_true_on_first_read_is_one_iteration():
    dev = make_device()
    dev.apply_access(RegisterAccess(True, DMAP.addr_of("PWR_CTRL"), 1))
    req = OffloadRequest(loop_spec(), {})
    result, processing = execute_offload(dev, req, start=0)
    assert result.iterations == 1
    assert result.final_value == 1
    assert not result.timed_out
    assert processing == dev.tick_cost["access"]


def test_loop_observes_job_completion_after_device_iterations():
    dev = make_device()  # job takes 1000 ticks; backoff 100 -> ~11 reads
    start_job(dev)
    req = OffloadRequest(loop_spec("JOB_IRQ_RAWSTAT"), {})
    result, processing = execute_offload(dev, req, start=dev.now)
    assert result.iterations == 11
    assert result.final_value == 1
    assert not result.timed_out


def test_never_satisfied_predicate_exhausts_max_iters():
    dev = make_device()
    req = OffloadRequest(loop_spec("PWR_CTRL", "==", ("lit", 9), max_iters=13), {})
    result, _ = execute_offload(dev, req, start=0)
    assert result.iterations == 13
    assert result.timed_out


def test_offload_rejects_complex_loops():
    text = "thread 0\npoll JOB_IRQ_STATUS == 1 max 10\n"
    prog = parse(text, DMAP)
    with pytest.raises(NotSimpleLoop):
        OffloadRequest(prog.body(0)[0].loop, {})


def test_captured_var_operand():
    dev = make_device()
    dev.apply_access(RegisterAccess(True, DMAP.addr_of("MMU_CONFIG"), 7))
    req = OffloadRequest(loop_spec("MMU_CONFIG", "==", ("var", "expected")), {"expected": 7})
    result, _ = execute_offload(dev, req, start=0)
    assert result.iterations == 1


def test_offload_equals_local_oracle_on_cloned_devices():
    rnd = random.Random(42)
    for trial in range(60):
        seed = rnd.randrange(1, 1 << 30)
        dev = make_device(seed=seed, job=rnd.choice([200, 1000, 1500]))
        if rnd.random() < 0.6:
            start_job(dev)
            reg = "JOB_IRQ_RAWSTAT"
            operand = ("lit", 1)
        else:
            target = rnd.randrange(0, 2)
            dev.apply_access(RegisterAccess(True, DMAP.addr_of("PWR_CTRL"), target))
            reg = "PWR_CTRL"
            operand = ("lit", rnd.randrange(0, 2))
        backoff = rnd.choice([25, 50, 100, 400])
        max_iters = rnd.choice([5, 16, 64])
        req = OffloadRequest(loop_spec(reg, "==", operand, max_iters, backoff), {})

        mirror = copy.deepcopy(dev)
        start = dev.now
        offloaded, _ = execute_offload(dev, req, start=start)
        reference = local_oracle(mirror, req, start=start)
        assert offloaded.iterations == reference.iterations
        assert offloaded.final_value == reference.final_value
        assert dev.state_digest() == mirror.state_digest()
