import pytest

from dryrun.device import default_device_map
from dryrun.errors import OverlappingHotScope, UnbalancedLock, UnknownRegister, WorkloadSyntaxError
from dryrun.workload import (
    Poll,
    Read,
    SubmitJob,
    Write,
    bundled_workload,
    parse,
    print_program,
    static_access_count,
    static_job_count,
    static_poll_count,
    synthesize_workload,
)

DMAP = default_device_map()


def test_parse_irq_clear_pair():
    prog = parse("thread 0\nr1 = read JOB_IRQ_STATUS\nwrite JOB_IRQ_CLEAR, r1\n", DMAP)
    (tid, body), = prog.threads
    assert tid == 0
    assert body == [
        Read("r1", "JOB_IRQ_STATUS", DMAP.addr_of("JOB_IRQ_STATUS")),
        Write("JOB_IRQ_CLEAR", DMAP.addr_of("JOB_IRQ_CLEAR"), ("var", "r1")),
    ]


def test_parse_poll_defaults():
    prog = parse("thread 0\npoll JOB_STATUS == 0 max 1000\n", DMAP)
    (poll,) = prog.body(0)
    assert isinstance(poll, Poll)
    lp = poll.loop
    assert lp.cmpop == "=="
    assert lp.operand == ("lit", 0)
    assert lp.max_iters == 1000
    assert lp.backoff_ticks == 100
    assert lp.simple


def test_poll_on_clear_on_read_register_is_not_simple():
    prog = parse("thread 0\npoll JOB_IRQ_STATUS == 1 max 10\n", DMAP)
    assert not prog.body(0)[0].loop.simple


def test_poll_on_nondet_register_is_not_simple():
    prog = parse("thread 0\npoll LATEST_FLUSH_ID == 1 max 10\n", DMAP)
    assert not prog.body(0)[0].loop.simple


def test_unbalanced_lock_rejected():
    with pytest.raises(UnbalancedLock):
        parse("thread 0\nlock a\nr = read CORE_COUNT\n", DMAP)
    with pytest.raises(UnbalancedLock):
        parse("thread 0\nunlock a\n", DMAP)


def test_lock_balance_across_branches():
    text = (
        "thread 0\n"
        "lock a\n"
        "r = read CORE_COUNT\n"
        "branch-if r == 4, out\n"
        "unlock a\n"
        "label out\n"
    )
    with pytest.raises(UnbalancedLock):
        parse(text, DMAP)


def test_unknown_register_rejected():
    with pytest.raises(UnknownRegister):
        parse("thread 0\nr = read NO_SUCH_REG\n", DMAP)


def test_overlapping_hot_scope_rejected():
    with pytest.raises(OverlappingHotScope):
        parse("thread 0\nhot_begin init\nhot_begin power\n", DMAP)


def test_unknown_label_rejected():
    with pytest.raises(WorkloadSyntaxError):
        parse("thread 0\nbranch-if 1 == 1, nowhere\n", DMAP)


def test_scope_ranges_and_categories():
    text = (
        "thread 0\n"
        "hot_begin interrupt\n"
        "r = read JOB_IRQ_STATUS\n"
        "write JOB_IRQ_CLEAR, r\n"
        "hot_end\n"
        "x = read CORE_COUNT\n"
    )
    prog = parse(text, DMAP)
    (scope,) = prog.scopes
    assert (scope.start, scope.end, scope.category) == (0, 2, "interrupt")
    assert prog.scope_at(0, 1) is scope
    assert prog.scope_at(0, 2) is None


def test_job_layout_assignment():
    text = "job a meta=3 in=2 out=1\njob b meta=2 in=1 out=1\nthread 0\nsubmit-job a\nsubmit-job b\n"
    prog = parse(text, DMAP)
    a, b = prog.jobs["a"], prog.jobs["b"]
    assert a.desc_page == 0
    assert a.shader_pages == (1,)
    assert a.status_page == 2
    assert a.in_pages == (3, 4)
    assert a.out_pages == (5,)
    assert b.desc_page == 6
    assert prog.page_count() == 10


def test_parse_print_roundtrip_on_bundled_workloads():
    for name in ("micro", "mt3", "violate-window", "syncheavy"):
        text = bundled_workload(name, DMAP)
        prog = parse(text, DMAP)
        printed = print_program(prog)
        again = parse(printed, DMAP)
        assert again == prog
        assert print_program(again) == printed


def test_mnist_like_counts_are_exact():
    prog = parse(synthesize_workload("mnist-like", DMAP), DMAP)
    assert static_access_count(prog) == 2800
    assert static_poll_count(prog) == 117
    assert static_job_count(prog) == 12


def test_vgg16_like_poll_count():
    prog = parse(synthesize_workload("vgg16-like", DMAP), DMAP)
    assert static_poll_count(prog) == 492


def test_zero_jobs_profile_is_init_only():
    text = synthesize_workload(dict(n_jobs=0, accesses=0, n_polls=0, n_in=0, n_out=0, meta=2), DMAP)
    prog = parse(text, DMAP)
    assert static_job_count(prog) == 0
    assert all(not isinstance(i, SubmitJob) for i in prog.body(0))


def test_generator_is_deterministic():
    assert synthesize_workload("mnist-like", DMAP, seed=5) == synthesize_workload("mnist-like", DMAP, seed=5)
    assert synthesize_workload("mnist-like", DMAP, seed=5) != synthesize_workload("mnist-like", DMAP, seed=6)


def test_zero_data_mode_flags_unhinted_jobs():
    text = "job a meta=2 in=1 out=1 hints=none\nthread 0\nsubmit-job a\n"
    prog = parse(text, DMAP)
    assert prog.zero_data_mode()
    text2 = "job a meta=2 in=1 out=1\nthread 0\nsubmit-job a\n"
    assert not parse(text2, DMAP).zero_data_mode()


def test_fingerprint_stable_and_content_sensitive():
    p1 = parse(synthesize_workload("micro", DMAP), DMAP)
    p2 = parse(synthesize_workload("micro", DMAP), DMAP)
    assert p1.fingerprint() == p2.fingerprint()
    p3 = parse("thread 0\nx = read CORE_COUNT\n", DMAP)
    assert p3.fingerprint() != p1.fingerprint()
