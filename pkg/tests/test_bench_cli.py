import os

import pytest

from dryrun.bench import MetricsReport, RunConfig, compare, compare_csv, run_bench
from dryrun.cli import main
from dryrun.device import default_device_map
from dryrun.errors import SchemaMismatch
from dryrun.workload import bundled_workload

DMAP = default_device_map()


@pytest.fixture()
def micro_path(tmp_path):
    path = tmp_path / "micro.wl"
    path.write_text(bundled_workload("micro", DMAP))
    return str(path)


def test_run_bench_writes_report_and_recording(tmp_path, micro_path):
    report_path = tmp_path / "out.txt"
    rec_path = tmp_path / "out.rec"
    csv_path = tmp_path / "out.csv"
    report = run_bench(RunConfig(
        workload=micro_path, mode="md", net="cellular", seed=3,
        report=str(report_path), recording=str(rec_path), csv=str(csv_path),
    ))
    assert report["mode"] == "md"
    assert report["round_trips"] > 0
    assert report["error"] == ""
    assert report_path.exists() and rec_path.exists()
    parsed = MetricsReport.from_text(report_path.read_text())
    assert parsed.values == report.values
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 2 and lines[0].startswith("workload,")


def test_reports_deterministic_for_fixed_config(micro_path):
    a = run_bench(RunConfig(workload=micro_path, mode="mds", seed=5))
    b = run_bench(RunConfig(workload=micro_path, mode="mds", seed=5))
    assert a.values == b.values


def test_mode_monotonicity_on_micro(micro_path):
    rts = {}
    for mode in ("naive", "m", "md", "mds"):
        rts[mode] = run_bench(RunConfig(workload=micro_path, mode=mode))["round_trips"]
    assert rts["naive"] >= rts["m"] >= rts["md"] >= rts["mds"]


def test_history_file_warms_across_bench_runs(tmp_path, micro_path):
    hist = str(tmp_path / "hist.txt")
    for seed in (1, 2, 3):
        run_bench(RunConfig(workload=micro_path, mode="mds", seed=seed, history=hist))
    report = run_bench(RunConfig(workload=micro_path, mode="mds", seed=4, history=hist))
    assert report["speculated_commits"] >= 0.9 * report["commits"]
    assert report["mispredictions"] == 0
    assert os.path.exists(hist)


def test_compare_identical_reports_all_ratios_one(micro_path):
    a = run_bench(RunConfig(workload=micro_path, mode="md", seed=2))
    b = run_bench(RunConfig(workload=micro_path, mode="md", seed=2))
    table = compare([a, b])
    assert "(x1.000)" in table
    assert "reduces recording delay by 0.0%" in table


def test_compare_rejects_mismatched_schemas(micro_path):
    a = run_bench(RunConfig(workload=micro_path, mode="md"))
    b = run_bench(RunConfig(workload=micro_path, mode="naive"))
    broken = MetricsReport(dict(b.values))
    del broken.values["round_trips"]
    with pytest.raises(SchemaMismatch):
        compare([a, broken])
    with pytest.raises(SchemaMismatch):
        compare([a])


def test_compare_csv_contains_all_rows(micro_path):
    a = run_bench(RunConfig(workload=micro_path, mode="naive"))
    b = run_bench(RunConfig(workload=micro_path, mode="md"))
    text = compare_csv([a, b])
    assert len(text.strip().splitlines()) == 3


def test_cli_run_and_compare_roundtrip(tmp_path, micro_path):
    r1 = tmp_path / "naive.txt"
    r2 = tmp_path / "md.txt"
    assert main(["run", "--workload", micro_path, "--mode", "naive", "--net", "cellular",
                 "--report", str(r1)]) == 0
    assert main(["run", "--workload", micro_path, "--mode", "md", "--net", "cellular",
                 "--report", str(r2)]) == 0
    out_table = tmp_path / "table.txt"
    figdir = tmp_path / "figs"
    assert main(["compare", str(r1), str(r2), "--report", str(out_table),
                 "--csv", str(tmp_path / "c.csv"), "--figdir", str(figdir)]) == 0
    assert out_table.exists()
    assert sorted(os.listdir(figdir)) == ["bytes_to_device.png", "recording_delay.png", "round_trips.png"]


def test_cli_custom_network(tmp_path, micro_path):
    report = tmp_path / "r.txt"
    assert main(["run", "--workload", micro_path, "--mode", "naive", "--net", "custom",
                 "--rtt-ms", "10", "--bw-mbps", "100", "--report", str(report)]) == 0
    parsed = MetricsReport.from_text(report.read_text())
    assert parsed["rtt_us"] == 10_000
    assert parsed["bandwidth_bps"] == 100_000_000


def test_cli_gen_and_replay_flow(tmp_path):
    wl = tmp_path / "w.wl"
    dm = tmp_path / "d.map"
    assert main(["gen", "--profile", "micro", "-o", str(wl), "--device-map-out", str(dm)]) == 0
    assert wl.exists() and dm.exists()
    rec = tmp_path / "r.rec"
    assert main(["run", "--workload", str(wl), "--mode", "md", "--report",
                 str(tmp_path / "rep.txt"), "--recording", str(rec)]) == 0
    inp = tmp_path / "input.bin"
    inp.write_bytes(bytes([9]) * 4096)
    assert main(["replay", "--recording", str(rec), "--input", str(inp),
                 "--report", str(tmp_path / "replay.txt")]) == 0
    text = (tmp_path / "replay.txt").read_text()
    assert "divergence = \n" in text
    assert "job_1_output_digest" in text


def test_cli_run_failure_exit_code(tmp_path):
    wl = tmp_path / "v.wl"
    wl.write_text(bundled_workload("violate-read", DMAP))
    assert main(["run", "--workload", str(wl), "--mode", "md",
                 "--report", str(tmp_path / "r.txt")]) == 1


def test_run_figures_rendered(tmp_path, micro_path):
    figdir = tmp_path / "figs"
    run_bench(RunConfig(workload=micro_path, mode="md", figdir=str(figdir)))
    assert (figdir / "commit_categories.png").exists()


def test_fault_injection_through_config(tmp_path, micro_path):
    hist = str(tmp_path / "h.txt")
    for seed in (1, 2, 3):
        run_bench(RunConfig(workload=micro_path, mode="mds", seed=seed, history=hist))
    report = run_bench(RunConfig(workload=micro_path, mode="mds", seed=4, history=hist, inject_at=1))
    assert report["mispredictions"] >= 1
    assert report["recoveries"] >= 1
    assert report["error"] == ""


def test_restart_cost_charged_per_recovery(tmp_path, micro_path):
    hist1 = str(tmp_path / "h1.txt")
    hist2 = str(tmp_path / "h2.txt")
    for seed in (1, 2, 3):
        run_bench(RunConfig(workload=micro_path, mode="mds", seed=seed, history=hist1))
        run_bench(RunConfig(workload=micro_path, mode="mds", seed=seed, history=hist2))
    free = run_bench(RunConfig(workload=micro_path, mode="mds", seed=4, history=hist1, inject_at=1))
    costed = run_bench(RunConfig(workload=micro_path, mode="mds", seed=4, history=hist2,
                                 inject_at=1, restart_ms=1500))
    assert costed["recoveries"] == free["recoveries"] >= 1
    assert costed["sim_time_us"] >= free["sim_time_us"] + 1_500_000
    assert costed["device_digest"] == free["device_digest"]
