"""Benchmark harness: configured runs, metric reports, and comparisons.

A report is a flat key=value text document with stable keys (plus an
optional CSV row for sweeps), so runs can be diffed, archived, and fed
back into ``compare``.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass

from .device import Device, default_device_map, parse_device_map
from .errors import SchemaMismatch
from .memsync import MemoryImage, PAGE_SIZE
from .recording import save_recording
from .runtime import Run, RunReport
from .speculation import CommitHistory, SpeculationPolicy
from .transport import NetworkConfig, PRESETS
from .workload import parse, static_access_count, static_job_count, static_poll_count

# every report carries exactly these keys, in this order
REPORT_KEYS = [
    "workload",
    "workload_hash",
    "mode",
    "net",
    "rtt_us",
    "bandwidth_bps",
    "seed",
    "k",
    "round_trips",
    "commits",
    "speculated_commits",
    "mispredictions",
    "recoveries",
    "stalls",
    "sim_time_us",
    "bytes_to_device",
    "bytes_from_device",
    "avg_batch_size",
    "deferred_accesses",
    "sync_accesses",
    "polls_offloaded",
    "polls_local",
    "polls_speculated",
    "jobs",
    "externs",
    "zero_data_mode",
    "recording_entries",
    "commit_cat_init",
    "commit_cat_interrupt",
    "commit_cat_power",
    "commit_cat_polling",
    "commit_cat_other",
    "static_accesses",
    "static_polls",
    "static_jobs",
    "device_digest",
    "vars_digest",
    "recording_digest",
    "error",
]

_NUMERIC_KEYS = {
    k for k in REPORT_KEYS
    if k not in ("workload", "workload_hash", "mode", "net", "device_digest",
                 "vars_digest", "recording_digest", "error")
}


@dataclass
class MetricsReport:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def label(self) -> str:
        return f"{self.values.get('workload', '?')}/{self.values.get('mode', '?')}/{self.values.get('net', '?')}"

    def to_text(self) -> str:
        lines = [f"{key} = {self.values.get(key, '')}" for key in REPORT_KEYS]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        values = {}
        for line in text.splitlines():
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key in _NUMERIC_KEYS:
                values[key] = float(raw) if "." in raw else int(raw or 0)
            else:
                values[key] = raw
        missing = [k for k in REPORT_KEYS if k not in values]
        if missing:
            raise SchemaMismatch(f"report missing keys: {missing}")
        return cls(values)

    def csv_row(self) -> str:
        # error strings may carry commas; keep the row machine-splittable
        return ",".join(str(self.values.get(key, "")).replace(",", ";").replace("\n", " ")
                        for key in REPORT_KEYS)

    @staticmethod
    def csv_header() -> str:
        return ",".join(REPORT_KEYS)


@dataclass
class RunConfig:
    workload: str  # path to a workload file
    mode: str = "naive"
    net: NetworkConfig | str = "wifi"
    seed: int = 1
    confidence_k: int = 3
    speculate: bool = True
    device_map: str | None = None  # path; embedded default when None
    history: str | None = None  # path, loaded if present and saved after the run
    inject_at: int | None = None
    inject_poll_at: int | None = None
    input_seed: int | None = None
    schedule_seed: int | None = None
    restart_ms: int = 0  # virtual rollback cost charged per recovery
    report: str | None = None
    recording: str | None = None
    csv: str | None = None
    figdir: str | None = None
    label: str | None = None


def _net_of(config: RunConfig) -> NetworkConfig:
    if isinstance(config.net, NetworkConfig):
        return config.net
    return PRESETS[config.net]


def _load_program(config: RunConfig):
    dmap = default_device_map() if config.device_map is None else _load_map(config.device_map)
    with open(config.workload) as fh:
        text = fh.read()
    return parse(text, dmap), dmap


def _load_map(path: str):
    with open(path) as fh:
        return parse_device_map(fh.read())


def input_pages_for(program, input_seed: int) -> dict:
    """Deterministic device-local input data for every job's input pages."""
    rnd = random.Random(input_seed)
    pages = {}
    for job in program.jobs.values():
        for page in job.in_pages:
            pages[page] = rnd.randbytes(PAGE_SIZE)
    return pages


def run_bench(config: RunConfig) -> MetricsReport:
    """Execute the full pipeline for one configuration; returns the report."""
    program, dmap = _load_program(config)
    net = _net_of(config)

    history = CommitHistory()
    if config.history and os.path.exists(config.history):
        history = CommitHistory.load(config.history)

    device = Device(dmap, MemoryImage("device"), seed=config.seed)
    run = Run(
        program,
        device,
        net,
        mode=config.mode,
        policy=SpeculationPolicy(confidence_k=config.confidence_k, enabled=config.speculate),
        history=history,
        schedule_seed=config.schedule_seed,
        inject_commit_at=config.inject_at,
        inject_poll_at=config.inject_poll_at,
        restart_ticks=config.restart_ms * 1000,
    )
    if config.input_seed is not None:
        run.seed_device_inputs(input_pages_for(program, config.input_seed))
    report = run.execute()

    if config.history:
        history.save(config.history)
    if config.recording:
        save_recording(report.recording, config.recording)

    metrics = build_report(config, program, report)
    if config.report:
        with open(config.report, "w") as fh:
            fh.write(metrics.to_text())
    if config.csv:
        new = not os.path.exists(config.csv)
        with open(config.csv, "a") as fh:
            if new:
                fh.write(MetricsReport.csv_header() + "\n")
            fh.write(metrics.csv_row() + "\n")
    if config.figdir:
        from .figures import render_run_figures

        render_run_figures(metrics, config.figdir)
    return metrics


def build_report(config: RunConfig, program, report: RunReport) -> MetricsReport:
    m = report.metrics
    values = {key: m.get(key, 0) for key in REPORT_KEYS}
    values.update(
        workload=config.label or os.path.basename(str(config.workload)),
        workload_hash=program.fingerprint()[:16],
        mode=config.mode,
        net=_net_of(config).name,
        rtt_us=_net_of(config).rtt_us,
        bandwidth_bps=_net_of(config).bandwidth_bps,
        seed=config.seed,
        k=config.confidence_k,
        avg_batch_size=round(m["avg_batch_size"], 4),
        static_accesses=static_access_count(program),
        static_polls=static_poll_count(program),
        static_jobs=static_job_count(program),
        device_digest=report.device_digest,
        vars_digest=report.vars_digest,
        recording_digest=report.recording.digest.hex()[:16],
        error=report.error or "",
    )
    return MetricsReport(values)


_RATIO_KEYS = [
    "round_trips",
    "commits",
    "speculated_commits",
    "sim_time_us",
    "bytes_to_device",
    "bytes_from_device",
    "avg_batch_size",
]


def compare(reports: list) -> str:
    """Side-by-side metric table with ratios against the first report."""
    if len(reports) < 2:
        raise SchemaMismatch("compare needs at least two reports")
    keys = set(reports[0].values)
    for r in reports[1:]:
        if set(r.values) != keys:
            raise SchemaMismatch("reports carry different key sets")

    labels = [r.label() for r in reports]
    width = max(len(l) for l in labels + ["metric"]) + 2
    lines = ["metric".ljust(24) + "".join(l.ljust(width + 12) for l in labels)]
    for key in _RATIO_KEYS:
        base = reports[0].values.get(key, 0) or 0
        cells = []
        for r in reports:
            v = r.values.get(key, 0) or 0
            ratio = (v / base) if base else (1.0 if v == base else float("inf"))
            cells.append(f"{v:>12} (x{ratio:.3f})".ljust(width + 12))
        lines.append(key.ljust(24) + "".join(cells))
    base_time = reports[0].values.get("sim_time_us", 0) or 0
    for r in reports[1:]:
        v = r.values.get("sim_time_us", 0) or 0
        if base_time:
            lines.append(
                f"# {r.label()} reduces recording delay by "
                f"{100.0 * (1 - v / base_time):.1f}% vs {reports[0].label()}"
            )
    return "\n".join(lines) + "\n"


def compare_csv(reports: list) -> str:
    out = [MetricsReport.csv_header()]
    out += [r.csv_row() for r in reports]
    return "\n".join(out) + "\n"
