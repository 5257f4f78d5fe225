"""Commit-history store and k-confidence value prediction.

A commit is predicted only when the most recent ``k`` history entries at
its site carry the same access signature and returned identical read
values.  History records actual values whether or not the prediction was
attempted, so confidence builds naturally over repeated runs.  Poll
predicate outcomes share the store under a site key suffix.

History file format (text)::

    CODYHIST1
    SITE <thread>:<pc>[:p]
    SIG <n> r:0x100 w:0x104 ...
    VAL <m> 0x4 0x0 ...

with one SIG/VAL pair per ring entry, oldest first.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .errors import CorruptStream

HISTORY_MAGIC = "CODYHIST1"
DEFAULT_CONFIDENCE_K = 3
DEFAULT_SITE_CAPACITY = 8


@dataclass
class SpeculationPolicy:
    confidence_k: int = DEFAULT_CONFIDENCE_K
    enabled: bool = True
    history_capacity: int = DEFAULT_SITE_CAPACITY

    def __post_init__(self):
        if self.confidence_k < 1:
            raise ValueError("confidence_k must be >= 1")


@dataclass
class Prediction:
    values: list


class CommitHistory:
    """site -> ring of (access signature, read values), most recent last."""

    def __init__(self, capacity: int = DEFAULT_SITE_CAPACITY):
        self.capacity = capacity
        self.sites: dict[tuple, deque] = {}

    def record(self, site: tuple, signature: tuple, values: tuple) -> None:
        ring = self.sites.get(site)
        if ring is None:
            ring = self.sites[site] = deque(maxlen=self.capacity)
        ring.append((tuple(signature), tuple(values)))

    def lookup(self, site: tuple):
        return self.sites.get(site, ())

    def predict(self, site: tuple, signature: tuple, k: int):
        """Prediction iff the last k entries match the signature and agree."""
        ring = self.sites.get(site)
        if ring is None or len(ring) < k:
            return None
        recent = list(ring)[-k:]
        signature = tuple(signature)
        first_values = recent[0][1]
        for sig, values in recent:
            if sig != signature or values != first_values:
                return None
        return Prediction(list(first_values))

    # -- persistence ---------------------------------------------------------

    def save(self, path: str) -> None:
        lines = [HISTORY_MAGIC]
        for site in sorted(self.sites, key=_site_sort_key):
            lines.append("SITE " + _format_site(site))
            for sig, values in self.sites[site]:
                lines.append(f"SIG {len(sig)} " + " ".join(_format_sig_item(s) for s in sig))
                lines.append(f"VAL {len(values)} " + " ".join(f"{v:#x}" for v in values))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str, capacity: int = DEFAULT_SITE_CAPACITY) -> "CommitHistory":
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        if not lines or lines[0] != HISTORY_MAGIC:
            raise CorruptStream("history file missing CODYHIST1 header")
        hist = cls(capacity)
        site = None
        sig = None
        for ln in lines[1:]:
            if not ln.strip():
                continue
            tag, _, rest = ln.partition(" ")
            if tag == "SITE":
                site = _parse_site(rest)
                sig = None
            elif tag == "SIG":
                sig = tuple(_parse_sig_item(tok) for tok in rest.split()[1:])
            elif tag == "VAL":
                if site is None or sig is None:
                    raise CorruptStream("VAL before SITE/SIG")
                values = tuple(int(tok, 16) for tok in rest.split()[1:])
                hist.record(site, sig, values)
                sig = None
            else:
                raise CorruptStream(f"unknown history line {ln!r}")
        return hist


def _site_sort_key(site):
    return (site[0], site[1], len(site))


def _format_site(site) -> str:
    if len(site) == 3 and site[2] == "p":
        return f"{site[0]}:{site[1]}:p"
    return f"{site[0]}:{site[1]}"


def _parse_site(text: str):
    parts = text.strip().split(":")
    if len(parts) == 2:
        return (int(parts[0]), int(parts[1]))
    if len(parts) == 3 and parts[2] == "p":
        return (int(parts[0]), int(parts[1]), "p")
    raise CorruptStream(f"bad SITE {text!r}")


def _format_sig_item(item) -> str:
    if item[0] == "pl":
        return f"pl:{item[1]:#x}:{item[2]}"
    return f"{item[0]}:{item[1]:#x}"


def _parse_sig_item(tok: str):
    parts = tok.split(":")
    if parts[0] == "pl":
        return ("pl", int(parts[1], 16), parts[2])
    if parts[0] in ("r", "w") and len(parts) == 2:
        return (parts[0], int(parts[1], 16))
    raise CorruptStream(f"bad SIG item {tok!r}")


def poll_site(thread_id: int, pc: int) -> tuple:
    return (thread_id, pc, "p")


def poll_signature(addr: int, cmpop: str) -> tuple:
    return (("pl", addr, cmpop),)


@dataclass
class Mispredict:
    """First disagreement between predicted and actual read values."""

    commit_id: int
    read_index: int  # position among the commit's reads
    predicted: int
    actual: int


def validate(prediction: Prediction, actual_values) -> Mispredict | None:
    """Elementwise check; None when every value matched."""
    for i, (want, got) in enumerate(zip(prediction.values, actual_values)):
        if want != got:
            return Mispredict(-1, i, want, got)
    if len(prediction.values) != len(actual_values):
        return Mispredict(-1, min(len(prediction.values), len(actual_values)), -1, -1)
    return None


def may_issue(commit, taint: "TaintSet") -> bool:
    """Issue gate: anything whose entries or control flow depend on a value
    that is still only predicted must wait until those predictions validate,
    so speculative state never spills to the device."""
    return not (commit.taint() & taint.inflight)


class TaintSet:
    """Which vars carry values derived from unvalidated predictions.

    Taint is a set of in-flight commit ids per var; validation of a commit
    erases it everywhere, so a var is tainted exactly while some origin
    prediction is unconfirmed.
    """

    def __init__(self):
        self.vars: dict[str, set] = {}
        self.inflight: set = set()

    def mark(self, var: str, origins) -> None:
        origins = set(origins) & self.inflight
        if origins:
            self.vars[var] = self.vars.get(var, set()) | origins
        else:
            self.vars.pop(var, None)

    def taint_of(self, var: str) -> frozenset:
        live = self.vars.get(var)
        if not live:
            return frozenset()
        live &= self.inflight
        if live:
            self.vars[var] = live
            return frozenset(live)
        del self.vars[var]
        return frozenset()

    def begin(self, commit_id: int) -> None:
        self.inflight.add(commit_id)

    def settle(self, commit_id: int) -> None:
        self.inflight.discard(commit_id)
        for var in list(self.vars):
            s = self.vars[var]
            s.discard(commit_id)
            if not s:
                del self.vars[var]

    def clear(self) -> None:
        self.vars.clear()
        self.inflight.clear()
