"""Shared-memory images, page classification, and delta transfer.

The driver and the device each hold a MemoryImage.  At job boundaries the
owning side dumps the pages the other side needs; dumps are per-page
diffs against the last synchronized baseline, trimmed to the changed byte
range and range-coded.  The naive configuration instead ships every page
raw.  Ownership of the shared region is a single token so that the two
sides can never both touch the pages at the same instant.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from . import rangecoder
from .errors import CorruptStream, GenerationMismatch, TrapFault

PAGE_SIZE = 4096

# page classes
METASTATE = "metastate"
DATA = "data"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class PagePerm:
    readable: bool = True
    writable: bool = True
    executable: bool = False
    mapped_to_device: bool = False

    def __post_init__(self):
        if self.executable and not self.readable:
            raise ValueError("executable page must be readable")


@dataclass(frozen=True)
class MappingRecord:
    """How a shared page was mapped; the signals page classification uses."""

    perm: PagePerm
    mapped_readonly_by_app: bool = False
    hint_available: bool = True


def classify(record: MappingRecord) -> str:
    """Classify a page from its mapping record.

    Executable mappings hold shader code and are metastate.  When mapping
    hints exist, a non-executable region is program data (a readonly app
    mapping in particular can never hold command buffers).  Without any
    signal the page is unknown, which switches the run into zero-data
    mode: unknown pages are shipped as zeros so dumps stay compressible.
    """
    if record.perm.executable:
        return METASTATE
    if record.hint_available or record.mapped_readonly_by_app:
        return DATA
    return UNKNOWN


@dataclass
class DeltaRecord:
    page: int
    offset: int
    length: int
    payload: bytes  # range-coded unless the delta is marked raw


@dataclass
class MemoryDelta:
    base_generation: int
    records: list[DeltaRecord] = field(default_factory=list)
    raw: bool = False  # naive full dumps ship page bytes uncompressed

    def payload_bytes(self) -> int:
        return len(encode_delta(self))


class MemoryImage:
    """Page-granular shared-memory state for one side of the protocol."""

    def __init__(self, label: str = "mem"):
        self.label = label
        self.pages: dict[int, bytearray] = {}
        self.page_class: dict[int, str] = {}
        self.baseline: dict[int, bytes] = {}
        self.generation = 0
        self.accessible = True

    def ensure_page(self, idx: int, cls: str = DATA) -> None:
        if idx not in self.pages:
            self.pages[idx] = bytearray(PAGE_SIZE)
            self.page_class[idx] = cls
            self.baseline[idx] = bytes(PAGE_SIZE)
        else:
            self.page_class[idx] = cls

    def write(self, idx: int, offset: int, data: bytes, *, guard: bool = True) -> None:
        if guard and not self.accessible:
            raise TrapFault(idx, f"{self.label} side wrote page while not owning the region")
        if offset < 0 or offset + len(data) > PAGE_SIZE:
            raise ValueError(f"write of {len(data)} bytes at {offset} overruns page {idx}")
        page = self.pages.get(idx)
        if page is None:
            self.ensure_page(idx)
            page = self.pages[idx]
        page[offset : offset + len(data)] = data

    def read(self, idx: int, offset: int = 0, length: int = PAGE_SIZE, *, guard: bool = True) -> bytes:
        if guard and not self.accessible:
            raise TrapFault(idx, f"{self.label} side read page while not owning the region")
        page = self.pages.get(idx)
        if page is None:
            raise TrapFault(idx, "page not present")
        return bytes(page[offset : offset + length])

    def snapshot(self) -> dict:
        return {
            "pages": {i: bytes(p) for i, p in self.pages.items()},
            "classes": dict(self.page_class),
            "baseline": dict(self.baseline),
            "generation": self.generation,
            "accessible": self.accessible,
        }

    def restore(self, snap: dict) -> None:
        self.pages = {i: bytearray(p) for i, p in snap["pages"].items()}
        self.page_class = dict(snap["classes"])
        self.baseline = dict(snap["baseline"])
        self.generation = snap["generation"]
        self.accessible = snap["accessible"]

    def digest(self) -> str:
        h = hashlib.sha256()
        for idx in sorted(self.pages):
            h.update(struct.pack("<I", idx))
            h.update(self.pages[idx])
            h.update(self.page_class[idx].encode())
        h.update(struct.pack("<I", self.generation))
        return h.hexdigest()


def _trim(old: bytes, new: bytes):
    """Return (offset, length) of the changed span, or None if equal."""
    if old == new:
        return None
    lo = 0
    hi = len(new)
    while new[lo] == old[lo]:
        lo += 1
    while new[hi - 1] == old[hi - 1]:
        hi -= 1
    return lo, hi - lo


def build_delta(image: MemoryImage, classes, *, full: bool = False, raw: bool = False) -> MemoryDelta:
    """Diff selected page classes against the baseline (or dump them whole)."""
    delta = MemoryDelta(base_generation=image.generation, raw=raw)
    for idx in sorted(image.pages):
        if image.page_class[idx] not in classes:
            continue
        content = bytes(image.pages[idx])
        if full:
            span = (0, PAGE_SIZE)
        else:
            span = _trim(image.baseline.get(idx, bytes(PAGE_SIZE)), content)
            if span is None:
                continue
        off, length = span
        chunk = content[off : off + length]
        payload = chunk if raw else rangecoder.compress(chunk)
        delta.records.append(DeltaRecord(idx, off, length, payload))
    return delta


def commit_baseline(image: MemoryImage, classes) -> None:
    for idx in image.pages:
        if image.page_class[idx] in classes:
            image.baseline[idx] = bytes(image.pages[idx])
    image.generation += 1


def apply_delta(image: MemoryImage, delta: MemoryDelta) -> None:
    if delta.base_generation != image.generation:
        raise GenerationMismatch(
            f"delta base {delta.base_generation} vs image generation {image.generation}"
        )
    for rec in delta.records:
        data = rec.payload if delta.raw else rangecoder.decompress(rec.payload)
        if len(data) != rec.length:
            raise CorruptStream("delta record length mismatch")
        if rec.offset + rec.length > PAGE_SIZE:
            raise CorruptStream("delta record overruns its page")
        image.ensure_page(rec.page, image.page_class.get(rec.page, METASTATE))
        image.write(rec.page, rec.offset, data, guard=False)
        image.baseline[rec.page] = bytes(image.pages[rec.page])
    image.generation += 1


_REC_HDR = struct.Struct("<IHHI")


def encode_delta(delta: MemoryDelta) -> bytes:
    out = bytearray(struct.pack("<IBI", delta.base_generation, 1 if delta.raw else 0, len(delta.records)))
    for rec in delta.records:
        out += _REC_HDR.pack(rec.page, rec.offset, rec.length, len(rec.payload))
        out += rec.payload
    return bytes(out)


def decode_delta(blob: bytes) -> MemoryDelta:
    if len(blob) < 9:
        raise CorruptStream("short delta header")
    base, raw, n = struct.unpack_from("<IBI", blob, 0)
    pos = 9
    delta = MemoryDelta(base_generation=base, raw=bool(raw))
    for _ in range(n):
        if pos + _REC_HDR.size > len(blob):
            raise CorruptStream("truncated delta record header")
        page, off, length, plen = _REC_HDR.unpack_from(blob, pos)
        pos += _REC_HDR.size
        if pos + plen > len(blob):
            raise CorruptStream("truncated delta record payload")
        delta.records.append(DeltaRecord(page, off, length, bytes(blob[pos : pos + plen])))
        pos += plen
    return delta


# region ownership -----------------------------------------------------------

DRIVER = "driver"
TO_DEVICE = "to-device"
DEVICE = "device"
TO_DRIVER = "to-driver"


class RegionOwner:
    """Single-token owner of the shared pages; forbids simultaneous access."""

    def __init__(self):
        self.state = DRIVER

    def _move(self, expect: str, to: str) -> None:
        if self.state != expect:
            raise TrapFault(-1, f"ownership {self.state} -> {to} out of order")
        self.state = to

    def push_sent(self):
        self._move(DRIVER, TO_DEVICE)

    def push_applied(self):
        self._move(TO_DEVICE, DEVICE)

    def pull_sent(self):
        self._move(DEVICE, TO_DRIVER)

    def pull_applied(self):
        self._move(TO_DRIVER, DRIVER)
