"""Exception types shared across the package."""


class DryrunError(Exception):
    """Base class for all protocol/model errors."""


# --- device ---

class UnknownRegister(DryrunError):
    def __init__(self, addr):
        super().__init__(f"unknown register {addr:#x}" if isinstance(addr, int) else f"unknown register {addr!r}")
        self.addr = addr


class SymbolLeak(DryrunError):
    """A symbolic value reached the device; the driver-side protocol is broken."""


class JobBusy(DryrunError):
    """JOB_START written while a job is already outstanding."""


class TrapFault(DryrunError):
    """A shared-memory page was touched by the side that does not own it."""

    def __init__(self, page, detail=""):
        super().__init__(f"trap on page {page}{': ' + detail if detail else ''}")
        self.page = page


# --- workload DSL ---

class WorkloadSyntaxError(DryrunError):
    def __init__(self, line_no, col, msg):
        super().__init__(f"line {line_no}, col {col}: {msg}")
        self.line_no = line_no
        self.col = col


class UnbalancedLock(DryrunError):
    pass


class OverlappingHotScope(DryrunError):
    pass


# --- deferral / speculation ---

class QueueOverflow(DryrunError):
    """Deferral queue exceeded its cap; a commit trigger is missing."""


class ArityMismatch(DryrunError):
    pass


class ReleaseConsistencyViolation(DryrunError):
    """A thread observed another thread's unresolved symbolic value."""


class DivergenceError(DryrunError):
    def __init__(self, index, detail=""):
        super().__init__(f"replay diverged at entry {index}{': ' + detail if detail else ''}")
        self.index = index


# --- polling ---

class NotSimpleLoop(DryrunError):
    pass


# --- transport ---

class AwaitBeforeSend(DryrunError):
    pass


# --- codec / recording ---

class CorruptStream(DryrunError):
    pass


class GenerationMismatch(DryrunError):
    pass


class RecordAfterFinalize(DryrunError):
    pass


class DigestMismatch(DryrunError):
    pass


class DeviceMapMismatch(DryrunError):
    pass


class SchemaMismatch(DryrunError):
    pass
