"""Adaptive order-0 range coder used for shared-memory dumps.

The algorithm is pinned so that coded streams are bit-stable:

* 32-bit range coder, renormalized at 2^24, carry propagation handled
  LZMA-style on the encoder (cache byte plus a run of pending 0xFF bytes);
  the decoder primes a 32-bit code window from the first five bytes (the
  first byte is always zero) and never tracks ``low``.
* Byte-oriented order-0 model: 256 frequencies starting at 1, incremented
  by 32 after each coded byte.  The cumulative table is rebuilt every 32
  bytes; at rebuild time, if the running total exceeds 65536 all
  frequencies are halved (rounding up).  Between rebuilds the coder uses
  the cumulative table snapshot, so encoder and decoder stay in lockstep.
* Container: little-endian u32 payload length followed by the coded
  stream.  Empty input codes to the bare header.
"""

from bisect import bisect_right

from .errors import CorruptStream

_TOP = 1 << 24
_MASK = 0xFFFFFFFF
_INCREMENT = 32
_REBUILD = 32
_MAX_TOTAL = 65536


def compress(data: bytes) -> bytes:
    out = bytearray(len(data).to_bytes(4, "little"))
    if not data:
        return bytes(out)

    freq = [1] * 256
    cum = list(range(257))
    ctotal = 256
    total = 256
    pending = 0

    low = 0
    rng = _MASK
    cache = 0
    cache_size = 1
    append = out.append

    for b in data:
        r = rng // ctotal
        low += r * cum[b]
        rng = r * (cum[b + 1] - cum[b])
        while rng < _TOP:
            if low < 0xFF000000 or low > _MASK:
                carry = low >> 32
                append((cache + carry) & 0xFF)
                for _ in range(cache_size - 1):
                    append((0xFF + carry) & 0xFF)
                cache = (low >> 24) & 0xFF
                cache_size = 0
            cache_size += 1
            low = (low << 8) & _MASK
            rng <<= 8
        freq[b] += _INCREMENT
        total += _INCREMENT
        pending += 1
        if pending == _REBUILD:
            pending = 0
            if total > _MAX_TOTAL:
                total = 0
                for i in range(256):
                    freq[i] = (freq[i] + 1) >> 1
                    total += freq[i]
            c = 0
            for i in range(256):
                cum[i] = c
                c += freq[i]
            cum[256] = c
            ctotal = c

    for _ in range(5):
        if low < 0xFF000000 or low > _MASK:
            carry = low >> 32
            append((cache + carry) & 0xFF)
            for _ in range(cache_size - 1):
                append((0xFF + carry) & 0xFF)
            cache = (low >> 24) & 0xFF
            cache_size = 0
        cache_size += 1
        low = (low << 8) & _MASK
    return bytes(out)


def decompress(blob: bytes) -> bytes:
    if len(blob) < 4:
        raise CorruptStream("missing length header")
    n = int.from_bytes(blob[:4], "little")
    if n == 0:
        return b""
    if len(blob) < 9:
        raise CorruptStream("stream shorter than coder preamble")

    freq = [1] * 256
    cum = list(range(257))
    ctotal = 256
    total = 256
    pending = 0

    pos = 4
    end = len(blob)
    code = 0
    for _ in range(5):
        code = ((code << 8) | blob[pos]) & _MASK
        pos += 1
    rng = _MASK

    out = bytearray()
    append = out.append
    for _ in range(n):
        r = rng // ctotal
        v = code // r
        if v >= ctotal:
            raise CorruptStream("code outside model range")
        s = bisect_right(cum, v) - 1
        code -= r * cum[s]
        rng = r * (cum[s + 1] - cum[s])
        if code < 0:
            raise CorruptStream("negative code window")
        while rng < _TOP:
            if pos >= end:
                raise CorruptStream("stream truncated")
            code = ((code << 8) | blob[pos]) & _MASK
            pos += 1
            rng <<= 8
        append(s)
        freq[s] += _INCREMENT
        total += _INCREMENT
        pending += 1
        if pending == _REBUILD:
            pending = 0
            if total > _MAX_TOTAL:
                total = 0
                for i in range(256):
                    freq[i] = (freq[i] + 1) >> 1
                    total += freq[i]
            c = 0
            for i in range(256):
                cum[i] = c
                c += freq[i]
            cum[256] = c
            ctotal = c
    return bytes(out)
