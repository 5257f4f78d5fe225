import random

import pytest

from dryrun.rangecoder import compress, decompress
from dryrun.errors import CorruptStream


def test_empty_input_is_header_only():
    coded = compress(b"")
    assert coded == b"\x00\x00\x00\x00"
    assert decompress(coded) == b""


def test_zero_page_compresses_below_64_bytes():
    page = bytes(4096)
    coded = compress(page)
    assert len(coded) < 64
    assert decompress(coded) == page


def test_random_page_does_not_compress_but_roundtrips():
    rnd = random.Random(7)
    page = rnd.randbytes(4096)
    coded = compress(page)
    assert len(coded) >= len(page)
    assert decompress(coded) == page


@pytest.mark.parametrize("seed", range(8))
def test_roundtrip_structured_buffers(seed):
    rnd = random.Random(seed)
    n = rnd.randrange(0, 3000)
    kind = seed % 4
    if kind == 0:
        data = rnd.randbytes(n)
    elif kind == 1:
        data = bytes(n)
    elif kind == 2:
        data = bytes(i & 0xFF for i in range(n))
    else:
        data = bytes(rnd.choice((0, 0, 0, 0xFF, 0x55)) for _ in range(n))
    assert decompress(compress(data)) == data


def test_roundtrip_crosses_model_rebuild_and_halving():
    # enough repeats of one symbol to exceed the halving threshold many times
    data = b"\xAB" * 20000 + bytes(range(256)) * 8
    assert decompress(compress(data)) == data


def test_truncated_stream_raises():
    coded = compress(b"hello world, this is a longer buffer" * 20)
    with pytest.raises(CorruptStream):
        decompress(coded[: len(coded) - 3])
    with pytest.raises(CorruptStream):
        decompress(b"\x01")


def test_garbage_stream_raises_or_differs():
    # flipping declared length beyond available data must not hang or crash
    coded = bytearray(compress(b"abcdef"))
    coded[0] = 0xFF
    coded[1] = 0xFF
    with pytest.raises(CorruptStream):
        decompress(bytes(coded))
