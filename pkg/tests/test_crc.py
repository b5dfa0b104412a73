"""CRC-16 tests against an independent bit-serial oracle."""

import itertools

import pytest

from dnpsim.crc import crc16, crc16_update, crc16_words, word_bytes


def crc16_bitserial(data: bytes) -> int:
    """Bit-by-bit CRC-16/ARC reference, independent of the table code.

    Reflected algorithm: shift LSB first, xor with 0xA001 on carry-out.
    """
    crc = 0x0000
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0xA001
            else:
                crc >>= 1
    return crc


def test_empty_input_is_initial_value():
    assert crc16(b"") == 0x0000


def test_published_check_value():
    assert crc16(b"123456789") == 0xBB3D


def test_check_value_matches_bitserial_oracle():
    assert crc16_bitserial(b"123456789") == 0xBB3D


@pytest.mark.parametrize(
    "data",
    [b"\x00", b"\xff", b"\x00\x00\x00\x00", b"hello, world", bytes(range(256))],
)
def test_table_matches_bitserial_oracle(data):
    assert crc16(data) == crc16_bitserial(data)


def test_streaming_update_equals_one_shot():
    data = bytes(range(100))
    crc = 0x0000
    for i in range(0, len(data), 7):
        crc = crc16_update(crc, data[i : i + 7])
    assert crc == crc16(data)


def test_single_bit_flips_always_detected_on_4_byte_inputs():
    # Exhaustive over a handful of base words x all 32 flip positions.
    bases = [0x00000000, 0xFFFFFFFF, 0x12345678, 0xDEADBEEF, 0x31323334]
    for base, bit in itertools.product(bases, range(32)):
        flipped = base ^ (1 << bit)
        a = crc16(base.to_bytes(4, "big"))
        b = crc16(flipped.to_bytes(4, "big"))
        assert a != b, f"flip of bit {bit} in {base:#010x} not detected"


def test_word_serialization_is_msb_first():
    assert word_bytes(0x31323334) == b"1234"


def test_crc16_words_equals_bytes_crc():
    words = [0x31323334, 0x35363738, 0x39000000]
    stream = b"".join(w.to_bytes(4, "big") for w in words)
    assert crc16_words(words) == crc16(stream) == crc16_bitserial(stream)
