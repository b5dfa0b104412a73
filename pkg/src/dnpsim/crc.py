"""CRC-16/ARC: polynomial 0x8005 bit-reflected, init 0x0000, no final xor.

Check value for b"123456789" is 0xBB3D.  Used both for the packet footer
(over the payload byte stream) and for per-frame protection on the
serialized off-chip links.
"""

from __future__ import annotations

_POLY_REFLECTED = 0xA001


def _make_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ _POLY_REFLECTED
            else:
                crc >>= 1
        table.append(crc)
    return table


_TABLE = _make_table()


def crc16(data: bytes) -> int:
    """CRC-16/ARC over a byte string. Empty input yields 0x0000."""
    crc = 0x0000
    for byte in data:
        crc = (crc >> 8) ^ _TABLE[(crc ^ byte) & 0xFF]
    return crc


def crc16_update(crc: int, data: bytes) -> int:
    """Streaming update; start from 0x0000 and feed chunks in order."""
    for byte in data:
        crc = (crc >> 8) ^ _TABLE[(crc ^ byte) & 0xFF]
    return crc


def word_bytes(word: int) -> bytes:
    """The byte stream a 32-bit word contributes to a CRC (MSB first)."""
    return word.to_bytes(4, "big")


def crc16_words(words: list[int]) -> int:
    """CRC-16/ARC over a word sequence, each word serialized MSB first."""
    crc = 0x0000
    for w in words:
        crc = crc16_update(crc, word_bytes(w))
    return crc
