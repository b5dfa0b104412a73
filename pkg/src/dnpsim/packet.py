"""Wire packet format: fixed 6-word envelope plus up to 256 payload words.

Envelope layout (one word = 32 bits):

    net0:   dest(18) | kind(2) | payload_len(9) | last(1) | fault(1) | spare
    net1:   source(18) | vc_hint(2) | spare
    rdma0:  PUT/SEND: target address      GET_REQUEST: source-side address
    rdma1:  PUT/SEND: msg_id(16)|seq(16)  GET_REQUEST: destination address
    rdma2:  PUT/SEND: message length      GET_REQUEST: dest id(18)|length(14)
    footer: payload crc16(16) | corrupted(1) | spare

The footer CRC covers the payload words only; envelope integrity is the
link layer's job.  Flit k of a packet is simply word k tagged HEAD for the
five leading envelope words, BODY for payload, TAIL for the footer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .crc import crc16_words

WORD_MASK = 0xFFFFFFFF
ID_MASK = 0x3FFFF

MAX_PAYLOAD_WORDS = 256
ENVELOPE_WORDS = 6
HEAD_WORDS = 5  # envelope words ahead of the payload
MAX_PACKET_WORDS = ENVELOPE_WORDS + MAX_PAYLOAD_WORDS
MAX_GET_LENGTH = (1 << 14) - 1  # length field of a GET request


class PacketKind(enum.IntEnum):
    PUT_DATA = 0
    SEND_DATA = 1
    GET_REQUEST = 2


class FlitKind(enum.IntEnum):
    HEAD = 0
    BODY = 1
    TAIL = 2


class CodecError(ValueError):
    """Base for packet encode/decode failures."""


class OversizePayloadError(CodecError):
    pass


class MalformedPacketError(CodecError):
    pass


class EmptyMessageError(ValueError):
    pass


@dataclass
class NetHeader:
    dest: int
    source: int
    kind: PacketKind
    payload_len: int
    vc_hint: int = 0
    last: bool = True
    fault: bool = False


@dataclass
class RdmaHeader:
    target_addr: int = 0
    aux_dnp: int = 0
    aux_addr: int = 0
    msg_id: int = 0
    seq: int = 0
    length_total: int = 0


@dataclass
class Footer:
    crc: int = 0
    corrupted: bool = False


@dataclass
class Packet:
    net: NetHeader
    rdma: RdmaHeader
    payload: list[int] = field(default_factory=list)
    footer: Footer = field(default_factory=Footer)

    def validate(self) -> None:
        n = self.net
        r = self.rdma
        if not 0 <= n.dest <= ID_MASK or not 0 <= n.source <= ID_MASK:
            raise CodecError("node id outside 18 bits")
        if n.payload_len != len(self.payload):
            raise CodecError("payload_len disagrees with payload")
        if n.payload_len > MAX_PAYLOAD_WORDS:
            raise OversizePayloadError(f"payload of {n.payload_len} words exceeds {MAX_PAYLOAD_WORDS}")
        if n.kind == PacketKind.GET_REQUEST:
            if n.payload_len != 0:
                raise CodecError("GET request carries no payload")
            if not 0 <= r.length_total <= MAX_GET_LENGTH:
                raise CodecError(f"GET length {r.length_total} exceeds {MAX_GET_LENGTH}")

    @property
    def word_count(self) -> int:
        return ENVELOPE_WORDS + len(self.payload)

    def flit_kind(self, index: int) -> FlitKind:
        if index < HEAD_WORDS:
            return FlitKind.HEAD
        if index == self.word_count - 1:
            return FlitKind.TAIL
        return FlitKind.BODY


def encode_packet(packet: Packet) -> list[int]:
    """Serialize to the wire word sequence, recomputing the footer CRC."""
    packet.validate()
    n, r = packet.net, packet.rdma
    net0 = (
        (n.dest & ID_MASK)
        | (int(n.kind) & 0x3) << 18
        | (n.payload_len & 0x1FF) << 20
        | (1 << 29 if n.last else 0)
        | (1 << 30 if n.fault else 0)
    )
    net1 = (n.source & ID_MASK) | (n.vc_hint & 0x3) << 18
    if n.kind == PacketKind.GET_REQUEST:
        rdma0 = r.aux_addr & WORD_MASK
        rdma1 = r.target_addr & WORD_MASK
        rdma2 = (r.aux_dnp & ID_MASK) << 14 | (r.length_total & 0x3FFF)
    else:
        rdma0 = r.target_addr & WORD_MASK
        rdma1 = (r.msg_id & 0xFFFF) << 16 | (r.seq & 0xFFFF)
        rdma2 = r.length_total & WORD_MASK
    crc = crc16_words(packet.payload)
    packet.footer.crc = crc
    footer = crc | (1 << 16 if packet.footer.corrupted else 0)
    return [net0, net1, rdma0, rdma1, rdma2, *[w & WORD_MASK for w in packet.payload], footer]


def decode_packet(words: list[int]) -> Packet:
    """Parse a wire word sequence; recomputes the payload CRC and flags
    a mismatch in the corrupted bit rather than failing."""
    if len(words) < ENVELOPE_WORDS or len(words) > MAX_PACKET_WORDS:
        raise MalformedPacketError(f"{len(words)} words outside [{ENVELOPE_WORDS}, {MAX_PACKET_WORDS}]")
    net0, net1 = words[0], words[1]
    payload_len = (net0 >> 20) & 0x1FF
    if payload_len != len(words) - ENVELOPE_WORDS:
        raise MalformedPacketError("payload_len field disagrees with sequence length")
    kind_raw = (net0 >> 18) & 0x3
    try:
        kind = PacketKind(kind_raw)
    except ValueError:
        raise MalformedPacketError(f"unknown packet kind {kind_raw}") from None
    net = NetHeader(
        dest=net0 & ID_MASK,
        source=net1 & ID_MASK,
        kind=kind,
        payload_len=payload_len,
        vc_hint=(net1 >> 18) & 0x3,
        last=bool(net0 & (1 << 29)),
        fault=bool(net0 & (1 << 30)),
    )
    rdma0, rdma1, rdma2 = words[2], words[3], words[4]
    if kind == PacketKind.GET_REQUEST:
        rdma = RdmaHeader(
            target_addr=rdma1,
            aux_dnp=(rdma2 >> 14) & ID_MASK,
            aux_addr=rdma0,
            length_total=rdma2 & 0x3FFF,
        )
    else:
        rdma = RdmaHeader(
            target_addr=rdma0,
            msg_id=(rdma1 >> 16) & 0xFFFF,
            seq=rdma1 & 0xFFFF,
            length_total=rdma2,
        )
    payload = list(words[HEAD_WORDS:-1])
    footer_word = words[-1]
    footer = Footer(crc=footer_word & 0xFFFF, corrupted=bool(footer_word & (1 << 16)))
    if crc16_words(payload) != footer.crc:
        footer.corrupted = True
    return Packet(net=net, rdma=rdma, payload=payload, footer=footer)


def fragment_message(length: int) -> list[int]:
    """Chunk a message of `length` words into per-packet payload lengths.

    Every chunk is MAX_PAYLOAD_WORDS except possibly the final one.
    """
    if length < 1:
        raise EmptyMessageError("message length must be at least 1 word")
    full, rest = divmod(length, MAX_PAYLOAD_WORDS)
    chunks = [MAX_PAYLOAD_WORDS] * full
    if rest:
        chunks.append(rest)
    return chunks


def packet_to_hex(words: list[int]) -> str:
    """Debug dump: one packet per line, lowercase hex words."""
    return " ".join(f"{w:08x}" for w in words)


def packet_from_hex(line: str) -> list[int]:
    return [int(tok, 16) for tok in line.split()]
