"""In-flight packet state shared by the switch, links and delivery path.

A packet travels as its encoded word list; a flit is (transit, word index).
The word list is mutated in place by the wire: payload corruption flips the
stored bits at the moment the word crosses the faulty link, and receive
endpoints set the footer's corrupted bit as the tail passes, so every
downstream stage observes exactly what the wire carried.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .kernel import PacketRecord
from .packet import FlitKind, Packet

FOOTER_CORRUPT_BIT = 1 << 16


@dataclass
class PacketTransit:
    uid: int
    packet: Packet
    words: list[int]
    src_id: int
    dest_id: int
    record: PacketRecord
    vc_class: int = 0
    leg_dim: int = -1
    footer_mark_pending: bool = False
    sent_words: list[int] = field(default_factory=list)
    tail_hook: object = None   # fired when the tail leaves the origin switch
    origin: object = None

    @property
    def word_count(self) -> int:
        return len(self.words)

    def flit_kind(self, index: int) -> FlitKind:
        return self.packet.flit_kind(index)

    def is_envelope(self, index: int) -> bool:
        return self.flit_kind(index) != FlitKind.BODY

    def mark_footer_corrupted(self) -> None:
        self.words[-1] |= FOOTER_CORRUPT_BIT
        self.record.corrupted = True

    def set_vc_hint(self, vc: int) -> None:
        self.vc_class = vc
        self.words[1] = (self.words[1] & ~(0x3 << 18)) | (vc & 0x3) << 18
