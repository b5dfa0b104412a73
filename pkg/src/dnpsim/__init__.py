"""dnpsim: cycle-accurate simulator of a tile interconnect network processor.

The package models a per-tile network engine (RDMA command execution over a
command FIFO, completion queue and receive look-up table), a wormhole
crossbar switch with virtual channels and configurable dimension-order
routing, on-chip and serialized off-chip link layers with CRC protection and
envelope retransmission, and deterministic cycle-level timing calibrated to
reproduce the reference latency and bandwidth figures.
"""

__version__ = "0.1.0"

from .crc import crc16
from .dcbalance import dc_balance_decode, dc_balance_encode
from .packet import (
    Footer,
    NetHeader,
    Packet,
    PacketKind,
    RdmaHeader,
    decode_packet,
    encode_packet,
    fragment_message,
)

__all__ = [
    "crc16",
    "dc_balance_encode",
    "dc_balance_decode",
    "Packet",
    "PacketKind",
    "NetHeader",
    "RdmaHeader",
    "Footer",
    "encode_packet",
    "decode_packet",
    "fragment_message",
    "__version__",
]
