"""RDMA command set, completion events and receive-buffer table records.

A command is exactly seven words:

    w0 code | w1 src_addr | w2 src_dnp | w3 dst_addr | w4 dst_dnp | w5 length | w6 tag

Completion events are packed into eight words and written into the
completion-queue ring that lives in tile memory.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

WORD_MASK = 0xFFFFFFFF
ID_MASK = 0x3FFFF

COMMAND_WORDS = 7
EVENT_WORDS = 8


class CommandCode(enum.IntEnum):
    LOOPBACK = 0
    PUT = 1
    SEND = 2
    GET = 3


class CompletionKind(enum.IntEnum):
    CMD_DONE = 1
    PKT_RECEIVED = 2
    ERROR = 3


class EventStatus(enum.IntFlag):
    NONE = 0
    PAYLOAD_CORRUPTED = 1
    DECODE_ERROR = 2
    ADDRESS_FAULT = 4
    LUT_MISS = 8
    SEQ_GAP = 16
    ROUTE_ERROR = 32
    REMOTE_ERROR = 64


@dataclass
class RdmaCommand:
    code: CommandCode
    src_addr: int = 0
    src_dnp: int = 0
    dst_addr: int = 0
    dst_dnp: int = 0
    length: int = 1
    tag: int = 0

    def pack(self) -> list[int]:
        return [
            int(self.code) & WORD_MASK,
            self.src_addr & WORD_MASK,
            self.src_dnp & ID_MASK,
            self.dst_addr & WORD_MASK,
            self.dst_dnp & ID_MASK,
            self.length & WORD_MASK,
            self.tag & WORD_MASK,
        ]

    @classmethod
    def unpack(cls, words: list[int]) -> "RdmaCommand":
        """Decode seven words; an out-of-range code is preserved so the
        engine can raise a decode-error completion instead of crashing."""
        if len(words) != COMMAND_WORDS:
            raise ValueError(f"a command is {COMMAND_WORDS} words, got {len(words)}")
        code_raw = words[0] & 0xFF
        try:
            code = CommandCode(code_raw)
        except ValueError:
            code = code_raw  # type: ignore[assignment]
        return cls(
            code=code,
            src_addr=words[1],
            src_dnp=words[2] & ID_MASK,
            dst_addr=words[3],
            dst_dnp=words[4] & ID_MASK,
            length=words[5],
            tag=words[6],
        )

    @property
    def code_valid(self) -> bool:
        return isinstance(self.code, CommandCode)


@dataclass
class CompletionEvent:
    kind: CompletionKind
    tag: int = 0  # command tag for CMD_DONE, msg_id otherwise
    status: EventStatus = EventStatus.NONE
    addr: int = 0
    length: int = 0
    peer: int = 0
    cycle: int = 0

    def pack(self) -> list[int]:
        return [
            int(self.kind) | (int(self.status) & 0xFFFFFF) << 8,
            self.tag & WORD_MASK,
            self.addr & WORD_MASK,
            self.length & WORD_MASK,
            self.peer & ID_MASK,
            self.cycle & WORD_MASK,
            (self.cycle >> 32) & WORD_MASK,
            0,
        ]

    @classmethod
    def unpack(cls, words: list[int]) -> "CompletionEvent":
        return cls(
            kind=CompletionKind(words[0] & 0xFF),
            status=EventStatus((words[0] >> 8) & 0xFFFFFF),
            tag=words[1],
            addr=words[2],
            length=words[3],
            peer=words[4],
            cycle=words[5] | words[6] << 32,
        )


@dataclass
class LutEntry:
    """A registered receive buffer: [start_addr, start_addr + length)."""

    start_addr: int = 0
    length: int = 0
    valid: bool = False
    send_eligible: bool = False

    def contains(self, addr: int, length: int) -> bool:
        return (
            self.valid
            and length >= 0
            and self.start_addr <= addr
            and addr + length <= self.start_addr + self.length
        )


class CommandQueue:
    """Bounded FIFO of pending commands; rejects pushes when full."""

    def __init__(self, depth: int = 16):
        self.depth = depth
        self._fifo: deque[RdmaCommand] = deque()

    def push(self, command: RdmaCommand) -> bool:
        if len(self._fifo) >= self.depth:
            return False
        self._fifo.append(command)
        return True

    def pop(self) -> RdmaCommand | None:
        return self._fifo.popleft() if self._fifo else None

    def __len__(self) -> int:
        return len(self._fifo)

    @property
    def free_slots(self) -> int:
        return self.depth - len(self._fifo)


def command_trace_line(cycle: int, tile: int, command: RdmaCommand) -> str:
    """One workload line: issue cycle, issuing tile, then the 7 hex words.

    The issuing tile is explicit because a GET may name three distinct
    actors, none of which has to be the issuer.
    """
    words = " ".join(f"{w:08x}" for w in command.pack())
    return f"{cycle} {tile} {words}"


def parse_command_trace(text: str) -> list[tuple[int, int, RdmaCommand]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 2 + COMMAND_WORDS:
            raise ValueError(f"trace line {lineno}: expected cycle, tile and 7 hex words")
        cycle, tile = int(tokens[0]), int(tokens[1])
        words = [int(tok, 16) for tok in tokens[2:]]
        out.append((cycle, tile, RdmaCommand.unpack(words)))
    return out
