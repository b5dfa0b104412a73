"""Inter-tile transport: parallel on-chip links, serialized off-chip links
and the abstract on-chip network cloud.

On-chip links move one 32-bit word per cycle with a fixed traversal
latency.  The receiving endpoint recomputes a running CRC over the payload
words and, on a mismatch at the tail, sets the corrupted bit in the footer
and lets the packet continue.

Off-chip links serialize each word over 32/serialization_factor lines
(double data rate optional), so a word occupies S/(2 if DDR) line cycles;
the defaults give 4 payload bits per cycle per direction.  Every word rides
in a frame carrying its own CRC-16 and a DC-balance invert flag.  Envelope
frames (head and footer words) that fail the receiver CRC are retransmitted
from the sender's envelope buffer until clean, with later words held at the
receiver so ordering is preserved; payload frames are delivered once, bit
flips and all, and only marked.  Exceeding the retry budget raises the
link-fault status bit at the receiving node; the word is still retried, the
link never drops it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .crc import crc16, crc16_update, word_bytes
from .dcbalance import dc_balance_decode, dc_balance_encode
from .kernel import Component, CycleFifo, SimulationError, Simulator
from .packet import FlitKind
from .switch import STATUS_LINK_FAULT
from .transit import PacketTransit

FRAME_BITS = 48  # 32 data + 16 frame CRC; control bits ride on robust lines


def offchip_word_cycles(serialization_factor: int, ddr: bool) -> int:
    """Line cycles one 32-bit word occupies on the serialized link."""
    if serialization_factor < 1 or 32 % serialization_factor:
        raise ValueError("serialization factor must divide 32")
    cycles = serialization_factor // (2 if ddr else 1)
    if cycles < 1:
        raise ValueError("serialization settings leave no line time per word")
    return cycles


class FrameErrorSampler:
    """Deterministic per-frame corruption: draws the number of flipped bits
    from a binomial over the frame (truncated at three), plus targeted
    flips scheduled by tests."""

    def __init__(self, sim: Simulator, label: str, ber: float):
        self.ber = ber
        self.rng = sim.rng(f"ber/{label}")
        self.targeted: dict[int, list[int]] = {}
        self.frame_ordinal = 0
        if ber > 0:
            q = 1.0 - ber
            p0 = q**FRAME_BITS
            p1 = FRAME_BITS * ber * q ** (FRAME_BITS - 1)
            p2 = (FRAME_BITS * (FRAME_BITS - 1) // 2) * ber**2 * q ** (FRAME_BITS - 2)
            self._cdf = (p0, p0 + p1, p0 + p1 + p2)
        else:
            self._cdf = (1.0, 1.0, 1.0)

    def schedule_bit_flip(self, frame_ordinal: int, bit: int) -> None:
        self.targeted.setdefault(frame_ordinal, []).append(bit)

    def next_flips(self) -> list[int]:
        ordinal = self.frame_ordinal
        self.frame_ordinal += 1
        flips = list(self.targeted.pop(ordinal, ()))
        if self.ber > 0:
            u = self.rng.random()
            if u >= self._cdf[0]:
                count = 1 if u < self._cdf[1] else (2 if u < self._cdf[2] else 3)
                while count:
                    bit = self.rng.randrange(FRAME_BITS)
                    if bit not in flips:
                        flips.append(bit)
                        count -= 1
        return flips


@dataclass
class _WireWord:
    exit_cycle: int
    transit: PacketTransit
    word_index: int
    lane: int
    tx_word: int
    tx_crc: int
    invert_flag: int
    flips: list[int]


def _apply_flips(tx_word: int, tx_crc: int, flips: list[int]) -> tuple[int, int]:
    for bit in flips:
        if bit < 32:
            tx_word ^= 1 << bit
        else:
            tx_crc ^= 1 << (bit - 32)
    return tx_word, tx_crc


class OnChipLink(Component):
    """Point-to-point parallel link between two on-chip ports."""

    def __init__(self, sim: Simulator, name: str, latency: int, tx_capacity: int = 8):
        super().__init__(sim, name)
        if latency < 1:
            raise ValueError("on-chip link latency must be at least one cycle")
        self.latency = latency
        self.tx = CycleFifo(sim, tx_capacity, consumer=self)
        self.rx_fifo: CycleFifo | None = None  # wired by the topology builder
        self.sampler: FrameErrorSampler | None = None
        self._crc_accum = 0
        self.counters = sim.stats.link(name)

    # sink protocol (single lane)
    def can_accept(self, now: int, lane: int) -> bool:
        return self.tx.can_accept(now)

    def send(self, now: int, transit: PacketTransit, word_index: int, lane: int, from_unit: int) -> None:
        self.tx.push(now, now + 1, (transit, word_index))
        self.wake(now + 1)

    def tick(self, now: int) -> None:
        item = self.tx.peek(now)
        if item is None:
            return
        if not self.rx_fifo.can_accept(now):
            return  # producer wake on downstream pop re-arms us
        transit, widx = item
        self.tx.pop(now)
        word = transit.words[widx]
        if self.sampler is not None:
            flips = [b for b in self.sampler.next_flips() if b < 32]
            if flips:
                for bit in flips:
                    word ^= 1 << bit
                transit.words[widx] = word
                self.counters.injected_error_frames += 1
                self.counters.injected_payload_frames += 1
        kind = transit.flit_kind(widx)
        if widx == 0:
            self._crc_accum = 0
        elif kind == FlitKind.BODY:
            self._crc_accum = crc16_update(self._crc_accum, word_bytes(word))
        elif kind == FlitKind.TAIL:
            if self._crc_accum != (word & 0xFFFF):
                transit.mark_footer_corrupted()
                self.counters.flagged_payload_frames += 1
        self.counters.words += 1
        self.counters.busy_cycles += 1
        self.rx_fifo.reserve(now)
        self.rx_fifo.fill(now, now + self.latency, (transit, widx))
        if len(self.tx):
            self.wake(now + 1)


class OffChipLink(Component):
    """One direction of a serialized inter-chip link."""

    def __init__(self, sim: Simulator, name: str, word_cycles: int,
                 pipeline: int, ack_latency: int, retry_limit: int,
                 ber: float, vcs: int, tx_capacity: int):
        super().__init__(sim, name)
        self.word_cycles = word_cycles
        self.pipeline = pipeline
        self.ack_latency = ack_latency
        self.retry_limit = retry_limit
        self.vcs = vcs
        self.tx = [CycleFifo(sim, tx_capacity, consumer=self) for _ in range(vcs)]
        self.rx_fifos: list[CycleFifo] = []  # per VC, wired by the builder
        self.fault_sink = None  # receiving node's register file
        self.sampler = FrameErrorSampler(sim, name, ber)
        self.counters = sim.stats.link(name)
        self._line_free_at = 0
        self._vc_pointer = 0
        self._in_flight: list[_WireWord] = []
        self._held: list[_WireWord] = []
        self._recovering: _WireWord | None = None
        self._retry_count = 0
        self._retx_exit = -1
        self._disparity = 0

    # sink protocol
    def can_accept(self, now: int, lane: int) -> bool:
        return self.tx[lane].can_accept(now)

    def send(self, now: int, transit: PacketTransit, word_index: int, lane: int, from_unit: int) -> None:
        self.tx[lane].push(now, now + 1, (transit, word_index))
        self.wake(now + 1)

    def inject_fault(self, frame_ordinal: int, bit: int) -> None:
        self.sampler.schedule_bit_flip(frame_ordinal, bit)

    # -- serializer side ---------------------------------------------------

    def _launch_frame(self, now: int, transit: PacketTransit, widx: int, lane: int,
                      retransmission: bool) -> _WireWord:
        word = transit.words[widx]
        tx_word, invert, self._disparity = dc_balance_encode(word, self._disparity)
        tx_crc = crc16(word_bytes(tx_word))
        flips = self.sampler.next_flips()
        if flips:
            self.counters.injected_error_frames += 1
            if transit.is_envelope(widx):
                self.counters.injected_envelope_frames += 1
            else:
                self.counters.injected_payload_frames += 1
        wire = _WireWord(
            exit_cycle=now + self.pipeline + self.word_cycles,
            transit=transit,
            word_index=widx,
            lane=lane,
            tx_word=tx_word,
            tx_crc=tx_crc,
            invert_flag=invert,
            flips=flips,
        )
        self._line_free_at = now + self.word_cycles
        self.counters.busy_cycles += self.word_cycles
        self.counters.words += 1
        if retransmission:
            self.counters.retransmissions += 1
        self.wake(wire.exit_cycle)
        self.wake(self._line_free_at)
        return wire

    def _try_launch(self, now: int) -> None:
        if self._recovering is not None or self._held:
            return
        if now < self._line_free_at:
            self.wake(self._line_free_at)
            return
        for offset in range(self.vcs):
            lane = (self._vc_pointer + offset) % self.vcs
            fifo = self.tx[lane]
            item = fifo.peek(now)
            if item is None:
                continue
            transit, widx = item
            if not self.rx_fifos[lane].can_accept(now):
                continue  # credit returns via producer wake
            fifo.pop(now)
            self.rx_fifos[lane].reserve(now)
            self._vc_pointer = (lane + 1) % self.vcs
            self._in_flight.append(self._launch_frame(now, transit, widx, lane, False))
            return

    # -- deserializer side ---------------------------------------------------

    def _deliver(self, now: int, wire: _WireWord) -> bool:
        """Deliver or start recovery for one frame whose exit is due.
        Returns False when the link entered recovery on this frame."""
        rx_word, rx_crc = _apply_flips(wire.tx_word, wire.tx_crc, wire.flips)
        clean = crc16(word_bytes(rx_word)) == rx_crc
        transit, widx = wire.transit, wire.word_index
        if clean:
            decoded = dc_balance_decode(rx_word, wire.invert_flag)
            if decoded != transit.words[widx]:
                # undetectable flip landed exactly so; keep the wire value
                transit.words[widx] = decoded
        else:
            if transit.is_envelope(widx):
                self._recovering = wire
                self._retry_count = 1
                self._start_retransmission(now)
                return False
            decoded = dc_balance_decode(rx_word, wire.invert_flag)
            transit.words[widx] = decoded
            transit.footer_mark_pending = True
            self.counters.flagged_payload_frames += 1
        if transit.flit_kind(widx) == FlitKind.TAIL and transit.footer_mark_pending:
            transit.mark_footer_corrupted()
            transit.footer_mark_pending = False
        self.rx_fifos[wire.lane].fill(now, now + 1, (transit, widx))
        return True

    def _start_retransmission(self, now: int) -> None:
        self._retx_exit = now + self.ack_latency + self.pipeline + self.word_cycles
        self._line_free_at = max(self._line_free_at, self._retx_exit - self.pipeline)
        self.counters.busy_cycles += self.word_cycles
        self.wake(self._retx_exit)

    def _handle_retransmission(self, now: int) -> None:
        wire = self._recovering
        transit, widx, lane = wire.transit, wire.word_index, wire.lane
        tx_word, invert, self._disparity = dc_balance_encode(transit.words[widx], self._disparity)
        flips = self.sampler.next_flips()
        self.counters.retransmissions += 1
        self.counters.words += 1
        if flips:
            self.counters.injected_error_frames += 1
            self.counters.injected_envelope_frames += 1
        rx_word, rx_crc = _apply_flips(tx_word, crc16(word_bytes(tx_word)), flips)
        if crc16(word_bytes(rx_word)) != rx_crc:
            self._retry_count += 1
            if self._retry_count > self.retry_limit and self.fault_sink is not None:
                self.fault_sink.raise_status(STATUS_LINK_FAULT)
            self._start_retransmission(now)
            return
        self._recovering = None
        if transit.flit_kind(widx) == FlitKind.TAIL and transit.footer_mark_pending:
            transit.mark_footer_corrupted()
            transit.footer_mark_pending = False
        self.rx_fifos[lane].fill(now, now + 1, (transit, widx))
        self.wake(now + 1)  # drain held words, then resume launches

    def tick(self, now: int) -> None:
        # retransmission completion first: it unblocks held deliveries
        if self._recovering is not None:
            if now == self._retx_exit:
                self._handle_retransmission(now)
            return
        # release one held word per cycle, oldest first, through the normal path
        if self._held:
            wire = self._held.pop(0)
            self._deliver(now, wire)
            self.wake(now + 1)
            return
        # due arrivals, then at most one launch
        while self._in_flight and self._in_flight[0].exit_cycle <= now:
            wire = self._in_flight.pop(0)
            if not self._deliver(now, wire):
                # recovery: everything already in the pipe is held, in order
                self._held = self._in_flight
                self._in_flight = []
                return
        self._try_launch(now)


class _NocPortSink:
    """Per-tile adapter presenting the NoC cloud as a switch output sink."""

    def __init__(self, noc: "NocTransport", tile_id: int):
        self.noc = noc
        self.tile_id = tile_id

    def can_accept(self, now: int, lane: int) -> bool:
        return self.noc.tx[self.tile_id].can_accept(now)

    def send(self, now: int, transit, word_index: int, lane: int, from_unit: int) -> None:
        self.noc.tx[self.tile_id].push(now, now + 1, (transit, word_index))
        self.noc.wake(now + 1)


class NocTransport(Component):
    """Abstract lossless on-chip network joining one chip's tiles.

    Senders stream one word per cycle into the cloud; packets are delivered
    atomically per receiving tile (a receiver drains one packet head to
    tail before admitting the next, first requester first).  The receiving
    endpoint recomputes the payload CRC as words stream past and flags the
    footer on a mismatch, like any on-chip receive interface.
    """

    def __init__(self, sim: Simulator, name: str, transit_latency: int,
                 tx_capacity: int = 8):
        super().__init__(sim, name)
        if transit_latency < 1:
            raise ValueError("NoC transit latency must be at least one cycle")
        self.latency = transit_latency
        self.tx_capacity = tx_capacity
        self.tx: dict[int, CycleFifo] = {}
        self.rx: dict[int, CycleFifo] = {}
        self._streaming: dict[int, int] = {}   # dest tile -> source tile
        self._waiting: dict[int, list[int]] = {}  # dest tile -> queued sources
        self._enrolled: set[int] = set()
        self._crc_accum: dict[int, int] = {}
        self.counters = sim.stats.link(name)

    def attach_tile(self, tile_id: int, rx_fifo: CycleFifo) -> "_NocPortSink":
        self.tx[tile_id] = CycleFifo(self.sim, self.tx_capacity, consumer=self)
        self.rx[tile_id] = rx_fifo
        return _NocPortSink(self, tile_id)

    def tick(self, now: int) -> None:
        # enroll new packet heads, deterministically by source id
        for src in sorted(self.tx):
            if src in self._enrolled:
                continue
            item = self.tx[src].peek(now)
            if item is None:
                continue
            transit, widx = item
            if widx != 0:
                raise SimulationError(f"{self.name}: stream from {src} lost its head")
            dest = transit.dest_id
            self._enrolled.add(src)
            if dest in self._streaming:
                self._waiting.setdefault(dest, []).append(src)
            else:
                self._streaming[dest] = src
        moved = False
        for dest in sorted(self._streaming):
            src = self._streaming[dest]
            item = self.tx[src].peek(now)
            if item is None:
                continue
            if not self.rx[dest].can_accept(now):
                continue  # downstream pop re-arms us
            transit, widx = item
            self.tx[src].pop(now)
            moved = True
            word = transit.words[widx]
            kind = transit.flit_kind(widx)
            if widx == 0:
                self._crc_accum[dest] = 0
            elif kind == FlitKind.BODY:
                self._crc_accum[dest] = crc16_update(self._crc_accum[dest], word_bytes(word))
            elif kind == FlitKind.TAIL:
                if self._crc_accum.get(dest, 0) != (word & 0xFFFF):
                    transit.mark_footer_corrupted()
                    self.counters.flagged_payload_frames += 1
            self.counters.words += 1
            self.counters.busy_cycles += 1
            self.rx[dest].reserve(now)
            self.rx[dest].fill(now, now + self.latency, (transit, widx))
            if kind == FlitKind.TAIL:
                self._enrolled.discard(src)
                queue = self._waiting.get(dest)
                if queue:
                    self._streaming[dest] = queue.pop(0)
                else:
                    del self._streaming[dest]
        if moved or self._streaming:
            if any(len(f) for f in self.tx.values()):
                self.wake(now + 1)
