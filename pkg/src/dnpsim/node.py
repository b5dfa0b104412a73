"""Per-tile network processor: command engine, receive path, crossbar.

One component per tile drives everything tile-local each cycle it has work:
engine actions that fall due, port streams, the packet feeder, and one
crossbar allocation pass.  Cross-tile traffic leaves through link objects
wired in by the topology builder.

Timing contract for the calibrated stages (uncontended):

* a command picked from the FIFO starts its first memory read
  `cmd_issue_to_read` cycles after the push;
* the first header word reaches the selected inter-tile interface
  `switch_inject` cycles after the read starts (head flits pay
  `switch_head_setup` of that in the crossbar, the rest is engine handoff);
* at the destination the first payload word hits memory
  `deliver_to_write` cycles after the tail flit reaches the local port;
* a loopback's write stream starts `loopback_turnaround` cycles after its
  read stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .kernel import (
    Component,
    CycleFifo,
    MemoryFault,
    PacketRecord,
    SimulationError,
    Simulator,
    TileMemory,
)
from .packet import (
    HEAD_WORDS,
    MAX_GET_LENGTH,
    MAX_PAYLOAD_WORDS,
    FlitKind,
    NetHeader,
    Packet,
    PacketKind,
    RdmaHeader,
    decode_packet,
    encode_packet,
    fragment_message,
)
from .rdma import (
    EVENT_WORDS,
    CommandCode,
    CommandQueue,
    CompletionEvent,
    CompletionKind,
    EventStatus,
    LutEntry,
    RdmaCommand,
)
from .switch import (
    ARB_POLICIES,
    CMD_DOORBELL,
    CMD_REGION,
    LUT_ENTRY_WORDS,
    LUT_REGION,
    REG_ARB_POLICY,
    REG_CQ_BASE,
    REG_CQ_DEPTH,
    REG_CQ_READ_PTR,
    REG_CQ_WRITE_PTR,
    REG_DIM_PRIORITY,
    REG_ID,
    REG_PORT_ENABLE,
    REG_SOFT_RESET,
    REG_STATUS,
    REG_TIMEOUT,
    STATUS_TIMEOUT,
    InputUnit,
    OutputRef,
    PortId,
    PortKind,
    RegisterFile,
    RouteError,
    allocate_vc,
    arbitrate,
    route_output_port,
)
from .transit import PacketTransit


@dataclass
class _ReadStream:
    addr: int
    length: int
    on_done: object
    pos: int = 0
    data: list[int] = field(default_factory=list)


@dataclass
class _WriteStream:
    addr: int
    values: list[int]
    on_done: object
    pos: int = 0


@dataclass
class _TxJob:
    """One outgoing message, fed flit by flit into the injection unit."""

    kind: PacketKind
    dest: int
    base_target: int
    src_addr: int
    length: int
    msg_id: int
    tag: int
    on_emitted: object = None     # fires when the final tail leaves the switch
    prebuilt: Packet | None = None
    fault_notify: bool = False
    chunks: list[int] = field(default_factory=list)
    chunk_index: int = 0
    transit: PacketTransit | None = None
    word_index: int = 0
    read_start: int = -1
    words_fed: int = 0


@dataclass
class _MessageTracker:
    expected_seq: int = 0
    base_addr: int = 0
    received_words: int = 0
    corrupted: bool = False
    poisoned: bool = False
    claimed: bool = False


class StreamHandle:
    """Completion handle for a timed port read/write."""

    def __init__(self):
        self.done_cycle = -1
        self.data: list[int] | None = None

    @property
    def done(self) -> bool:
        return self.done_cycle >= 0


class Dnp(Component):
    """A tile's network processor plus its memory and register file."""

    def __init__(self, sim: Simulator, tile_id: int, coord: tuple[int, ...],
                 network, *, intra_ports: int, memory_words: int,
                 cmd_fifo_depth: int, cq_depth: int, lut_entries: int,
                 regfile: RegisterFile):
        super().__init__(sim, f"tile{tile_id}")
        if intra_ports < 2:
            raise ValueError("need at least two intra-tile ports: one read, one write")
        self.tile_id = tile_id
        self.coord = coord
        self.network = network
        self.timing = sim.timing
        self.memory = TileMemory(memory_words)
        self.regfile = regfile
        self.regfile._in_fabric_probe = lambda: sim._work.get("packets", 0) > 0
        self.lut = [LutEntry() for _ in range(lut_entries)]
        self.cmd_queue = CommandQueue(cmd_fifo_depth)
        self.intra_ports = intra_ports
        self.cq_depth = cq_depth
        self.cq_base = memory_words - cq_depth * EVENT_WORDS
        if self.cq_base < 0:
            raise ValueError("tile memory too small for the completion queue")
        self.cq_count = 0
        self.cq_write_ptr = 0
        self.cq_read_ptr = 0
        self._event_backlog: list[CompletionEvent] = []
        self._cmd_staging = [0] * 7
        self._msg_counter = 0

        # intra-tile master ports: port 0 reads, the rest write
        self._read_busy = False
        self._write_busy = [False] * (intra_ports - 1)
        self._read_waiters: list = []
        self._write_waiters: list = []

        # engine state
        self._engine_busy = False
        self._response_jobs: list[_TxJob] = []
        self._tx_job: _TxJob | None = None
        self._read_stream: _ReadStream | None = None
        self._write_streams: list[tuple[int, _WriteStream]] = []

        # switch state
        self.injection = InputUnit(
            index=0, name="inject", port_enable_bit=-1,
            fifo=CycleFifo(sim, 8, consumer=self, producer=self),
        )
        self.inputs: list[InputUnit] = [self.injection]
        self.outputs: dict[tuple, OutputRef] = {
            (PortKind.INTRA, 0): OutputRef((PortKind.INTRA, 0), _LocalSink(self), lanes=1,
                                           port_enable_bit=-1, lockless=True),
        }
        self._arb_pointers: dict = {}
        self._trackers: dict[tuple[int, int], _MessageTracker] = {}
        self._due: dict[int, list] = {}

    # ------------------------------------------------------------------
    # scheduling helpers

    def _at(self, cycle: int, fn) -> None:
        """Run `fn(cycle)` at `cycle`; immediately when already due."""
        if cycle <= self.sim.clock:
            fn(self.sim.clock)
            return
        self._due.setdefault(cycle, []).append(fn)
        self.wake(cycle)

    def add_input(self, unit: InputUnit) -> None:
        unit.index = len(self.inputs)
        self.inputs.append(unit)

    def add_output(self, key: tuple, ref: OutputRef) -> None:
        self.outputs[key] = ref

    def next_msg_id(self) -> int:
        self._msg_counter = (self._msg_counter + 1) & 0xFFFF
        return self._msg_counter

    # ------------------------------------------------------------------
    # software-facing surface

    def push_command(self, command: RdmaCommand) -> bool:
        if not self.cmd_queue.push(command):
            return False
        self.sim.work_begin("commands")
        self._maybe_start_engine(self.sim.clock)
        return True

    def set_lut(self, index: int, entry: LutEntry) -> None:
        self.lut[index] = entry

    def pop_completion(self) -> CompletionEvent | None:
        if self.cq_count == 0:
            return None
        addr = self.cq_base + self.cq_read_ptr * EVENT_WORDS
        words = [self.memory.read_word(addr + i) for i in range(EVENT_WORDS)]
        self.cq_read_ptr = (self.cq_read_ptr + 1) % self.cq_depth
        self.cq_count -= 1
        if self._event_backlog:
            self.wake(self.sim.clock + 1)
        return CompletionEvent.unpack(words)

    def mem_write(self, addr: int, values) -> StreamHandle:
        handle = StreamHandle()
        values = [int(v) & 0xFFFFFFFF for v in values]
        if not values:
            handle.done_cycle = self.sim.clock
            return handle
        if not self.memory.check_range(addr, len(values)):
            raise MemoryFault(f"write [{addr}, +{len(values)}) outside tile memory")
        self.sim.work_begin("port_streams")

        def finish(now):
            handle.done_cycle = now
            self.sim.work_end("port_streams")

        self._acquire_write(self.sim.clock + 1,
                            lambda now, port: self._start_write(now, port, addr, values, finish))
        return handle

    def mem_read(self, addr: int, length: int) -> StreamHandle:
        handle = StreamHandle()
        if length == 0:
            handle.done_cycle = self.sim.clock
            handle.data = []
            return handle
        if not self.memory.check_range(addr, length):
            raise MemoryFault(f"read [{addr}, +{length}) outside tile memory")
        self.sim.work_begin("port_streams")

        def finish(now, data):
            handle.done_cycle = now
            handle.data = data
            self.sim.work_end("port_streams")

        self._acquire_read(self.sim.clock + 1,
                           lambda now: self._start_read(now, addr, length, finish))
        return handle

    # register file address map

    def slave_read(self, addr: int) -> int:
        if addr == REG_ID:
            return self.tile_id
        if addr == REG_DIM_PRIORITY:
            word = 0
            for level, dim in enumerate(self.regfile.dim_priority):
                word |= dim << (2 * level)
            return word
        if addr == REG_ARB_POLICY:
            return ARB_POLICIES.index(self.regfile.arb_policy)
        if addr == REG_PORT_ENABLE:
            return self.regfile.port_enable & 0xFFFFFFFF
        if addr == REG_TIMEOUT:
            return self.regfile.timeout_cycles
        if addr == REG_STATUS:
            return self.regfile.status
        if addr == REG_CQ_BASE:
            return self.cq_base
        if addr == REG_CQ_DEPTH:
            return self.cq_depth
        if addr == REG_CQ_WRITE_PTR:
            return self.cq_write_ptr
        if addr == REG_CQ_READ_PTR:
            return self.cq_read_ptr
        if addr == CMD_DOORBELL:
            return self.cmd_queue.free_slots
        if LUT_REGION <= addr < LUT_REGION + len(self.lut) * LUT_ENTRY_WORDS:
            index, offset = divmod(addr - LUT_REGION, LUT_ENTRY_WORDS)
            entry = self.lut[index]
            return [entry.start_addr, entry.length,
                    int(entry.valid) | int(entry.send_eligible) << 1, 0][offset]
        raise MemoryFault(f"slave read at {addr:#x} hits no register")

    def slave_write(self, addr: int, value: int) -> bool:
        if addr == REG_DIM_PRIORITY:
            prio = tuple((value >> (2 * level)) & 0x3 for level in range(self.regfile.ndims))
            self.regfile.set_priority(prio)
        elif addr == REG_ARB_POLICY:
            self.regfile.arb_policy = ARB_POLICIES[value]
        elif addr == REG_PORT_ENABLE:
            self.regfile.port_enable = value
        elif addr == REG_TIMEOUT:
            self.regfile.timeout_cycles = value
        elif addr == REG_SOFT_RESET:
            self.regfile.soft_reset()
            self._arb_pointers.clear()
        elif addr == REG_CQ_READ_PTR:
            self.cq_read_ptr = value % self.cq_depth
        elif CMD_REGION <= addr < CMD_DOORBELL:
            self._cmd_staging[addr - CMD_REGION] = value & 0xFFFFFFFF
        elif addr == CMD_DOORBELL:
            return self.push_command(RdmaCommand.unpack(list(self._cmd_staging)))
        elif LUT_REGION <= addr < LUT_REGION + len(self.lut) * LUT_ENTRY_WORDS:
            index, offset = divmod(addr - LUT_REGION, LUT_ENTRY_WORDS)
            entry = self.lut[index]
            if offset == 0:
                entry.start_addr = value
            elif offset == 1:
                entry.length = value
            elif offset == 2:
                entry.valid = bool(value & 1)
                entry.send_eligible = bool(value & 2)
        else:
            raise MemoryFault(f"slave write at {addr:#x} hits no register")
        return True

    # ------------------------------------------------------------------
    # completion queue (a ring living at the top of tile memory)

    def emit_event(self, kind: CompletionKind, *, tag: int = 0,
                   status: EventStatus = EventStatus.NONE, addr: int = 0,
                   length: int = 0, peer: int = 0) -> None:
        event = CompletionEvent(kind=kind, tag=tag, status=status, addr=addr,
                                length=length, peer=peer, cycle=self.sim.clock)
        self._event_backlog.append(event)
        self.sim.work_begin("events")
        self._drain_events()

    def _drain_events(self) -> None:
        while self._event_backlog and self.cq_count < self.cq_depth:
            event = self._event_backlog.pop(0)
            addr = self.cq_base + self.cq_write_ptr * EVENT_WORDS
            for offset, word in enumerate(event.pack()):
                self.memory.write_word(addr + offset, word)
            self.cq_write_ptr = (self.cq_write_ptr + 1) % self.cq_depth
            self.cq_count += 1
            self.sim.work_end("events")
            self.sim.notify_event(self.tile_id, event)

    @property
    def cq_stalled(self) -> bool:
        return bool(self._event_backlog)

    # ------------------------------------------------------------------
    # intra-tile master ports (port 0 reads, ports 1.. write)

    def _acquire_read(self, cycle: int, claim) -> None:
        def attempt(now):
            if self._read_busy:
                self._read_waiters.append(claim)
            else:
                self._read_busy = True
                claim(now)

        self._at(cycle, attempt)

    def _release_read(self, now: int) -> None:
        self._read_busy = False
        if self._read_waiters:
            claim = self._read_waiters.pop(0)
            self._read_busy = True
            self._due.setdefault(now + 1, []).append(claim)
            self.wake(now + 1)

    def _acquire_write(self, cycle: int, claim) -> None:
        def attempt(now):
            for port, busy in enumerate(self._write_busy):
                if not busy:
                    self._write_busy[port] = True
                    claim(now, port)
                    return
            self._write_waiters.append(claim)

        self._at(cycle, attempt)

    def _release_write(self, now: int, port: int) -> None:
        self._write_busy[port] = False
        if self._write_waiters:
            claim = self._write_waiters.pop(0)
            self._write_busy[port] = True
            self._due.setdefault(now + 1, []).append(lambda cyc, p=port: claim(cyc, p))
            self.wake(now + 1)

    def _start_read(self, now: int, addr: int, length: int, on_done) -> None:
        self._read_stream = _ReadStream(addr=addr, length=length, on_done=on_done)
        self._port_counter(0).grants += 1
        self.wake(now + 1)

    def _advance_read(self, now: int) -> None:
        stream = self._read_stream
        if stream is None:
            return
        stream.data.append(self.memory.read_word(stream.addr + stream.pos))
        stream.pos += 1
        self._port_counter(0).flits += 1
        if stream.pos >= stream.length:
            self._read_stream = None
            self._release_read(now)
            stream.on_done(now, stream.data)
        else:
            self.wake(now + 1)

    def _start_write(self, now: int, port: int, addr: int, values, on_done) -> None:
        self._write_streams.append((port, _WriteStream(addr=addr, values=list(values),
                                                       on_done=on_done)))
        self._port_counter(1 + port).grants += 1
        self.wake(now + 1)

    def _advance_writes(self, now: int) -> None:
        if not self._write_streams:
            return
        remaining = []
        for port, stream in self._write_streams:
            self.memory.write_word(stream.addr + stream.pos, stream.values[stream.pos])
            stream.pos += 1
            self._port_counter(1 + port).flits += 1
            if stream.pos >= len(stream.values):
                self._release_write(now, port)
                stream.on_done(now)
            else:
                remaining.append((port, stream))
        self._write_streams = remaining
        if remaining:
            self.wake(now + 1)

    def _port_counter(self, port: int):
        return self.sim.stats.port(f"tile{self.tile_id}:L{port}")

    # ------------------------------------------------------------------
    # command engine

    def _maybe_start_engine(self, now: int) -> None:
        if self._engine_busy:
            return
        if not self._response_jobs and len(self.cmd_queue) == 0:
            return
        self._engine_busy = True
        self._due.setdefault(now + self.timing.cmd_issue_to_read, []).append(self._engine_execute)
        self.wake(now + self.timing.cmd_issue_to_read)

    def _engine_execute(self, now: int) -> None:
        if self._response_jobs:
            self._begin_tx_job(now, self._response_jobs.pop(0))
            return
        command = self.cmd_queue.pop()
        if command is None:
            self._engine_busy = False
            return
        if not command.code_valid or command.length < 1:
            self._finish_command(now, command, CompletionKind.ERROR, EventStatus.DECODE_ERROR)
            return
        if command.code == CommandCode.LOOPBACK:
            self._execute_loopback(now, command)
        elif command.code == CommandCode.PUT:
            self._execute_put_or_send(now, command, PacketKind.PUT_DATA)
        elif command.code == CommandCode.SEND:
            self._execute_put_or_send(now, command, PacketKind.SEND_DATA)
        else:
            self._execute_get(now, command)

    def _finish_command(self, now: int, command: RdmaCommand,
                        kind: CompletionKind, status: EventStatus,
                        addr: int = 0, length: int = 0) -> None:
        self.emit_event(kind, tag=command.tag, status=status, addr=addr,
                        length=length, peer=command.dst_dnp)
        self.sim.work_end("commands")
        self._engine_busy = False
        self._maybe_start_engine(now)

    # LOOPBACK: read stream on port 0, write stream on a write port,
    # offset by the configured turnaround.  Data is latched when the read
    # starts, so overlapping regions behave like a buffered copy.
    def _execute_loopback(self, now: int, command: RdmaCommand) -> None:
        n = command.length
        if not (self.memory.check_range(command.src_addr, n)
                and self.memory.check_range(command.dst_addr, n)):
            self._finish_command(now, command, CompletionKind.ERROR, EventStatus.ADDRESS_FAULT)
            return

        def begin_read(read_now):
            data = [int(v) for v in self.memory.read(command.src_addr, n)]
            self._start_read(read_now, command.src_addr, n,
                             lambda done_now, _data: self._loopback_read_done(done_now))

            def begin_write(write_now, port):
                self._start_write(write_now, port, command.dst_addr, data,
                                  lambda done_now: self._loopback_write_done(done_now, command, n))

            self._acquire_write(read_now + self.timing.loopback_turnaround, begin_write)

        self._acquire_read(now, begin_read)

    def _loopback_read_done(self, now: int) -> None:
        self._engine_busy = False
        self._maybe_start_engine(now)

    def _loopback_write_done(self, now: int, command: RdmaCommand, n: int) -> None:
        self.emit_event(CompletionKind.CMD_DONE, tag=command.tag, addr=command.dst_addr,
                        length=n, peer=self.tile_id)
        self.sim.work_end("commands")

    def _execute_put_or_send(self, now: int, command: RdmaCommand, kind: PacketKind) -> None:
        if not self.memory.check_range(command.src_addr, command.length):
            self._finish_command(now, command, CompletionKind.ERROR, EventStatus.ADDRESS_FAULT)
            return
        job = _TxJob(
            kind=kind,
            dest=command.dst_dnp,
            base_target=0 if kind == PacketKind.SEND_DATA else command.dst_addr,
            src_addr=command.src_addr,
            length=command.length,
            msg_id=self.next_msg_id(),
            tag=command.tag,
            on_emitted=lambda done_now: self._tx_done_event(done_now, command),
        )
        self._begin_tx_job(now, job)

    def _tx_done_event(self, now: int, command: RdmaCommand) -> None:
        self.emit_event(CompletionKind.CMD_DONE, tag=command.tag, addr=command.dst_addr,
                        length=command.length, peer=command.dst_dnp)
        self.sim.work_end("commands")

    def _execute_get(self, now: int, command: RdmaCommand) -> None:
        if command.length > MAX_GET_LENGTH:
            self._finish_command(now, command, CompletionKind.ERROR, EventStatus.DECODE_ERROR)
            return
        request = Packet(
            net=NetHeader(dest=command.src_dnp, source=self.tile_id,
                          kind=PacketKind.GET_REQUEST, payload_len=0),
            rdma=RdmaHeader(target_addr=command.dst_addr, aux_dnp=command.dst_dnp,
                            aux_addr=command.src_addr, length_total=command.length),
        )
        job = _TxJob(kind=PacketKind.GET_REQUEST, dest=command.src_dnp, base_target=0,
                     src_addr=0, length=0, msg_id=0, tag=command.tag, prebuilt=request,
                     on_emitted=lambda done_now: self._finish_get_request(done_now, command))
        self._begin_tx_job(now, job)

    def _finish_get_request(self, now: int, command: RdmaCommand) -> None:
        self.emit_event(CompletionKind.CMD_DONE, tag=command.tag, addr=command.dst_addr,
                        length=command.length, peer=command.dst_dnp)
        self.sim.work_end("commands")

    def _begin_tx_job(self, now: int, job: _TxJob) -> None:
        if job.prebuilt is not None:
            transit = self._make_transit(job.prebuilt, now)
            if job.on_emitted is not None:
                transit.tail_hook = job.on_emitted
            job.transit = transit
            self._tx_job = job
            self.wake(now + 1)
            return
        job.chunks = fragment_message(job.length)

        def begin_read(read_now):
            job.read_start = read_now
            self._tx_job = job
            self.wake(read_now + 1)

        self._acquire_read(now, begin_read)

    def _make_transit(self, packet: Packet, now: int) -> PacketTransit:
        words = encode_packet(packet)
        uid = self.sim.next_packet_uid()
        record = PacketRecord(
            uid=uid, kind=packet.net.kind.name, src=self.tile_id, dst=packet.net.dest,
            payload_words=packet.net.payload_len, issue_cycle=now,
            msg_id=packet.rdma.msg_id, seq=packet.rdma.seq,
        )
        self.sim.stats.new_packet(record)
        self.sim.stats.injected_words += packet.net.payload_len
        self.sim.stats.flits_entered += len(words)
        transit = PacketTransit(uid=uid, packet=packet, words=words,
                                src_id=self.tile_id, dest_id=packet.net.dest,
                                record=record, origin=self)
        transit.sent_words = list(words)
        self.sim.work_begin("packets")
        return transit

    def _advance_feeder(self, now: int) -> None:
        """Push the next flit of the active TX job into the injection unit."""
        job = self._tx_job
        if job is None:
            return
        if job.transit is None:
            # form the next fragment; its payload is latched from memory here
            seq = job.chunk_index
            chunk = job.chunks[seq]
            offset = seq * MAX_PAYLOAD_WORDS
            payload = [int(v) for v in self.memory.read(job.src_addr + offset, chunk)]
            packet = Packet(
                net=NetHeader(dest=job.dest, source=self.tile_id, kind=job.kind,
                              payload_len=chunk, last=seq == len(job.chunks) - 1,
                              fault=job.fault_notify),
                rdma=RdmaHeader(target_addr=0 if job.kind == PacketKind.SEND_DATA
                                else job.base_target + offset,
                                msg_id=job.msg_id, seq=seq, length_total=job.length),
                payload=payload,
            )
            job.transit = self._make_transit(packet, now)
            if seq == len(job.chunks) - 1 and job.on_emitted is not None:
                job.transit.tail_hook = job.on_emitted
            job.word_index = 0
        transit = job.transit
        if not self.injection.fifo.can_accept(now):
            return  # the pop of the injection fifo wakes us again
        widx = job.word_index
        if HEAD_WORDS <= widx < transit.word_count - 1:
            # payload word: gated by the read-port pace
            ready = job.read_start + job.words_fed
            if now < ready:
                self.wake(ready)
                return
            job.words_fed += 1
            self._port_counter(0).flits += 1
        self.injection.fifo.push(now, now + 1, (transit, widx))
        job.word_index += 1
        if job.word_index >= transit.word_count:
            job.transit = None
            job.chunk_index += 1
            if job.chunk_index >= len(job.chunks):
                self._tx_job = None
                if job.read_start >= 0:
                    self._release_read(now)
                self._engine_busy = False
                self._maybe_start_engine(now)
                return
        self.wake(now + 1)

    # ------------------------------------------------------------------
    # routing

    def _route_transit(self, transit: PacketTransit):
        """Pick (output key, lane, head delay) for a head flit; None means
        the packet is unroutable and gets quarantined."""
        try:
            dest_coord = self.network.decode_id(transit.dest_id)
        except Exception:
            return None
        if dest_coord == self.coord:
            return ((PortKind.INTRA, 0), 0, 1)
        setup = self.timing.switch_head_setup
        if self.network.same_chip(self.coord, dest_coord):
            port = self.network.onchip_route(self, dest_coord)
            if port is not None and self.regfile.port_enabled(self.network.enable_bit(self, port)):
                return ((PortKind.ONCHIP, port.index), 0, setup)
        try:
            port = route_output_port(self.coord, dest_coord,
                                     self.regfile.dim_priority, self.network.sizes)
        except RouteError:
            return None
        if port.kind != PortKind.OFFCHIP:
            return None
        if (PortKind.OFFCHIP, port.index) not in self.outputs:
            return None
        if not self.regfile.port_enabled(self.network.enable_bit(self, port)):
            return None
        dim, sign = port.lattice_dim, port.lattice_sign
        if transit.leg_dim != dim:
            transit.set_vc_hint(0)
            transit.leg_dim = dim
        vc = allocate_vc(self.network.sizes[dim], self.coord[dim], sign, transit.vc_class)
        transit.set_vc_hint(vc)
        return ((PortKind.OFFCHIP, port.index), vc, setup)

    # ------------------------------------------------------------------
    # receive path

    def deliver_word(self, now: int, transit: PacketTransit, widx: int, from_unit: int) -> None:
        if widx == 0:
            transit.record.head_delivered_cycle = now
        if transit.flit_kind(widx) == FlitKind.TAIL:
            transit.record.tail_delivered_cycle = now
            transit.record.path.append(self.tile_id)
            transit.record.hops = max(len(transit.record.path) - 1, 0)
            transit.record.final_vc = transit.vc_class
            self._process_delivery(now, transit)

    def _process_delivery(self, now: int, transit: PacketTransit) -> None:
        if self.cq_stalled:
            # consumption stalls rather than losing event order
            self._due.setdefault(now + 1, []).append(
                lambda cyc, t=transit: self._process_delivery(cyc, t))
            self.wake(now + 1)
            return
        try:
            packet = decode_packet(transit.words)
        except Exception:
            self._discard(transit, "malformed", EventStatus.DECODE_ERROR)
            return
        if (not packet.footer.corrupted
                and packet.payload != transit.sent_words[HEAD_WORDS:-1]):
            self.sim.stats.sequence_mismatches += 1
        # envelope must arrive bit-exact: header words and the footer's CRC
        # field (the corrupted bit and the VC hint mutate legitimately)
        vc_mask = ~(0x3 << 18) & 0xFFFFFFFF
        if (transit.words[0] != transit.sent_words[0]
                or (transit.words[1] & vc_mask) != (transit.sent_words[1] & vc_mask)
                or transit.words[2:HEAD_WORDS] != transit.sent_words[2:HEAD_WORDS]
                or (transit.words[-1] & 0xFFFF) != (transit.sent_words[-1] & 0xFFFF)):
            self.sim.stats.envelope_violations += 1
        source = packet.net.source
        if packet.net.kind == PacketKind.GET_REQUEST:
            self._spawn_get_response(now, packet)
            self._retire(transit, delivered=True)
            return
        if packet.net.fault:
            self.emit_event(CompletionKind.ERROR, tag=packet.rdma.msg_id,
                            status=EventStatus.REMOTE_ERROR, addr=packet.rdma.target_addr,
                            length=0, peer=source)
            self._retire(transit, delivered=True)
            return
        key = (source, packet.rdma.msg_id)
        tracker = self._trackers.get(key)
        if tracker is None:
            tracker = self._trackers[key] = _MessageTracker()
        if tracker.poisoned:
            self._consume_error(transit, packet, EventStatus.LUT_MISS, tracker, key)
            return
        if packet.rdma.seq != tracker.expected_seq:
            tracker.poisoned = True
            self._consume_error(transit, packet, EventStatus.SEQ_GAP, tracker, key)
            return
        tracker.expected_seq += 1
        if packet.net.kind == PacketKind.SEND_DATA and not tracker.claimed:
            index = self._claim_send_buffer(packet.rdma.length_total)
            if index is None:
                tracker.poisoned = True
                self._consume_error(transit, packet, EventStatus.LUT_MISS, tracker, key)
                return
            tracker.claimed = True
            tracker.base_addr = self.lut[index].start_addr
        if packet.net.kind == PacketKind.PUT_DATA:
            addr = packet.rdma.target_addr
            if not self._lut_covers(addr, packet.net.payload_len):
                tracker.poisoned = True
                self._consume_error(transit, packet, EventStatus.LUT_MISS, tracker, key)
                return
            if packet.rdma.seq == 0:
                tracker.base_addr = addr
        else:
            addr = tracker.base_addr + packet.rdma.seq * MAX_PAYLOAD_WORDS
        tracker.corrupted = tracker.corrupted or packet.footer.corrupted
        if packet.net.payload_len == 0:
            self._delivery_written(now, transit, packet, tracker, key)
            return
        write_at = transit.record.tail_delivered_cycle + self.timing.deliver_to_write - 1

        def begin_write(write_now, port):
            transit.record.first_write_cycle = write_now
            self._start_write(write_now, port, addr, packet.payload,
                              lambda done_now: self._delivery_written(done_now, transit,
                                                                      packet, tracker, key))

        self._acquire_write(write_at, begin_write)

    def _delivery_written(self, now: int, transit: PacketTransit, packet: Packet,
                          tracker: _MessageTracker, key: tuple) -> None:
        transit.record.last_write_cycle = now
        self.sim.stats.delivered_words += packet.net.payload_len
        tracker.received_words += packet.net.payload_len
        if packet.net.last:
            status = EventStatus.PAYLOAD_CORRUPTED if tracker.corrupted else EventStatus.NONE
            self.emit_event(CompletionKind.PKT_RECEIVED, tag=packet.rdma.msg_id,
                            status=status, addr=tracker.base_addr,
                            length=tracker.received_words, peer=packet.net.source)
            self._trackers.pop(key, None)
        self._retire(transit, delivered=True)

    def _consume_error(self, transit: PacketTransit, packet: Packet,
                       status: EventStatus, tracker: _MessageTracker, key: tuple) -> None:
        self.emit_event(CompletionKind.ERROR, tag=packet.rdma.msg_id, status=status,
                        addr=packet.rdma.target_addr, length=packet.net.payload_len,
                        peer=packet.net.source)
        self.sim.stats.discarded_words += packet.net.payload_len
        transit.record.discarded = status.name.lower()
        if packet.net.last:
            self._trackers.pop(key, None)
        self._retire(transit, delivered=False)

    def _retire(self, transit: PacketTransit, delivered: bool) -> None:
        if delivered:
            self.sim.stats.flits_delivered += transit.word_count
        else:
            self.sim.stats.flits_discarded += transit.word_count
        self.sim.work_end("packets")

    def _discard(self, transit: PacketTransit, reason: str, status: EventStatus) -> None:
        transit.record.discarded = reason
        self.emit_event(CompletionKind.ERROR, tag=transit.packet.rdma.msg_id,
                        status=status, addr=0, length=transit.packet.net.payload_len,
                        peer=transit.src_id)
        self.sim.stats.discarded_words += transit.packet.net.payload_len
        self.sim.stats.flits_discarded += transit.word_count
        self.sim.work_end("packets")

    def _lut_covers(self, addr: int, length: int) -> bool:
        return any(entry.contains(addr, length) for entry in self.lut)

    def _claim_send_buffer(self, total_words: int) -> int | None:
        for index, entry in enumerate(self.lut):
            if entry.valid and entry.send_eligible and entry.length >= total_words:
                entry.send_eligible = False
                return index
        return None

    def _spawn_get_response(self, now: int, request: Packet) -> None:
        length = request.rdma.length_total
        src_addr = request.rdma.aux_addr
        if length < 1 or not self.memory.check_range(src_addr, length):
            self.emit_event(CompletionKind.ERROR, status=EventStatus.ADDRESS_FAULT,
                            addr=src_addr, length=length, peer=request.net.source)
            notice = Packet(
                net=NetHeader(dest=request.rdma.aux_dnp, source=self.tile_id,
                              kind=PacketKind.PUT_DATA, payload_len=0, fault=True),
                rdma=RdmaHeader(target_addr=request.rdma.target_addr,
                                msg_id=self.next_msg_id(), seq=0, length_total=0),
            )
            job = _TxJob(kind=PacketKind.PUT_DATA, dest=request.rdma.aux_dnp,
                         base_target=request.rdma.target_addr, src_addr=0, length=0,
                         msg_id=notice.rdma.msg_id, tag=0, prebuilt=notice)
        else:
            job = _TxJob(kind=PacketKind.PUT_DATA, dest=request.rdma.aux_dnp,
                         base_target=request.rdma.target_addr, src_addr=src_addr,
                         length=length, msg_id=self.next_msg_id(), tag=0)
        self.sim.work_begin("responses")
        original = job.on_emitted

        def done(done_now):
            if original is not None:
                original(done_now)
            self.sim.work_end("responses")

        job.on_emitted = done
        self._response_jobs.append(job)
        self._maybe_start_engine(now)

    # ------------------------------------------------------------------
    # crossbar

    def _switch_pass(self, now: int) -> None:
        requests: dict = {}
        plans: dict[int, tuple] = {}
        retry = False
        for unit in self.inputs:
            item = unit.fifo.peek(now)
            if item is None:
                visible = unit.fifo.front_visible_cycle()
                if visible is not None:
                    self.wake(visible)
                continue
            transit, widx = item
            if unit.discarding:
                unit.fifo.pop(now)
                unit.last_pop = now
                self._arm_front(unit, now)
                if transit.flit_kind(widx) == FlitKind.TAIL:
                    unit.discarding = False
                    unit.bound = None
                    self._discard(transit, "route_error", EventStatus.ROUTE_ERROR)
                continue
            if item is not unit.front_item:
                unit.front_item = item
                front_cycle = max(unit.fifo.front_visible_cycle(), unit.last_pop)
                if unit.bound is None:
                    if widx != 0:
                        raise SimulationError(f"{self.name}/{unit.name}: body flit with no head")
                    decision = self._route_transit(transit)
                    if decision is None:
                        transit.record.path.append(self.tile_id)
                        unit.discarding = True
                        unit.fifo.pop(now)
                        unit.last_pop = now
                        self._arm_front(unit, now)
                        continue
                    unit.target_key, unit.target_lane, delay = decision
                else:
                    if transit is not unit.bound:
                        raise SimulationError(f"{self.name}/{unit.name}: wormhole interleave")
                    delay = 1
                unit.eligible_at = front_cycle + delay
            if now < unit.eligible_at:
                self.wake(unit.eligible_at)
                continue
            out = self.outputs[unit.target_key]
            lane = unit.target_lane
            if not out.lockless and out.lane_owner[lane] is not None \
                    and out.lane_owner[lane] is not transit:
                self._note_blocked(now, unit)
                retry = True
                continue
            if not out.sink.can_accept(now, lane):
                self._note_blocked(now, unit)
                continue  # the sink's pop wakes us
            requests.setdefault(unit.target_key, []).append(unit.index)
            plans[unit.index] = (unit, transit, widx, out, lane)
        if plans:
            grants = arbitrate(requests, self.regfile.arb_policy, self._arb_pointers,
                               len(self.inputs))
            granted = set(grants.values())
            for key in sorted(grants):
                self._move_flit(now, *plans[grants[key]])
            for unit_index, (unit, *_rest) in plans.items():
                if unit_index not in granted:
                    self.sim.stats.port(f"tile{self.tile_id}:in{unit.index}").stalls += 1
                    retry = True
        if retry:
            self.wake(now + 1)

    def _arm_front(self, unit: InputUnit, now: int) -> None:
        visible = unit.fifo.front_visible_cycle()
        if visible is not None:
            self.wake(max(visible, now + 1))

    def _note_blocked(self, now: int, unit: InputUnit) -> None:
        if unit.blocked_since < 0:
            unit.blocked_since = now
        if not unit.timeout_flagged:
            deadline = unit.blocked_since + self.regfile.timeout_cycles
            if now >= deadline:
                self.regfile.raise_status(STATUS_TIMEOUT)
                self.sim.stats.timeout_flags += 1
                unit.timeout_flagged = True
            else:
                self.wake(deadline)

    def _move_flit(self, now: int, unit: InputUnit, transit: PacketTransit,
                   widx: int, out: OutputRef, lane: int) -> None:
        unit.fifo.pop(now)
        unit.last_pop = now
        unit.blocked_since = -1
        unit.timeout_flagged = False
        kind = transit.flit_kind(widx)
        is_local = out.key[0] == PortKind.INTRA
        if widx == 0:
            unit.bound = transit
            if not out.lockless:
                out.lane_owner[lane] = transit
            if not is_local:
                transit.record.path.append(self.tile_id)
            if unit is self.injection and transit.record.inject_cycle < 0:
                transit.record.inject_cycle = now
        out.sink.send(now, transit, widx, lane, unit.index)
        counter = self.sim.stats.port(f"tile{self.tile_id}:{self._out_label(out.key)}")
        counter.flits += 1
        if widx == 0:
            counter.grants += 1
        if kind == FlitKind.TAIL:
            if not out.lockless:
                out.lane_owner[lane] = None
            unit.bound = None
            unit.target_key = None
            if unit is self.injection and transit.tail_hook is not None:
                hook, transit.tail_hook = transit.tail_hook, None
                hook(now)
        self._arm_front(unit, now)

    def _out_label(self, key: tuple) -> str:
        kind, index = key
        if kind == PortKind.INTRA:
            return "local"
        if kind == PortKind.ONCHIP:
            return f"N{index}"
        return PortId(PortKind.OFFCHIP, index).label

    # ------------------------------------------------------------------

    def tick(self, now: int) -> None:
        due = self._due.pop(now, None)
        if due:
            for fn in due:
                fn(now)
        if self._read_stream is not None:
            self._advance_read(now)
        self._advance_writes(now)
        if self._tx_job is not None:
            self._advance_feeder(now)
        if self._event_backlog:
            self._drain_events()
        self._switch_pass(now)


class _LocalSink:
    """Adapter: the switch's local output delivers into the node.

    Consumption stops while the completion queue is full so that events are
    never overwritten; the backpressure propagates into the fabric instead.
    """

    def __init__(self, node: Dnp):
        self.node = node

    def can_accept(self, now: int, lane: int) -> bool:
        return not self.node.cq_stalled

    def send(self, now: int, transit, word_index: int, lane: int, from_unit: int) -> None:
        self.node.deliver_word(now, transit, word_index, from_unit)
