"""Deterministic cycle-level simulation kernel.

The kernel is cycle-driven: every observable action happens at an integer
cycle, handoffs between components become visible one cycle after they are
made, and capacity checks count only state committed at the start of the
current cycle.  Components therefore never observe same-cycle writes of
their peers and the evaluation order inside one cycle cannot change any
result.  Idle cycles are skipped by jumping the clock to the next scheduled
wake, which is behaviour-identical to stepping through them.

Work accounting doubles as the drain/deadlock detector: every command,
packet and port stream registers a work unit, and a run is drained exactly
when the count returns to zero.  A nonzero count with no scheduled wake
means the fabric is stuck, which is reported rather than spun on.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

RNG_ALGORITHM = "MT19937/random.Random, sha512 string-seeded streams"


class SimulationError(RuntimeError):
    """Internal invariant violation; aborts the run with a diagnostic."""


class MemoryFault(ValueError):
    """An access fell outside the tile memory bounds."""


@dataclass
class TimingConfig:
    """Stage latencies in cycles.

    The first five fields are the calibrated pipeline stages; their defaults
    satisfy the reference sums (issue-to-read + loopback turnaround = 100,
    adding switch injection and delivery gives 130 on chip, and the full
    off-chip chain totals 250).  `serdes_transit` is quoted for a minimal
    7-word packet: the serializer pipeline depth is derived from it by
    subtracting the line time of those words.  `switch_head_setup` is the
    route/VC/arbitration pipeline a head flit pays when it is forwarded to
    an inter-tile port; it is sized so an extra off-chip hop costs about 100
    cycles, less than switch_inject + serdes_transit, because the second
    link overlaps the first.
    """

    cmd_issue_to_read: int = 70
    switch_inject: int = 30
    serdes_transit: int = 120
    deliver_to_write: int = 30
    loopback_turnaround: int = 30
    switch_head_setup: int = 28
    onchip_link_latency: int = 2
    noc_transit_latency: int = 2
    clock_mhz: int = 500

    def validate(self) -> None:
        for name in (
            "cmd_issue_to_read",
            "switch_inject",
            "serdes_transit",
            "deliver_to_write",
            "loopback_turnaround",
            "switch_head_setup",
            "onchip_link_latency",
            "noc_transit_latency",
            "clock_mhz",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"timing value {name} must be non-negative")
        if self.switch_inject < self.switch_head_setup + 2:
            raise ValueError("switch_inject must cover switch_head_setup plus the two handoffs")
        if self.deliver_to_write < 1 or self.cmd_issue_to_read < 1:
            raise ValueError("pipeline stages need at least one cycle")

    def ns(self, cycles: int) -> float:
        return cycles * 1000.0 / self.clock_mhz


class TileMemory:
    """Word-addressed tile memory; unwritten words read as zero."""

    def __init__(self, words: int):
        if words < 1:
            raise ValueError("tile memory needs at least one word")
        self.size = words
        self._data = np.zeros(words, dtype=np.uint32)

    def check_range(self, addr: int, length: int) -> bool:
        return 0 <= addr and length >= 0 and addr + length <= self.size

    def read(self, addr: int, length: int) -> np.ndarray:
        if not self.check_range(addr, length):
            raise MemoryFault(f"read [{addr}, {addr + length}) outside {self.size}-word memory")
        return self._data[addr : addr + length].copy()

    def write(self, addr: int, words) -> None:
        words = np.asarray(words, dtype=np.uint32)
        if not self.check_range(addr, len(words)):
            raise MemoryFault(f"write [{addr}, {addr + len(words)}) outside {self.size}-word memory")
        self._data[addr : addr + len(words)] = words

    def read_word(self, addr: int) -> int:
        if not self.check_range(addr, 1):
            raise MemoryFault(f"read at {addr} outside {self.size}-word memory")
        return int(self._data[addr])

    def write_word(self, addr: int, value: int) -> None:
        if not self.check_range(addr, 1):
            raise MemoryFault(f"write at {addr} outside {self.size}-word memory")
        self._data[addr] = value & 0xFFFFFFFF

    def snapshot(self) -> np.ndarray:
        return self._data.copy()


@dataclass
class PacketRecord:
    """Per-packet trace entry kept by the statistics ledger."""

    uid: int
    kind: str
    src: int
    dst: int
    payload_words: int
    issue_cycle: int
    msg_id: int = 0
    seq: int = 0
    inject_cycle: int = -1
    head_delivered_cycle: int = -1
    tail_delivered_cycle: int = -1
    first_write_cycle: int = -1
    last_write_cycle: int = -1
    hops: int = 0
    path: list[int] = field(default_factory=list)
    final_vc: int = 0
    corrupted: bool = False
    discarded: str | None = None


@dataclass
class LinkCounters:
    busy_cycles: int = 0
    words: int = 0
    retransmissions: int = 0
    injected_error_frames: int = 0
    injected_envelope_frames: int = 0
    injected_payload_frames: int = 0
    flagged_payload_frames: int = 0


@dataclass
class PortCounters:
    flits: int = 0
    grants: int = 0
    stalls: int = 0


class StatsLedger:
    """Append-only run statistics; frozen once the run is over."""

    def __init__(self, seed: int, config_echo: dict | None = None):
        self.seed = seed
        self.rng_algorithm = RNG_ALGORITHM
        self.config_echo = config_echo or {}
        self.packets: dict[int, PacketRecord] = {}
        self.links: dict[str, LinkCounters] = {}
        self.ports: dict[str, PortCounters] = {}
        self.injected_words = 0
        self.delivered_words = 0
        self.discarded_words = 0
        self.flits_entered = 0
        self.flits_delivered = 0
        self.flits_discarded = 0
        self.events_written = 0
        self.timeout_flags = 0
        self.sequence_mismatches = 0
        self.envelope_violations = 0
        self.drained = False
        self.final_cycle = 0
        self.in_flight: dict[str, int] = {}
        self._frozen = False

    def _check(self) -> None:
        if self._frozen:
            raise SimulationError("statistics ledger is frozen")

    def packet(self, uid: int) -> PacketRecord:
        return self.packets[uid]

    def new_packet(self, record: PacketRecord) -> None:
        self._check()
        self.packets[record.uid] = record

    def link(self, name: str) -> LinkCounters:
        got = self.links.get(name)
        if got is None:
            got = self.links[name] = LinkCounters()
        return got

    def port(self, name: str) -> PortCounters:
        got = self.ports.get(name)
        if got is None:
            got = self.ports[name] = PortCounters()
        return got

    def freeze(self, drained: bool, final_cycle: int, in_flight: dict[str, int]) -> None:
        self.drained = drained
        self.final_cycle = final_cycle
        self.in_flight = dict(in_flight)
        self._frozen = True

    def latency_summary(self) -> dict:
        done = [
            p.first_write_cycle - p.issue_cycle
            for p in self.packets.values()
            if p.first_write_cycle >= 0
        ]
        if not done:
            return {"count": 0}
        return {
            "count": len(done),
            "min": min(done),
            "max": max(done),
            "mean": sum(done) / len(done),
        }

    def to_dict(self, include_packets: bool = False) -> dict:
        out = {
            "seed": self.seed,
            "rng_algorithm": self.rng_algorithm,
            "drained": self.drained,
            "final_cycle": self.final_cycle,
            "in_flight": self.in_flight,
            "injected_words": self.injected_words,
            "delivered_words": self.delivered_words,
            "discarded_words": self.discarded_words,
            "flits_entered": self.flits_entered,
            "flits_delivered": self.flits_delivered,
            "flits_discarded": self.flits_discarded,
            "events_written": self.events_written,
            "timeout_flags": self.timeout_flags,
            "sequence_mismatches": self.sequence_mismatches,
            "envelope_violations": self.envelope_violations,
            "links": {k: vars(v) for k, v in sorted(self.links.items())},
            "ports": {k: vars(v) for k, v in sorted(self.ports.items())},
            "latency": self.latency_summary(),
        }
        if include_packets:
            out["packets"] = [
                {k: v for k, v in vars(p).items() if k != "path"}
                for _, p in sorted(self.packets.items())
            ]
        return out


class Component:
    """A schedulable simulation actor.  Subclasses implement tick()."""

    def __init__(self, sim: "Simulator", name: str):
        self.sim = sim
        self.name = name
        self.order = sim._register(self)
        self._armed: set[int] = set()

    def wake(self, cycle: int) -> None:
        self.sim._schedule(self, cycle)

    def tick(self, now: int) -> None:
        raise NotImplementedError


class CycleFifo:
    """Bounded FIFO handoff with next-cycle visibility semantics.

    Capacity decisions see the occupancy committed at the start of the
    current cycle plus this cycle's own intake, so concurrent producers and
    consumers are order-independent.  Slots can be reserved ahead of time
    for in-flight items (a serializer launches a word only against a
    reserved slot downstream, so arrivals never overflow).
    """

    def __init__(self, sim: "Simulator", capacity: int,
                 consumer: Component | None = None,
                 producer: Component | None = None):
        self.sim = sim
        self.capacity = capacity
        self.consumer = consumer
        self.producer = producer
        self.items: list = []  # (visible_cycle, item), FIFO
        self._head = 0
        self._reserved = 0
        self._snap_cycle = -1
        self._snap_occupancy = 0
        self._intake = 0

    def __len__(self) -> int:
        return len(self.items) - self._head

    def _touch(self, now: int) -> None:
        if now != self._snap_cycle:
            self._snap_cycle = now
            self._snap_occupancy = len(self) + self._reserved
            self._intake = 0

    def can_accept(self, now: int) -> bool:
        self._touch(now)
        return self._snap_occupancy + self._intake < self.capacity

    def push(self, now: int, visible: int, item) -> None:
        if not self.can_accept(now):
            raise SimulationError("push into full fifo")
        if visible <= now:
            raise SimulationError("handoffs become visible strictly later")
        self._intake += 1
        self.items.append((visible, item))
        if self.consumer is not None:
            self.consumer.wake(visible)

    def reserve(self, now: int) -> None:
        if not self.can_accept(now):
            raise SimulationError("reserve on full fifo")
        self._intake += 1
        self._reserved += 1

    def fill(self, now: int, visible: int, item) -> None:
        if self._reserved <= 0:
            raise SimulationError("fill without reservation")
        self._touch(now)
        self._reserved -= 1
        self.items.append((visible, item))
        if self.consumer is not None:
            self.consumer.wake(visible)

    def peek(self, now: int):
        if self._head < len(self.items):
            visible, item = self.items[self._head]
            if visible <= now:
                return item
        return None

    def front_visible_cycle(self) -> int | None:
        if self._head < len(self.items):
            return self.items[self._head][0]
        return None

    def pop(self, now: int):
        item = self.peek(now)
        if item is None:
            raise SimulationError("pop from empty or not-yet-visible fifo")
        self._touch(now)
        self._head += 1
        if self._head > 64 and self._head * 2 > len(self.items):
            del self.items[: self._head]
            self._head = 0
        if self.producer is not None:
            self.producer.wake(now + 1)
        return item


class Simulator:
    """Owns the clock, the wake agenda and the run-wide bookkeeping."""

    def __init__(self, seed: int = 1, timing: TimingConfig | None = None,
                 config_echo: dict | None = None):
        self.seed = seed
        self.timing = timing or TimingConfig()
        self.timing.validate()
        self.clock = 0
        self.stats = StatsLedger(seed, config_echo)
        self._components: list[Component] = []
        self._agenda: list[tuple[int, int, Component]] = []
        self._work: dict[str, int] = {}
        self._work_total = 0
        self._rngs: dict[str, random.Random] = {}
        self._packet_uid = 0
        self.event_listeners: list[Callable] = []

    # -- registration and scheduling -------------------------------------

    def _register(self, comp: Component) -> int:
        self._components.append(comp)
        return len(self._components) - 1

    def _schedule(self, comp: Component, cycle: int) -> None:
        if cycle <= self.clock:
            cycle = self.clock + 1
        if cycle in comp._armed:
            return
        comp._armed.add(cycle)
        heapq.heappush(self._agenda, (cycle, comp.order, comp))

    def rng(self, label: str) -> random.Random:
        got = self._rngs.get(label)
        if got is None:
            got = self._rngs[label] = random.Random(f"{self.seed}/{label}")
        return got

    def next_packet_uid(self) -> int:
        self._packet_uid += 1
        return self._packet_uid

    # -- work accounting ---------------------------------------------------

    def work_begin(self, category: str) -> None:
        self._work[category] = self._work.get(category, 0) + 1
        self._work_total += 1

    def work_end(self, category: str) -> None:
        count = self._work.get(category, 0)
        if count <= 0:
            raise SimulationError(f"work underflow for {category}")
        self._work[category] = count - 1
        self._work_total -= 1

    @property
    def in_flight(self) -> dict[str, int]:
        return {k: v for k, v in sorted(self._work.items()) if v > 0}

    # -- execution ---------------------------------------------------------

    def _run_cycle(self) -> None:
        agenda = self._agenda
        while agenda and agenda[0][0] == self.clock:
            _, _, comp = heapq.heappop(agenda)
            comp._armed.discard(self.clock)
            comp.tick(self.clock)

    def step(self) -> None:
        """Advance exactly one cycle and evaluate everything due in it."""
        self.clock += 1
        self._run_cycle()

    def run_until_drain(self, max_cycles: int = 1_000_000) -> StatsLedger:
        """Run until nothing is in flight, the agenda starves while work
        remains (a stall), or the cycle budget is exhausted.  The returned
        ledger is frozen; a drained simulator does not restart."""
        if self.stats._frozen:
            raise SimulationError("this simulator already ran to drain")
        while self._work_total > 0 or self._agenda:
            if not self._agenda:
                break  # work pending but nothing scheduled: stuck
            next_cycle = self._agenda[0][0]
            if next_cycle > max_cycles:
                self.clock = max_cycles
                break
            self.clock = next_cycle
            self._run_cycle()
            if self._work_total == 0:
                break
        drained = self._work_total == 0
        self.stats.freeze(drained, self.clock, self.in_flight)
        return self.stats

    def notify_event(self, tile_id: int, event) -> None:
        self.stats.events_written += 1
        for listener in self.event_listeners:
            listener(tile_id, event)
