"""Shared builders for simulator-level tests."""

import random

import pytest

from dnpsim.config import SimConfig, parse_config_text
from dnpsim.kernel import Component
from dnpsim.rdma import CommandCode, LutEntry, RdmaCommand


def small_config(lattice="2x2x2", scheme="torus3d", extra=""):
    text = f"[topology]\nlattice = {lattice}\nscheme = {scheme}\n" + extra
    cfg = parse_config_text(text)
    if "memory_words" not in extra:
        cfg.memory_words = 65536
    return cfg


def build_small(lattice="2x2x2", scheme="torus3d", extra="", seed=1):
    cfg = small_config(lattice, scheme, extra)
    cfg.seed = seed
    return cfg.build()


def register_window(tile, start=0x4000, length=0x3000, send_ok=False, index=0):
    tile.set_lut(index, LutEntry(start_addr=start, length=length, valid=True,
                                 send_eligible=send_ok))


def put(src_id, dst_id, src_addr, dst_addr, length, tag=0):
    return RdmaCommand(CommandCode.PUT, src_addr=src_addr, src_dnp=src_id,
                       dst_addr=dst_addr, dst_dnp=dst_id, length=length, tag=tag)


def drain_events(tile):
    events = []
    while (event := tile.pop_completion()) is not None:
        events.append(event)
    return events


class CommandDriver(Component):
    """Pushes queued (cycle, tile, command) entries, retrying on FIFO
    backpressure, and pops completions as they appear."""

    def __init__(self, net, auto_pop=True):
        super().__init__(net.sim, "driver")
        self.net = net
        self.schedule: list[tuple[int, int, RdmaCommand]] = []
        self.pending: list[tuple[int, RdmaCommand]] = []
        self.events: list[tuple[int, object]] = []
        if auto_pop:
            net.sim.event_listeners.append(self._on_event)

    def _on_event(self, tile_id, event):
        self.events.append((tile_id, event))
        self.net.tiles[tile_id].pop_completion()

    def add(self, cycle, tile_id, command):
        self.schedule.append((cycle, tile_id, command))
        self.wake(max(cycle, 1))

    def tick(self, now):
        still = []
        for cycle, tile_id, command in self.schedule:
            if cycle <= now:
                self.pending.append((tile_id, command))
            else:
                still.append((cycle, tile_id, command))
                self.wake(cycle)
        self.schedule = still
        again = []
        for tile_id, command in self.pending:
            if not self.net.tiles[tile_id].push_command(command):
                again.append((tile_id, command))
        self.pending = again
        if again:
            self.wake(now + 1)


@pytest.fixture
def rng():
    return random.Random(20260811)
