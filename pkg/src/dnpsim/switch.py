"""Crossbar switch: dimension-order routing, dateline virtual channels,
round-robin/fixed-priority arbitration and wormhole flit forwarding.

Routing is static: the output port is a pure function of (current node,
destination, dimension priority).  Deadlock avoidance on torus rings uses a
dateline scheme with two virtual channels on off-chip ports: a packet rides
VC 0 until its path crosses the ring's wrap link, VC 1 from there on, and
the VC resets when the packet starts correcting a new dimension.  On-chip
ports carry one VC.

A head flit pays a configurable route/VC/arbitration setup time when it is
forwarded to an inter-tile port; body and tail flits follow the established
path at one flit per cycle.  An output port moves at most one flit per
cycle across its lanes, and a lane stays bound to its packet from head to
tail, so flits of distinct packets never interleave within a VC.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .addressing import crosses_wrap, ring_hop
from .kernel import Component, CycleFifo, SimulationError


class PortKind(enum.IntEnum):
    INTRA = 0
    ONCHIP = 1
    OFFCHIP = 2


_AXIS_NAMES = "XYZW"


@dataclass(frozen=True)
class PortId:
    kind: PortKind
    index: int

    @property
    def label(self) -> str:
        if self.kind == PortKind.OFFCHIP:
            axis = _AXIS_NAMES[self.index // 2]
            sign = "+" if self.index % 2 == 0 else "-"
            return f"{axis}{sign}"
        if self.kind == PortKind.ONCHIP:
            return f"N{self.index}"
        return f"L{self.index}"

    @property
    def lattice_dim(self) -> int:
        if self.kind != PortKind.OFFCHIP:
            raise ValueError("only off-chip ports map to lattice dimensions")
        return self.index // 2

    @property
    def lattice_sign(self) -> int:
        if self.kind != PortKind.OFFCHIP:
            raise ValueError("only off-chip ports map to lattice dimensions")
        return 1 if self.index % 2 == 0 else -1


def offchip_port(dim: int, sign: int) -> PortId:
    return PortId(PortKind.OFFCHIP, 2 * dim + (0 if sign > 0 else 1))


class RouteError(ValueError):
    """Destination unreachable: outside the lattice or no enabled port."""


def route_output_port(
    current: tuple[int, ...],
    dest: tuple[int, ...],
    priority: tuple[int, ...],
    sizes: tuple[int, ...],
) -> PortId:
    """Deterministic dimension-order routing on a torus.

    Picks the highest-priority dimension whose coordinate still differs and
    the shorter ring direction; equidistant wraps go positive.  Local
    delivery returns the intra port.
    """
    if len(current) != len(sizes) or len(dest) != len(sizes):
        raise RouteError(f"coordinate rank mismatch against lattice {sizes}")
    if any(not 0 <= c < s for c, s in zip(dest, sizes)):
        raise RouteError(f"destination {dest} outside lattice {sizes}")
    if current == dest:
        return PortId(PortKind.INTRA, 0)
    for dim in priority:
        if current[dim] != dest[dim]:
            direction, _ = ring_hop(sizes[dim], current[dim], dest[dim])
            return offchip_port(dim, direction)
    raise RouteError("priority order does not cover a differing dimension")


def allocate_vc(ring_size: int, src_coord: int, direction: int, prior_vc: int) -> int:
    """Dateline virtual-channel choice for one ring hop.

    The hop that crosses the wrap link, and every later hop of the same
    dimension leg, lands in VC 1; everything before stays in VC 0.
    """
    if prior_vc == 1 or crosses_wrap(ring_size, src_coord, direction):
        return 1
    return 0


def arbitrate(
    requests: dict,
    policy: str = "round_robin",
    pointers: dict | None = None,
    input_count: int = 0,
) -> dict:
    """Resolve (input -> output) contention for one cycle.

    `requests` maps an output key to the list of requesting input indices.
    Returns output key -> granted input; at most one grant per output and
    per input.  Round-robin keeps one pointer per output and advances it
    past the granted input; fixed priority always grants the lowest index.
    """
    grants: dict = {}
    busy_inputs: set[int] = set()
    for out_key in sorted(requests):
        candidates = [i for i in requests[out_key] if i not in busy_inputs]
        if not candidates:
            continue
        if policy == "fixed_priority":
            chosen = min(candidates)
        else:
            ptr = pointers.get(out_key, 0) if pointers is not None else 0
            chosen = min(candidates, key=lambda i: (i - ptr) % max(input_count, 1))
            if pointers is not None:
                pointers[out_key] = (chosen + 1) % max(input_count, 1)
        grants[out_key] = chosen
        busy_inputs.add(chosen)
    return grants


# -- register file ---------------------------------------------------------

REG_ID = 0x000
REG_DIM_PRIORITY = 0x001
REG_ARB_POLICY = 0x002
REG_PORT_ENABLE = 0x003
REG_TIMEOUT = 0x004
REG_STATUS = 0x005
REG_SOFT_RESET = 0x006
REG_CQ_BASE = 0x007
REG_CQ_DEPTH = 0x008
REG_CQ_WRITE_PTR = 0x009
REG_CQ_READ_PTR = 0x00A
LUT_REGION = 0x100
LUT_ENTRY_WORDS = 4
CMD_REGION = 0x200
CMD_DOORBELL = CMD_REGION + 7

STATUS_TIMEOUT = 1
STATUS_LINK_FAULT = 2

ARB_POLICIES = ("round_robin", "fixed_priority")


class RegisterFile:
    """Per-node configuration and status registers.

    The dimension priority is a permutation of the lattice dimensions,
    consumed first-entry-first.  Changing it while packets are in the
    fabric is rejected: static routing is only deadlock-free when every
    in-flight packet saw the same order.
    """

    def __init__(self, ndims: int = 3, priority: tuple[int, ...] = (2, 1, 0),
                 arb_policy: str = "round_robin", port_enable: int = ~0,
                 timeout_cycles: int = 10_000):
        self.ndims = ndims
        self.dim_priority = priority
        self.arb_policy = arb_policy
        self.port_enable = port_enable
        self.timeout_cycles = timeout_cycles
        self.status = 0
        self._in_fabric_probe = None  # callable set by the node
        self._validate_priority(priority)

    def _validate_priority(self, priority: tuple[int, ...]) -> None:
        if sorted(priority) != list(range(self.ndims)):
            raise ValueError(f"{priority} is not a permutation of 0..{self.ndims - 1}")

    def set_priority(self, priority: tuple[int, ...]) -> None:
        self._validate_priority(priority)
        if self._in_fabric_probe is not None and self._in_fabric_probe():
            raise SimulationError("routing priority change with packets in the fabric")
        self.dim_priority = tuple(priority)

    def port_enabled(self, bit: int) -> bool:
        return bool(self.port_enable >> bit & 1)

    def raise_status(self, bit: int) -> None:
        self.status |= bit

    def soft_reset(self) -> None:
        self.status = 0


# -- switch state machine ----------------------------------------------------


@dataclass
class InputUnit:
    """One (port, vc) input: a flit queue plus the wormhole binding."""

    index: int
    name: str
    fifo: CycleFifo
    port_enable_bit: int
    is_offchip: bool = False
    bound: object = None          # transit currently crossing via this input
    target_key: tuple | None = None
    target_lane: int = 0
    front_item: object = None
    last_pop: int = -1
    eligible_at: int = -1
    discarding: bool = False
    blocked_since: int = -1
    timeout_flagged: bool = False


class OutputRef:
    """A switch output: a sink plus per-lane wormhole locks."""

    def __init__(self, key: tuple, sink, lanes: int, port_enable_bit: int,
                 lockless: bool = False):
        self.key = key
        self.sink = sink
        self.lane_owner: list = [None] * lanes
        self.port_enable_bit = port_enable_bit
        self.lockless = lockless


class SinkProtocol:
    """What a switch output needs from its downstream stage."""

    def can_accept(self, now: int, lane: int) -> bool:  # pragma: no cover
        raise NotImplementedError

    def send(self, now: int, transit, word_index: int, lane: int, from_unit: int) -> None:  # pragma: no cover
        raise NotImplementedError
