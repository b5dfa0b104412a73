"""Network construction: a 3D torus of tiles with optional on-chip grouping.

Every tile is a lattice node with up to six off-chip lattice ports wired to
its +/- neighbors with wraparound (dimensions of size one stay unwired).
Tiles are grouped into chips as contiguous blocks of the lattice; tiles of
one chip are additionally joined by the configured on-chip scheme:

* ``mt2d``: a non-wrapping 2D mesh over the tiles' on-chip ports;
* ``mtnoc``: one abstract network-on-chip cloud per chip, reached through a
  single CRC-checking interface port per tile;
* ``torus3d``: no on-chip network (one tile per chip).

Routing prefers the on-chip network for same-chip destinations when the
on-chip port is enabled, so off-chip behaviour can be measured on the same
build by disabling on-chip ports.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .addressing import DimSpec, decode_dnp_id, dims_3d, dims_4d, encode_dnp_id
from .kernel import CycleFifo, Simulator, TimingConfig
from .links import NocTransport, OffChipLink, OnChipLink, offchip_word_cycles
from .node import Dnp
from .packet import ENVELOPE_WORDS
from .rdma import RdmaCommand
from .switch import InputUnit, OutputRef, PortId, PortKind, RegisterFile

ONCHIP_SCHEMES = ("torus3d", "mt2d", "mtnoc")
MIN_PACKET_WORDS = ENVELOPE_WORDS + 1


class TopologyError(ValueError):
    """The topology specification violates a structural constraint."""


@dataclass
class TopologySpec:
    """Structural half of the configuration: lattice, chips, port counts."""

    lattice: tuple[int, int, int] = (2, 2, 2)
    scheme: str = "torus3d"
    chip_dims: tuple[int, int, int] = (1, 1, 1)
    intra_ports: int = 2        # L
    onchip_ports: int = 1       # N
    offchip_ports: int = 6      # M
    id_codec: str = "3d"
    mesh_shape: tuple[int, int] = (2, 4)

    @property
    def tiles_per_chip(self) -> int:
        cx, cy, cz = self.chip_dims
        return cx * cy * cz

    def validate(self) -> None:
        if self.scheme not in ONCHIP_SCHEMES:
            raise TopologyError(f"unknown on-chip scheme {self.scheme!r}")
        if any(s < 1 for s in self.lattice):
            raise TopologyError("lattice dimensions must be positive")
        if any(s > 64 for s in self.lattice):
            raise TopologyError("a lattice dimension exceeds the 6-bit id field")
        for size, chip in zip(self.lattice, self.chip_dims):
            if chip < 1 or size % chip:
                raise TopologyError(
                    f"chip dims {self.chip_dims} do not tile lattice {self.lattice}")
        used_dims = sum(1 for s in self.lattice if s > 1)
        if self.offchip_ports < 2 * used_dims:
            raise TopologyError(
                f"M={self.offchip_ports} ports cannot wire {used_dims} torus "
                f"dimensions (need {2 * used_dims})")
        if self.intra_ports < 2:
            raise TopologyError("L must be at least 2 (one read port, one write port)")
        if self.scheme == "mtnoc" and self.onchip_ports < 1:
            raise TopologyError("mtnoc needs N >= 1 for the network interface port")
        if self.scheme == "mt2d":
            mw, mh = self.mesh_shape
            if mw * mh != self.tiles_per_chip:
                raise TopologyError(
                    f"mesh {self.mesh_shape} does not hold {self.tiles_per_chip} tiles")
            degree = (2 if mw > 2 else mw - 1 if mw > 1 else 0) + \
                     (2 if mh > 2 else mh - 1 if mh > 1 else 0)
            max_degree = min(2, mw - 1) + min(2, mh - 1)
            if self.onchip_ports < max_degree:
                raise TopologyError(
                    f"N={self.onchip_ports} ports cannot wire a {mw}x{mh} mesh "
                    f"(max degree {max_degree})")
        if self.scheme == "torus3d" and self.tiles_per_chip != 1:
            raise TopologyError("torus3d scheme expects one tile per chip")
        if self.id_codec not in ("3d", "4d"):
            raise TopologyError(f"unknown id codec {self.id_codec!r}")
        if self.id_codec == "4d":
            if self.tiles_per_chip > 8:
                raise TopologyError("4d codec holds at most 8 tiles per chip (3 bits)")
            if any(size // chip > 32 for size, chip in zip(self.lattice, self.chip_dims)):
                raise TopologyError("4d codec chip coordinates exceed 5 bits")


@dataclass
class BuildParams:
    """Dynamic parameters the builder needs beyond the topology itself."""

    seed: int = 1
    timing: TimingConfig = field(default_factory=TimingConfig)
    memory_words: int = 1 << 20
    cmd_fifo_depth: int = 16
    cq_depth: int = 256
    lut_entries: int = 32
    vc_depth: int = 16
    offchip_vcs: int = 2
    serialization_factor: int = 16
    ddr: bool = True
    ber: float = 0.0
    retry_limit: int = 8
    arbitration: str = "round_robin"
    dimension_priority: tuple[int, int, int] = (2, 1, 0)
    timeout_cycles: int = 10_000
    config_echo: dict = field(default_factory=dict)


class NetworkInstance:
    """The built network: tiles, links, address codec and id helpers."""

    def __init__(self, spec: TopologySpec, params: BuildParams):
        spec.validate()
        self.spec = spec
        self.params = params
        self.sizes = spec.lattice
        self.chip_dims = spec.chip_dims
        self.sim = Simulator(seed=params.seed, timing=params.timing,
                             config_echo=params.config_echo)
        self._block_coords = sorted(itertools.product(*[range(c) for c in spec.chip_dims]))
        self._block_index = {c: i for i, c in enumerate(self._block_coords)}
        if spec.id_codec == "3d":
            self._dimspec = dims_3d(spec.lattice)
        else:
            chip_lattice = tuple(s // c for s, c in zip(spec.lattice, spec.chip_dims))
            self._dimspec = dims_4d((*chip_lattice, max(spec.tiles_per_chip, 1)))
        self.tiles: dict[int, Dnp] = {}
        self.links: dict[str, object] = {}
        self.nocs: dict[tuple, NocTransport] = {}
        self._mesh_pos: dict[tuple, tuple[int, int]] = {}
        self._onchip_dir_ports: dict[int, dict] = {}
        self._build()

    # -- address codec -----------------------------------------------------

    def encode_coord(self, coord: tuple[int, int, int]) -> int:
        if self.spec.id_codec == "3d":
            return encode_dnp_id(coord, self._dimspec)
        chip = tuple(c // d for c, d in zip(coord, self.chip_dims))
        block = tuple(c % d for c, d in zip(coord, self.chip_dims))
        return encode_dnp_id((*chip, self._block_index[block]), self._dimspec)

    def decode_id(self, raw: int) -> tuple[int, int, int]:
        decoded = decode_dnp_id(raw, self._dimspec)
        if self.spec.id_codec == "3d":
            coord = decoded
        else:
            *chip, w = decoded
            block = self._block_coords[w]
            coord = tuple(c * d + b for c, d, b in zip(chip, self.chip_dims, block))
        if any(not 0 <= c < s for c, s in zip(coord, self.sizes)):
            raise TopologyError(f"id {raw} decodes outside lattice {self.sizes}")
        return coord

    # -- structure helpers ---------------------------------------------------

    def chip_of(self, coord: tuple[int, int, int]) -> tuple[int, int, int]:
        return tuple(c // d for c, d in zip(coord, self.chip_dims))

    def same_chip(self, a: tuple, b: tuple) -> bool:
        return self.spec.tiles_per_chip > 1 and self.chip_of(a) == self.chip_of(b)

    def enable_bit(self, node: Dnp, port: PortId) -> int:
        L, N = self.spec.intra_ports, self.spec.onchip_ports
        if port.kind == PortKind.INTRA:
            return port.index
        if port.kind == PortKind.ONCHIP:
            return L + port.index
        return L + N + port.index

    def onchip_route(self, node: Dnp, dest_coord: tuple) -> PortId | None:
        if self.spec.scheme == "mtnoc":
            return PortId(PortKind.ONCHIP, 0)
        if self.spec.scheme != "mt2d":
            return None
        mx, my = self._mesh_pos[node.coord]
        dx_, dy_ = self._mesh_pos[dest_coord]
        ports = self._onchip_dir_ports[node.tile_id]
        if dx_ != mx:
            return ports.get(("x", 1 if dx_ > mx else -1))
        if dy_ != my:
            return ports.get(("y", 1 if dy_ > my else -1))
        return None

    def tile_at(self, coord: tuple[int, int, int]) -> Dnp:
        return self.tiles[self.encode_coord(coord)]

    def neighbors(self, tile_id: int) -> list[tuple[str, int]]:
        """The six lattice neighbors (with wraparound) of a tile."""
        if tile_id not in self.tiles:
            raise TopologyError(f"unknown tile id {tile_id}")
        coord = self.tiles[tile_id].coord
        out = []
        for dim in range(3):
            for sign in (1, -1):
                step = list(coord)
                step[dim] = (step[dim] + sign) % self.sizes[dim]
                out.append((PortId(PortKind.OFFCHIP, 2 * dim + (0 if sign > 0 else 1)).label,
                            self.encode_coord(tuple(step))))
        return out

    def push_command(self, tile_id: int, command: RdmaCommand) -> bool:
        return self.tiles[tile_id].push_command(command)

    # -- construction ---------------------------------------------------------

    def _build(self) -> None:
        spec, params = self.spec, self.params
        coords = sorted(itertools.product(*[range(s) for s in spec.lattice]))
        total_ports = spec.intra_ports + spec.onchip_ports + spec.offchip_ports
        for coord in coords:
            tile_id = self.encode_coord(coord)
            regfile = RegisterFile(
                ndims=3, priority=params.dimension_priority,
                arb_policy=params.arbitration,
                port_enable=(1 << total_ports) - 1,
                timeout_cycles=params.timeout_cycles,
            )
            node = Dnp(self.sim, tile_id, coord, self,
                       intra_ports=spec.intra_ports,
                       memory_words=params.memory_words,
                       cmd_fifo_depth=params.cmd_fifo_depth,
                       cq_depth=params.cq_depth,
                       lut_entries=params.lut_entries,
                       regfile=regfile)
            self.tiles[tile_id] = node
        self._wire_offchip()
        if spec.scheme == "mt2d":
            self._wire_mt2d()
        elif spec.scheme == "mtnoc":
            self._wire_mtnoc()

    def _wire_offchip(self) -> None:
        params = self.params
        word_cycles = offchip_word_cycles(params.serialization_factor, params.ddr)
        pipeline = params.timing.serdes_transit - MIN_PACKET_WORDS * word_cycles - 1
        if pipeline < 0:
            raise TopologyError(
                "serdes_transit too small for the serialization factor "
                f"({params.timing.serdes_transit} cycles, minimal packet needs "
                f"{MIN_PACKET_WORDS * word_cycles + 1})")
        for tile_id, node in self.tiles.items():
            for dim in range(3):
                if self.sizes[dim] < 2:
                    continue
                for sign in (1, -1):
                    port = PortId(PortKind.OFFCHIP, 2 * dim + (0 if sign > 0 else 1))
                    step = list(node.coord)
                    step[dim] = (step[dim] + sign) % self.sizes[dim]
                    peer = self.tiles[self.encode_coord(tuple(step))]
                    name = f"off:{tile_id}:{port.label}"
                    link = OffChipLink(
                        self.sim, name, word_cycles=word_cycles, pipeline=pipeline,
                        ack_latency=pipeline, retry_limit=params.retry_limit,
                        ber=params.ber, vcs=params.offchip_vcs,
                        tx_capacity=params.vc_depth)
                    self.links[name] = link
                    link.fault_sink = peer.regfile
                    for tx_fifo in link.tx:
                        tx_fifo.producer = node
                    # receive side: one input unit per virtual channel
                    in_port = PortId(PortKind.OFFCHIP, 2 * dim + (1 if sign > 0 else 0))
                    for vc in range(params.offchip_vcs):
                        fifo = CycleFifo(self.sim, params.vc_depth, consumer=peer,
                                         producer=link)
                        unit = InputUnit(index=0, name=f"{in_port.label}.vc{vc}",
                                         fifo=fifo,
                                         port_enable_bit=self.enable_bit(peer, in_port),
                                         is_offchip=True)
                        peer.add_input(unit)
                        link.rx_fifos.append(fifo)
                    node.add_output((PortKind.OFFCHIP, port.index),
                                    OutputRef((PortKind.OFFCHIP, port.index), link,
                                              lanes=params.offchip_vcs,
                                              port_enable_bit=self.enable_bit(node, port)))

    def _chips(self) -> list[tuple]:
        chip_lattice = tuple(s // c for s, c in zip(self.sizes, self.chip_dims))
        return sorted(itertools.product(*[range(c) for c in chip_lattice]))

    def _chip_tiles(self, chip: tuple) -> list[Dnp]:
        base = tuple(c * d for c, d in zip(chip, self.chip_dims))
        return [self.tiles[self.encode_coord(tuple(b + o for b, o in zip(base, offset)))]
                for offset in self._block_coords]

    def _wire_mt2d(self) -> None:
        params = self.params
        mw, mh = self.spec.mesh_shape
        for chip in self._chips():
            tiles = self._chip_tiles(chip)
            grid: dict[tuple[int, int], Dnp] = {}
            for index, node in enumerate(tiles):
                pos = (index % mw, index // mw)
                grid[pos] = node
                self._mesh_pos[node.coord] = pos
                self._onchip_dir_ports.setdefault(node.tile_id, {})
            for (mx, my), node in sorted(grid.items()):
                port_index = 0
                for axis, sign, nx, ny in (("x", 1, mx + 1, my), ("x", -1, mx - 1, my),
                                           ("y", 1, mx, my + 1), ("y", -1, mx, my - 1)):
                    if (nx, ny) not in grid:
                        continue
                    peer = grid[(nx, ny)]
                    port = PortId(PortKind.ONCHIP, port_index)
                    port_index += 1
                    name = f"on:{node.tile_id}:{axis}{'+' if sign > 0 else '-'}"
                    link = OnChipLink(self.sim, name,
                                      latency=params.timing.onchip_link_latency,
                                      tx_capacity=params.vc_depth)
                    link.tx.producer = node
                    self.links[name] = link
                    fifo = CycleFifo(self.sim, params.vc_depth, consumer=peer, producer=link)
                    unit = InputUnit(index=0, name=f"{name}->", fifo=fifo,
                                     port_enable_bit=self.enable_bit(peer, PortId(PortKind.ONCHIP, 0)))
                    peer.add_input(unit)
                    link.rx_fifo = fifo
                    node.add_output((PortKind.ONCHIP, port.index),
                                    OutputRef((PortKind.ONCHIP, port.index), link, lanes=1,
                                              port_enable_bit=self.enable_bit(node, port)))
                    self._onchip_dir_ports[node.tile_id][(axis, sign)] = port

    def _wire_mtnoc(self) -> None:
        params = self.params
        for chip in self._chips():
            noc = NocTransport(self.sim, f"noc:{'.'.join(map(str, chip))}",
                               transit_latency=params.timing.noc_transit_latency,
                               tx_capacity=params.vc_depth)
            self.nocs[chip] = noc
            for node in self._chip_tiles(chip):
                port = PortId(PortKind.ONCHIP, 0)
                fifo = CycleFifo(self.sim, params.vc_depth, consumer=node, producer=noc)
                unit = InputUnit(index=0, name="dni", fifo=fifo,
                                 port_enable_bit=self.enable_bit(node, port))
                node.add_input(unit)
                sink = noc.attach_tile(node.tile_id, fifo)
                noc.tx[node.tile_id].producer = node
                node.add_output((PortKind.ONCHIP, 0),
                                OutputRef((PortKind.ONCHIP, 0), sink, lanes=1,
                                          port_enable_bit=self.enable_bit(node, port)))


def build_network(spec: TopologySpec, params: BuildParams | None = None) -> NetworkInstance:
    """Validate the topology and wire up a ready-to-run network."""
    return NetworkInstance(spec, params or BuildParams())
