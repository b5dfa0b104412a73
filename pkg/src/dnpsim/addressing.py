"""Node addressing: 18-bit ids and their lattice coordinate codecs.

Every network node carries an 18-bit id.  How the bits map to coordinates
depends on the topology decoder:

* 3D torus: (x, y, z) packed 6/6/6 bits, x in the low bits.
* 4-tuple variant for NoC-grouped designs: (x, y, z, w) packed 5/5/5/3,
  where w is the tile index inside its chip.
"""

from __future__ import annotations

from dataclasses import dataclass

ID_BITS = 18
MAX_ID = 1 << ID_BITS

PACK_3D = (6, 6, 6)
PACK_4D = (5, 5, 5, 3)


class AddressRangeError(ValueError):
    """A coordinate falls outside its dimension, or an id is out of range."""


@dataclass(frozen=True)
class DimSpec:
    """Per-dimension sizes of a lattice plus the bit packing for ids."""

    sizes: tuple[int, ...]
    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.sizes) != len(self.bits):
            raise AddressRangeError("sizes and bit widths differ in length")
        if sum(self.bits) > ID_BITS:
            raise AddressRangeError(f"packing exceeds {ID_BITS} id bits")
        for size, bits in zip(self.sizes, self.bits):
            if size < 1 or size > (1 << bits):
                raise AddressRangeError(f"dimension size {size} does not fit {bits} bits")

    @property
    def ndims(self) -> int:
        return len(self.sizes)

    @property
    def node_count(self) -> int:
        n = 1
        for s in self.sizes:
            n *= s
        return n

    def contains(self, coord: tuple[int, ...]) -> bool:
        return len(coord) == self.ndims and all(
            0 <= c < s for c, s in zip(coord, self.sizes)
        )


def dims_3d(sizes: tuple[int, int, int]) -> DimSpec:
    return DimSpec(sizes, PACK_3D)


def dims_4d(sizes: tuple[int, int, int, int]) -> DimSpec:
    return DimSpec(sizes, PACK_4D)


def encode_dnp_id(coord: tuple[int, ...], spec: DimSpec) -> int:
    """Pack a coordinate tuple into an 18-bit node id."""
    if not spec.contains(coord):
        raise AddressRangeError(f"coordinate {coord} outside lattice {spec.sizes}")
    raw = 0
    shift = 0
    for c, bits in zip(coord, spec.bits):
        raw |= c << shift
        shift += bits
    return raw


def decode_dnp_id(raw: int, spec: DimSpec) -> tuple[int, ...]:
    """Unpack an 18-bit node id into coordinates; inverse of encode_dnp_id."""
    if not 0 <= raw < MAX_ID:
        raise AddressRangeError(f"id {raw} outside 18-bit range")
    coord = []
    for bits in spec.bits:
        coord.append(raw & ((1 << bits) - 1))
        raw >>= bits
    out = tuple(coord)
    if not spec.contains(out):
        raise AddressRangeError(f"id decodes to {out}, outside lattice {spec.sizes}")
    return out


def ring_hop(size: int, src: int, dst: int) -> tuple[int, int]:
    """Shortest hop on a ring of `size`: (direction, distance).

    Direction is +1 or -1; equidistant wraps break toward +1.  A zero
    distance means src == dst and the direction is meaningless (+1).
    """
    fwd = (dst - src) % size
    back = (src - dst) % size
    if fwd == 0:
        return 1, 0
    if fwd <= back:
        return 1, fwd
    return -1, back


def ring_step(size: int, coord: int, direction: int) -> int:
    return (coord + direction) % size


def crosses_wrap(size: int, src: int, direction: int) -> bool:
    """True when the hop from `src` in `direction` uses the wrap link.

    The wrap link of a ring joins coordinate size-1 and coordinate 0; it is
    the dateline for virtual-channel assignment.
    """
    if size < 2:
        return False
    if direction > 0:
        return src == size - 1
    return src == 0
