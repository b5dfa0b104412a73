"""Id codec bijectivity and ring arithmetic."""

import itertools

import pytest

from dnpsim.addressing import (
    AddressRangeError,
    DimSpec,
    crosses_wrap,
    decode_dnp_id,
    dims_3d,
    dims_4d,
    encode_dnp_id,
    ring_hop,
)


def test_origin_encodes_to_zero():
    assert encode_dnp_id((0, 0, 0), dims_3d((8, 8, 8))) == 0


def test_666_packing_arithmetic():
    # Bit-packing oracle: x + y*2^6 + z*2^12.
    assert encode_dnp_id((1, 2, 3), dims_3d((8, 8, 8))) == 1 + 2 * 2**6 + 3 * 2**12
    assert encode_dnp_id((1, 2, 3), dims_3d((8, 8, 8))) == 12417


def test_4d_packing_arithmetic():
    spec = dims_4d((4, 4, 4, 8))
    assert encode_dnp_id((1, 2, 3, 4), spec) == 1 + 2 * 2**5 + 3 * 2**10 + 4 * 2**15


def test_exhaustive_roundtrip_8x8x8():
    spec = dims_3d((8, 8, 8))
    seen = set()
    for coord in itertools.product(range(8), repeat=3):
        raw = encode_dnp_id(coord, spec)
        assert decode_dnp_id(raw, spec) == coord
        seen.add(raw)
    assert len(seen) == 512  # bijective on the lattice


def test_exhaustive_roundtrip_4d():
    spec = dims_4d((2, 3, 2, 8))
    for coord in itertools.product(range(2), range(3), range(2), range(8)):
        assert decode_dnp_id(encode_dnp_id(coord, spec), spec) == coord


def test_out_of_range_coordinate_rejected():
    with pytest.raises(AddressRangeError):
        encode_dnp_id((8, 0, 0), dims_3d((8, 8, 8)))
    with pytest.raises(AddressRangeError):
        encode_dnp_id((0, 0), dims_3d((8, 8, 8)))


def test_decode_rejects_ids_outside_lattice():
    spec = dims_3d((2, 2, 2))
    with pytest.raises(AddressRangeError):
        decode_dnp_id(5, spec)  # x bits decode to 5 > 1
    with pytest.raises(AddressRangeError):
        decode_dnp_id(1 << 18, spec)


def test_oversized_packing_rejected():
    with pytest.raises(AddressRangeError):
        DimSpec((64, 64, 64, 8), (6, 6, 6, 3))  # 21 bits > 18


def test_ring_hop_shortest_path():
    # 4-ary ring, 0 -> 3: wrap distance 1 beats forward distance 3.
    assert ring_hop(4, 0, 3) == (-1, 1)
    assert ring_hop(4, 3, 0) == (1, 1)
    assert ring_hop(4, 0, 2) == (1, 2)  # tie broken positive
    assert ring_hop(4, 1, 1) == (1, 0)


def test_ring_hop_matches_bruteforce_oracle():
    # Oracle: enumerate both directions and pick the shorter, + on ties.
    for size in (2, 3, 4, 5, 7):
        for src in range(size):
            for dst in range(size):
                fwd = (dst - src) % size
                back = (src - dst) % size
                direction, dist = ring_hop(size, src, dst)
                if fwd == 0:
                    assert dist == 0
                elif fwd <= back:
                    assert (direction, dist) == (1, fwd)
                else:
                    assert (direction, dist) == (-1, back)


def test_wrap_crossing_detection():
    assert crosses_wrap(4, 3, +1)
    assert crosses_wrap(4, 0, -1)
    assert not crosses_wrap(4, 1, +1)
    assert not crosses_wrap(4, 3, -1)
    assert not crosses_wrap(1, 0, +1)
