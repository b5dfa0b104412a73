"""Link layer: timing, corruption marking, envelope retransmission."""

import pytest

from dnpsim.links import FRAME_BITS, offchip_word_cycles
from dnpsim.rdma import CommandCode, CompletionKind, EventStatus, LutEntry, RdmaCommand
from dnpsim.switch import STATUS_LINK_FAULT

from conftest import build_small, drain_events, put, register_window


def test_offchip_word_cycles_defaults_to_4_bits_per_cycle():
    assert offchip_word_cycles(16, ddr=True) == 8     # 32 bits at 4 bits/cycle
    assert offchip_word_cycles(16, ddr=False) == 16
    assert offchip_word_cycles(8, ddr=True) == 4
    with pytest.raises(ValueError):
        offchip_word_cycles(5, ddr=True)


def run_one_put(extra="", length=1, inject=None, scheme="torus3d", lattice="2x2x2"):
    net = build_small(lattice=lattice, scheme=scheme, extra=extra)
    src, dst = net.tile_at((0, 0, 0)), net.tile_at((1, 0, 0))
    register_window(dst)
    src.memory.write(0, list(range(1, length + 1)))
    if inject is not None:
        link = net.links["off:0:X+"]
        for frame, bit in inject:
            link.inject_fault(frame, bit)
    src.push_command(put(src.tile_id, dst.tile_id, 0, 0x4000, length, tag=1))
    stats = net.sim.run_until_drain(500_000)
    return net, src, dst, stats


def test_full_packet_occupies_line_for_eight_cycles_per_word():
    _net, _src, _dst, stats = run_one_put(length=256)
    link = stats.links["off:0:X+"]
    assert link.words == 262
    assert link.busy_cycles == 262 * 8


def test_clean_link_delivers_identical_data():
    net, _src, dst, stats = run_one_put(length=256)
    assert stats.drained
    assert list(dst.memory.read(0x4000, 256)) == list(range(1, 257))
    link = stats.links["off:0:X+"]
    assert link.injected_error_frames == 0
    assert link.retransmissions == 0
    assert stats.sequence_mismatches == 0


def test_header_flip_causes_one_retransmission_and_intact_envelope():
    # frame 0 is the first header word of the first packet
    net, _src, dst, stats = run_one_put(length=4, inject=[(0, 3)])
    assert stats.drained
    link = stats.links["off:0:X+"]
    assert link.injected_envelope_frames == 1
    assert link.retransmissions == 1
    assert stats.envelope_violations == 0
    assert list(dst.memory.read(0x4000, 4)) == [1, 2, 3, 4]
    (event,) = [e for e in drain_events(dst) if e.kind == CompletionKind.PKT_RECEIVED]
    assert not event.status & EventStatus.PAYLOAD_CORRUPTED


def test_payload_flip_is_delivered_once_with_mark():
    # word 5 of the packet is the first payload word
    net, _src, dst, stats = run_one_put(length=4, inject=[(5, 7)])
    assert stats.drained
    link = stats.links["off:0:X+"]
    assert link.injected_payload_frames == 1
    assert link.flagged_payload_frames == 1
    assert link.retransmissions == 0
    delivered = list(dst.memory.read(0x4000, 4))
    assert delivered != [1, 2, 3, 4]        # the flip reached memory
    assert delivered[0] == 1 ^ (1 << 7)
    (event,) = [e for e in drain_events(dst) if e.kind == CompletionKind.PKT_RECEIVED]
    assert event.status & EventStatus.PAYLOAD_CORRUPTED


def test_footer_flip_is_envelope_class_and_retransmitted():
    # a 1-word packet has 7 words; frame 6 is the footer
    net, _src, dst, stats = run_one_put(length=1, inject=[(6, 11)])
    assert stats.drained
    link = stats.links["off:0:X+"]
    assert link.injected_envelope_frames == 1
    assert link.retransmissions == 1
    assert stats.envelope_violations == 0
    (event,) = [e for e in drain_events(dst) if e.kind == CompletionKind.PKT_RECEIVED]
    assert not event.status & EventStatus.PAYLOAD_CORRUPTED


def test_crc_bit_flips_are_detected_too():
    # flip lands in the frame's CRC field (bits 32..47): detected, envelope
    # frame retried even though the data word itself was clean
    net, _src, dst, stats = run_one_put(length=1, inject=[(0, 40)])
    assert stats.drained
    assert stats.links["off:0:X+"].retransmissions == 1
    assert stats.envelope_violations == 0


def test_ber_zero_means_zero_corruption_events():
    _net, _src, _dst, stats = run_one_put(length=64)
    link = stats.links["off:0:X+"]
    assert link.injected_error_frames == 0
    assert link.flagged_payload_frames == 0


def test_persistent_envelope_failure_raises_link_fault():
    # corrupt the first 64 frames on the wire: the head word drowns in
    # retries until the interference stops, well past the retry budget, so
    # the fault bit latches; nothing is ever dropped and the packet still
    # arrives intact once the wire clears
    inject = [(frame, 1) for frame in range(64)]
    net, _src, dst, stats = run_one_put(length=1, inject=inject)
    assert dst.regfile.status & STATUS_LINK_FAULT
    assert stats.drained
    assert stats.envelope_violations == 0
    assert stats.links["off:0:X+"].retransmissions > 8


def test_retransmission_preserves_word_order(rng):
    # errors on two envelope frames of a multi-packet message; memory must
    # still arrive exactly in order
    net = build_small()
    src, dst = net.tile_at((0, 0, 0)), net.tile_at((1, 0, 0))
    register_window(dst, 0x4000, 0x3000)
    data = [rng.getrandbits(32) for _ in range(600)]
    src.memory.write(0, data)
    link = net.links["off:0:X+"]
    link.inject_fault(0, 2)     # first header word
    link.inject_fault(262, 9)   # first header word of the second packet
    src.push_command(put(src.tile_id, dst.tile_id, 0, 0x4000, 600))
    stats = net.sim.run_until_drain(500_000)
    assert stats.drained
    assert stats.links["off:0:X+"].retransmissions == 2
    assert list(dst.memory.read(0x4000, 600)) == data
    assert stats.envelope_violations == 0
    assert stats.sequence_mismatches == 0


def mt2d_net():
    from dnpsim.config import load_preset

    cfg = load_preset("shapes_mt2d")
    cfg.memory_words = 65536
    return cfg.build()


def test_onchip_line_moves_one_word_per_cycle():
    net = mt2d_net()
    src, dst = net.tile_at((0, 0, 0)), net.tile_at((0, 0, 1))  # mesh neighbors
    register_window(dst)
    src.memory.write(0, list(range(7)))
    src.push_command(put(src.tile_id, dst.tile_id, 0, 0x4000, 7, tag=1))
    stats = net.sim.run_until_drain(100_000)
    assert stats.drained
    name = next(n for n in stats.links if n.startswith("on:"))
    moved = [c for n, c in stats.links.items() if c.words]
    assert len(moved) == 1
    assert moved[0].words == 13  # 6 envelope + 7 payload words
    assert moved[0].busy_cycles == 13


def test_onchip_injected_error_sets_footer_and_still_delivers(rng):
    net = mt2d_net()
    src, dst = net.tile_at((0, 0, 0)), net.tile_at((0, 0, 1))
    register_window(dst)
    src.memory.write(0, [0xAAAA5555] * 4)
    from dnpsim.links import FrameErrorSampler

    link_name = next(n for n in net.links if n.startswith(f"on:{src.tile_id}:"))
    # attach a sampler and flip a payload bit on the 6th word (payload 0)
    link = net.links[link_name]
    link.sampler = FrameErrorSampler(net.sim, link_name, 0.0)
    link.sampler.schedule_bit_flip(5, 13)
    src.push_command(put(src.tile_id, dst.tile_id, 0, 0x4000, 4, tag=2))
    stats = net.sim.run_until_drain(100_000)
    assert stats.drained
    events = [e for e in drain_events(dst) if e.kind == CompletionKind.PKT_RECEIVED]
    assert events and events[0].status & EventStatus.PAYLOAD_CORRUPTED
    assert dst.memory.read_word(0x4000) == 0xAAAA5555 ^ (1 << 13)


def test_zero_payload_request_has_no_payload_crc_action():
    net = build_small()
    init, source = net.tile_at((0, 0, 0)), net.tile_at((1, 0, 0))
    source.memory.write(0x10, [5])
    register_window(init)
    init.push_command(RdmaCommand(CommandCode.GET, src_addr=0x10, src_dnp=source.tile_id,
                                  dst_addr=0x4000, dst_dnp=init.tile_id, length=1))
    stats = net.sim.run_until_drain(200_000)
    assert stats.drained
    assert init.memory.read_word(0x4000) == 5
    assert stats.sequence_mismatches == 0
    assert all(c.flagged_payload_frames == 0 for c in stats.links.values())
