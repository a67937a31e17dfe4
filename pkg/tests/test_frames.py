"""Protocol-level tests: CRC, stuffing, serialization, arbitration, decoding."""

import numpy as np
import pytest

from canoa.errors import DuplicateId, EmptyTrace, StuffViolation
from canoa.frames import (
    INTERFRAME_BITS,
    ArbitratedFrame,
    CanFrame,
    DerivationRule,
    FrameFormat,
    SourceAddressMap,
    arbitrate,
    compute_crc15,
    decode_transmissions,
    frame_body_bits,
    serialize_frame,
    stuff_bits,
    unstuff_bits,
)
from canoa.trace import SampledTrace


# ---------------------------------------------------------------- oracles


def crc15_shift_register(bits):
    """Independent bit-serial shift-register CRC-15/CAN oracle."""
    crc = 0
    for bit in bits:
        if ((crc >> 14) & 1) ^ bit:
            crc = ((crc << 1) ^ 0x4599) & 0x7FFF
        else:
            crc = (crc << 1) & 0x7FFF
    return crc


def count_stuff_insertions(bits):
    """Single-pass counter oracle: how many stuff bits a transmitter inserts.

    Tracks the run length over the emitted (stuffed) stream, so an
    inserted bit seeds the next run.
    """
    run_val, run_len, inserted = -1, 0, 0
    for b in bits:
        if b == run_val:
            run_len += 1
        else:
            run_val, run_len = b, 1
        if run_len == 5:
            inserted += 1
            run_val, run_len = 1 - b, 1
    return inserted


def make_voltage(order, bitrate, sample_rate, tail_bits=16):
    """Minimal waveform builder independent of the bus simulator."""
    spb = sample_rate / bitrate
    end = max(f.start_time + f.duration for f in order) + tail_bits / bitrate
    samples = np.zeros(int(round(end * sample_rate)), dtype=np.float64)
    for f in order:
        s0 = int(round(f.start_time * sample_rate))
        for k, bit in enumerate(f.wire):
            if bit == 0:
                a = s0 + int(round(k * spb))
                b = s0 + int(round((k + 1) * spb))
                samples[a:b] = 2.0
    return SampledTrace(samples, sample_rate)


LOW_BYTE_MAP = SourceAddressMap(owners={s: s for s in range(256)})


def ext_frame(sa, payload, prefix=0x00F0):
    return CanFrame((prefix << 8) | sa, payload, FrameFormat.EXTENDED)


# ---------------------------------------------------------------- CRC-15


def test_crc15_all_zero_input_is_zero():
    assert compute_crc15([0] * 19) == 0x0000


def test_crc15_single_one_bit_equals_polynomial():
    assert compute_crc15([1]) == 0x4599


def test_crc15_known_frame_matches_shift_register_oracle():
    frame = CanFrame(0x123, b"\xab")
    body = frame_body_bits(frame)
    # frozen from the shift-register oracle
    assert crc15_shift_register(body) == 0x666F
    assert compute_crc15(body) == 0x666F


def test_crc15_agrees_with_oracle_on_random_bits():
    rng = np.random.default_rng(11)
    for _ in range(200):
        bits = rng.integers(0, 2, size=rng.integers(1, 120)).tolist()
        assert compute_crc15(bits) == crc15_shift_register(bits)


# ---------------------------------------------------------------- stuffing


def test_stuff_five_run():
    assert stuff_bits([1, 1, 1, 1, 1]) == [1, 1, 1, 1, 1, 0]


def test_stuff_no_run_is_identity():
    assert stuff_bits([1, 0, 1, 0, 1]) == [1, 0, 1, 0, 1]


def test_stuff_inserted_bit_seeds_next_run():
    bits = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]
    out = stuff_bits(bits)
    assert out == [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 1]
    assert len(out) - len(bits) == count_stuff_insertions(bits) == 2


def test_stuff_count_matches_counter_oracle_on_random_input():
    rng = np.random.default_rng(5)
    for _ in range(300):
        bits = rng.integers(0, 2, size=rng.integers(1, 200)).tolist()
        assert len(stuff_bits(bits)) - len(bits) == count_stuff_insertions(bits)


def test_unstuff_inverts_stuff():
    assert unstuff_bits([1, 1, 1, 1, 1, 0]) == [1, 1, 1, 1, 1]


def test_unstuff_round_trip_over_random_frames():
    rng = np.random.default_rng(7)
    for _ in range(200):
        dlc = int(rng.integers(0, 9))
        fmt = FrameFormat.EXTENDED if rng.integers(0, 2) else FrameFormat.STANDARD
        limit = 1 << (29 if fmt is FrameFormat.EXTENDED else 11)
        frame = CanFrame(int(rng.integers(0, limit)), bytes(rng.integers(0, 256, dlc).tolist()), fmt)
        bits = frame_body_bits(frame)
        assert unstuff_bits(stuff_bits(bits)) == bits


def test_unstuff_six_equal_bits_is_violation():
    with pytest.raises(StuffViolation):
        unstuff_bits([1] * 12)


def test_stuffing_length_bound():
    rng = np.random.default_rng(3)
    for _ in range(300):
        n = int(rng.integers(1, 150))
        bits = rng.integers(0, 2, size=n).tolist()
        assert len(stuff_bits(bits)) <= n + n // 4
    # adversarial all-equal input
    for n in range(1, 120):
        assert len(stuff_bits([1] * n)) <= n + n // 4


# ---------------------------------------------------------------- serialization


def test_serialize_all_dominant_arbitration_field():
    frame = CanFrame(0x000, b"")
    assert frame_body_bits(frame)[:12] == [0] * 12
    # on the wire the fifth dominant bit is followed by a stuff bit
    assert serialize_frame(frame)[:6] == [0, 0, 0, 0, 0, 1]


def test_standard_dlc8_wire_length_within_stuffing_bounds():
    rng = np.random.default_rng(23)
    lengths = []
    for _ in range(2000):
        frame = CanFrame(int(rng.integers(0, 1 << 11)), bytes(rng.integers(0, 256, 8).tolist()))
        lengths.append(len(serialize_frame(frame)))
    assert min(lengths) >= 108
    assert max(lengths) <= 127


def test_crc_property_holds_on_serialized_frames():
    frame = CanFrame(0x2A5, b"\x01\x02\x03")
    assert frame.crc == compute_crc15(frame_body_bits(frame))


# ---------------------------------------------------------------- arbitration


def test_lower_id_wins_simultaneous_arbitration():
    f_hi = CanFrame(0x200, b"\x00")
    f_lo = CanFrame(0x100, b"\x00")
    order = arbitrate([(f_hi, 0.0), (f_lo, 0.0)], bitrate=125_000)
    assert [a.frame.frame_id for a in order] == [0x100, 0x200]
    assert order[0].start_time == 0.0
    # loser retries after the bus goes idle again
    assert order[1].start_time >= order[0].start_time + order[0].duration


def test_single_requester_transmits_immediately():
    frame = CanFrame(0x1FF, b"\xaa")
    order = arbitrate([(frame, 0.002)], bitrate=125_000)
    assert len(order) == 1
    assert order[0].start_time == 0.002


def test_duplicate_id_in_same_arbitration_raises():
    f1 = CanFrame(0x100, b"\x01")
    f2 = CanFrame(0x100, b"\x02")
    with pytest.raises(DuplicateId):
        arbitrate([(f1, 0.0), (f2, 0.0)], bitrate=125_000)


# ---------------------------------------------------------------- decoding


def test_decode_single_extended_frame_resolves_source_address():
    frame = ext_frame(11, b"\xde\xad")
    order = arbitrate([(frame, 0.0)], bitrate=125_000)
    trace = make_voltage(order, 125_000, 2_000_000)
    decoded = decode_transmissions(trace, 125_000, LOW_BYTE_MAP)
    assert len(decoded) == 1
    d = decoded[0]
    assert d.sa == 11
    assert d.crc_ok
    assert d.frame_id == frame.frame_id
    assert d.payload == frame.payload
    assert d.duration > 0


def test_decode_empty_trace_raises():
    trace = SampledTrace(np.zeros(0), 2_000_000)
    with pytest.raises(EmptyTrace):
        decode_transmissions(trace, 125_000, LOW_BYTE_MAP)


@pytest.mark.parametrize("bitrate", [125_000, 250_000, 500_000])
@pytest.mark.parametrize("fmt", [FrameFormat.STANDARD, FrameFormat.EXTENDED])
def test_encoder_decoder_inverse(bitrate, fmt):
    rng = np.random.default_rng(bitrate + (1 if fmt is FrameFormat.EXTENDED else 0))
    limit = 1 << (29 if fmt is FrameFormat.EXTENDED else 11)
    frames = []
    seen = set()
    for _ in range(40):
        fid = int(rng.integers(0, limit))
        while fid in seen:
            fid = int(rng.integers(0, limit))
        seen.add(fid)
        dlc = int(rng.integers(0, 9))
        frames.append(CanFrame(fid, bytes(rng.integers(0, 256, dlc).tolist()), fmt))
    order = arbitrate([(f, 0.0) for f in frames], bitrate)
    trace = make_voltage(order, bitrate, 16 * bitrate)
    table_map = SourceAddressMap(
        owners={0: 0},
        rule=DerivationRule.EXPLICIT_TABLE,
        table={},
    )
    decoded = decode_transmissions(trace, bitrate, table_map)
    assert len(decoded) == len(frames)
    by_start = sorted(order, key=lambda a: a.start_time)
    for d, a in zip(decoded, by_start):
        assert d.crc_ok
        assert d.frame_id == a.frame.frame_id
        assert d.dlc == a.frame.dlc
        assert d.payload == a.frame.payload
        assert d.format == a.frame.format


def test_decoded_starts_monotonic_and_separated():
    rng = np.random.default_rng(77)
    frames = [ext_frame(s, bytes(rng.integers(0, 256, 8).tolist()), prefix=0x00F0 + s) for s in range(10)]
    order = arbitrate([(f, 0.0) for f in frames], 125_000)
    trace = make_voltage(order, 125_000, 2_000_000)
    decoded = decode_transmissions(trace, 125_000, LOW_BYTE_MAP)
    gap = INTERFRAME_BITS / 125_000
    for a, b in zip(decoded, decoded[1:]):
        assert b.t > a.t
        assert b.t >= a.t + a.duration + gap - 1e-9


def test_mid_frame_bit_flip_decodes_with_crc_failure():
    frame = ext_frame(3, b"\x55\x66\x77")
    wire = serialize_frame(frame)
    # flip a recessive data-region bit to dominant (1 -> 0), as a bus attacker could
    flip_at = next(i for i in range(40, 60) if wire[i] == 1)
    corrupted = list(wire)
    corrupted[flip_at] = 0
    fake = ArbitratedFrame(0, frame, 0.0, corrupted, len(corrupted) / 125_000)
    trace = make_voltage([fake], 125_000, 2_000_000)
    decoded = decode_transmissions(trace, 125_000, LOW_BYTE_MAP)
    assert len(decoded) >= 1
    assert not any(d.crc_ok for d in decoded)
