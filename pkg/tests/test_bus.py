"""Bus simulation tests: waveform synthesis, attacks, determinism."""

import numpy as np
import pytest

from canoa.bus import (
    AttackKind,
    AttackSpec,
    BusConfig,
    EcuSpec,
    MessageSchedule,
    PowerEvent,
    PowerProfile,
    PowerRole,
    ProgramActivity,
    Scenario,
    lab_scenario,
    simulate,
    synth_power,
    synth_voltage,
    truck_scenario,
    _BusSlot,
)
from canoa.frames import CanFrame, FrameFormat, decode_transmissions, serialize_frame


def small_lab(**kw):
    kw.setdefault("frames_per_sa", 40)
    kw.setdefault("sample_rate", 2e6)
    kw.setdefault("seed", 13)
    return lab_scenario(**kw)


# ------------------------------------------------------------- synth_voltage


def test_empty_schedule_gives_near_zero_trace():
    cfg = BusConfig(voltage_noise=0.05, sample_rate=1e6)
    rng = np.random.default_rng(0)
    trace = synth_voltage([], cfg, duration=0.05, rng=rng)
    assert trace.samples.size == 50_000
    assert abs(float(trace.samples.mean())) < 0.01
    assert float(np.abs(trace.samples).max()) < 0.5


def test_each_bit_spans_80_samples_at_10mhz_125kbps():
    frame = CanFrame(0x0B, b"\x01", FrameFormat.STANDARD)
    wire = serialize_frame(frame)
    slot = _BusSlot(
        start=0.0, wire=wire, frame=frame, claimed_sa=0, transmitter=0, kind=AttackKind.NORMAL
    )
    cfg = BusConfig(bitrate=125_000, sample_rate=10e6, voltage_noise=0.0)
    trace = synth_voltage([slot], cfg, duration=len(wire) / 125_000 + 1e-3, rng=np.random.default_rng(0))
    dominant = trace.samples > 1.0
    for k, bit in enumerate(wire):
        seg = dominant[k * 80 : (k + 1) * 80]
        assert seg.all() if bit == 0 else not seg.any()


def test_noiseless_threshold_recovers_stuffed_bits():
    frame = CanFrame((0xF2 << 8) | 0x31, b"\xca\xfe", FrameFormat.EXTENDED)
    wire = serialize_frame(frame)
    slot = _BusSlot(
        start=0.0, wire=wire, frame=frame, claimed_sa=0x31, transmitter=0, kind=AttackKind.NORMAL
    )
    cfg = BusConfig(bitrate=250_000, sample_rate=4e6, voltage_noise=0.0)
    trace = synth_voltage([slot], cfg, duration=len(wire) / 250_000 + 1e-4, rng=np.random.default_rng(0))
    spb = 16
    mids = (np.arange(len(wire)) * spb + spb // 2).astype(int)
    recovered = [0 if trace.samples[m] > 1.0 else 1 for m in mids]
    assert recovered == wire


# --------------------------------------------------------------- synth_power


def idle_ecu(noise=0.0, **profile_kw):
    profile = PowerProfile(baseline_mean=2.5, baseline_noise=noise, **profile_kw)
    return EcuSpec(index=0, schedules=(), profile=profile)


def test_idle_ecu_zero_noise_is_constant_baseline():
    trace = synth_power(idle_ecu(), [], duration=0.01, sample_rate=1e6, seed=1)
    assert np.allclose(trace.samples, 2.5)


def test_transmit_interval_mean_matches_signature_amplitude():
    # sample-mean oracle over the generated trace
    ecu = idle_ecu(noise=0.05)
    events = [PowerEvent(0.002, 0.006, PowerRole.TRANSMIT)]
    trace = synth_power(ecu, events, duration=0.01, sample_rate=2e6, seed=2)
    fs = 2e6
    tx = trace.samples[int(0.0025 * fs) : int(0.0055 * fs)]
    idle = trace.samples[int(0.007 * fs) :]
    delta = float(tx.mean() - idle.mean())
    amp = ecu.profile.signature_amplitude
    assert abs(delta - amp) <= 0.1 * amp


def test_reception_bump_is_smaller_than_signature():
    ecu = idle_ecu(noise=0.0)
    events = [PowerEvent(0.002, 0.004, PowerRole.RECEIVE)]
    trace = synth_power(ecu, events, duration=0.006, sample_rate=2e6, seed=3)
    fs = 2e6
    rx = trace.samples[int(0.0025 * fs) : int(0.0035 * fs)]
    assert abs(float(rx.mean()) - (2.5 + ecu.profile.reception_ripple)) < 0.02


def test_same_seed_gives_bit_identical_power_trace():
    ecu = idle_ecu(noise=0.1, program=ProgramActivity.HETEROGENEOUS)
    events = [PowerEvent(0.001, 0.002, PowerRole.TRANSMIT), PowerEvent(0.003, 0.004, PowerRole.RECEIVE)]
    a = synth_power(ecu, events, duration=0.005, sample_rate=2e6, seed=42)
    b = synth_power(ecu, events, duration=0.005, sample_rate=2e6, seed=42)
    assert np.array_equal(a.samples, b.samples)


def test_distinguishability_precondition_enforced():
    with pytest.raises(ValueError):
        PowerProfile(signature_amplitude=0.2, baseline_noise=0.1)


# ----------------------------------------------------------------- simulate


def test_clean_scenario_log_all_normal_and_decodable():
    sc = small_lab()
    voltage, powers, truth = simulate(sc)
    assert len(truth) == 200
    assert truth.normal_count == 200
    assert truth.attack_count == 0
    assert len(powers) == 5
    decoded = decode_transmissions(voltage, sc.bus.bitrate, sc.source_map())
    assert len(decoded) == 200
    assert all(d.crc_ok for d in decoded)
    for d, e in zip(decoded, truth.entries):
        assert d.sa == e.claimed_sa
        assert abs(d.t - e.t) < 2.0 / sc.bus.sample_rate


def test_added_module_frames_are_logged_as_attacks():
    atk = AttackSpec(kind=AttackKind.ADDED_MODULE, spoofed_sa=1, count=25)
    sc = small_lab(seed=5, attacks=(atk,))
    voltage, powers, truth = simulate(sc)
    attack_entries = [e for e in truth.entries if e.kind is AttackKind.ADDED_MODULE]
    assert len(attack_entries) == 25
    assert all(e.true_source is None for e in attack_entries)
    assert all(e.claimed_sa == 1 for e in attack_entries)
    decoded = decode_transmissions(voltage, sc.bus.bitrate, sc.source_map())
    assert len(decoded) == len(truth)


def test_compromised_ecu_signature_on_attacker_trace():
    atk = AttackSpec(kind=AttackKind.COMPROMISED_ECU, spoofed_sa=1, attacker=2, count=10)
    sc = small_lab(seed=6, attacks=(atk,))
    voltage, powers, truth = simulate(sc)
    fs = sc.bus.sample_rate
    victim_ecu = 0  # owns SA 1
    for e in truth.entries:
        if e.kind is not AttackKind.COMPROMISED_ECU:
            continue
        assert e.true_source == 2
        a, b = int((e.t + 2e-4) * fs), int((e.t + 8e-4) * fs)
        attacker_level = float(powers[2].samples[a:b].mean())
        victim_level = float(powers[victim_ecu].samples[a:b].mean())
        assert attacker_level - sc.ecus[2].profile.baseline_mean > 0.5
        assert victim_level - sc.ecus[victim_ecu].profile.baseline_mean < 0.5


def test_hijack_changes_decoded_id_and_truncates_victim_signature():
    atk = AttackSpec(
        kind=AttackKind.HIJACK_TRANSMISSION, spoofed_sa=2, attacker=3, count=1, victim_sa=1
    )
    sc = small_lab(seed=8, attacks=(atk,))
    voltage, powers, truth = simulate(sc)
    hijacked = [e for e in truth.entries if e.kind is AttackKind.HIJACK_TRANSMISSION]
    assert len(hijacked) == 1
    e = hijacked[0]
    assert e.frame_id != e.victim_id
    assert e.claimed_sa == 2
    decoded = decode_transmissions(voltage, sc.bus.bitrate, sc.source_map())
    match = min(decoded, key=lambda d: abs(d.t - e.t))
    assert match.frame_id == e.frame_id
    # victim (ECU 0) powers down after the handover; attacker (ECU 3) takes over
    fs = sc.bus.sample_rate
    late_a, late_b = int((e.t + 6e-4) * fs), int((e.t + 1.0e-3) * fs)
    v_base = sc.ecus[0].profile.baseline_mean
    a_base = sc.ecus[3].profile.baseline_mean
    assert float(powers[0].samples[late_a:late_b].mean()) - v_base < 0.5
    assert float(powers[3].samples[late_a:late_b].mean()) - a_base > 0.5
    early_a, early_b = int((e.t + 2e-5) * fs), int((e.t + 1.2e-4) * fs)
    assert float(powers[0].samples[early_a:early_b].mean()) - v_base > 0.5


def test_exactly_one_signature_during_normal_none_during_added():
    atk = AttackSpec(kind=AttackKind.ADDED_MODULE, spoofed_sa=3, count=8)
    sc = small_lab(seed=9, attacks=(atk,))
    voltage, powers, truth = simulate(sc)
    fs = sc.bus.sample_rate
    baselines = [e.profile.baseline_mean for e in sc.ecus]
    for e in truth.entries[:60] + truth.entries[-20:]:
        a, b = int((e.t + 2e-4) * fs), int((e.t + 8e-4) * fs)
        elevated = [
            k for k in range(5) if float(powers[k].samples[a:b].mean()) - baselines[k] > 0.5
        ]
        if e.kind is AttackKind.NORMAL:
            assert elevated == [e.true_source]
        elif e.kind is AttackKind.ADDED_MODULE:
            assert elevated == []


def test_power_noise_independent_across_ecus():
    ecus = tuple(
        EcuSpec(
            index=k,
            schedules=(),
            profile=PowerProfile(baseline_noise=0.1, ripple_frequency_hz=60e3 + 50e3 * k),
        )
        for k in range(3)
    )
    sc = Scenario(bus=BusConfig(sample_rate=2e6), ecus=ecus, duration=0.08, seed=33)
    _, powers, _ = simulate(sc)
    assert powers[0].samples.size >= 100_000
    for i in range(3):
        for j in range(i + 1, 3):
            rho = np.corrcoef(powers[i].samples, powers[j].samples)[0, 1]
            assert abs(rho) < 0.05


def test_simulation_is_deterministic():
    sc = small_lab(frames_per_sa=15, seed=17)
    v1, p1, t1 = simulate(sc)
    v2, p2, t2 = simulate(sc)
    assert np.array_equal(v1.samples, v2.samples)
    for a, b in zip(p1, p2):
        assert np.array_equal(a.samples, b.samples)
    assert t1 == t2


def test_truck_shape_has_two_ecus_three_sas():
    sc = truck_scenario(frames_per_sa=20, seed=2)
    assert sc.source_map().owners == {0: 0, 15: 0, 11: 1}
    voltage, powers, truth = simulate(sc)
    assert len(powers) == 2
    assert len(truth) == 60


def test_scenario_validation():
    ecu = EcuSpec(index=0, schedules=(MessageSchedule(sa=1, period_s=0.01),))
    with pytest.raises(ValueError):
        Scenario(bus=BusConfig(), ecus=(ecu,), duration=0.0)
    dup = EcuSpec(index=1, schedules=(MessageSchedule(sa=1, period_s=0.01),))
    with pytest.raises(ValueError):
        Scenario(bus=BusConfig(), ecus=(ecu, dup), duration=1.0)
    with pytest.raises(ValueError):
        AttackSpec(kind=AttackKind.NORMAL, spoofed_sa=1)
    with pytest.raises(ValueError):
        # attacker cannot spoof its own SA
        Scenario(
            bus=BusConfig(),
            ecus=(ecu,),
            duration=1.0,
            attacks=(AttackSpec(kind=AttackKind.COMPROMISED_ECU, spoofed_sa=1, attacker=0),),
        )
