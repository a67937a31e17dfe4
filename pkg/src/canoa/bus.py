"""Multi-ECU CAN bus simulation.

Schedules per-ECU frame streams, resolves arbitration, synthesizes the
differential voltage trace and one power trace per ECU, and injects
impersonation attacks (compromised ECU, added module, transmission
hijack). Everything is a deterministic function of (scenario, seed).

The transmission power signature is a rectangular step with exponential
rise/fall edges, per-frame amplitude jitter, and a per-ECU harmonic
ripple at a distinct frequency, so classifiers have an ECU-specific
spectral fingerprint to learn. A smaller reception bump appears on every
ECU while others transmit, keeping "receiving vs transmitting" a learned
rather than structural distinction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .frames import (
    DOMINANT_VOLTS,
    INTERFRAME_BITS,
    CanFrame,
    DerivationRule,
    FrameFormat,
    SourceAddressMap,
    arbitrate,
    serialize_frame,
)
from .trace import SampledTrace

log = logging.getLogger("canoa.bus")


class ProgramActivity(Enum):
    UNIFORM = "uniform"
    HETEROGENEOUS = "heterogeneous"


class AttackKind(Enum):
    NORMAL = "normal"
    COMPROMISED_ECU = "compromised_ecu"
    ADDED_MODULE = "added_module"
    HIJACK_TRANSMISSION = "hijack_transmission"


class PowerRole(Enum):
    TRANSMIT = "transmit"
    RECEIVE = "receive"


@dataclass(frozen=True)
class PowerProfile:
    """Shape of one ECU's power consumption (normalized power units)."""

    baseline_mean: float = 1.0
    baseline_noise: float = 0.08
    signature_amplitude: float = 1.0
    signature_rise_fall_s: float = 5e-6
    signature_jitter: float = 0.02       # +/- fraction per frame
    ripple_frequency_hz: float = 120e3   # distinct per ECU
    ripple_amplitude: float = 0.2
    reception_ripple: float = 0.15
    program: ProgramActivity = ProgramActivity.UNIFORM
    noise_floor_offset: float = 0.0

    def __post_init__(self):
        if self.baseline_noise > 0 and self.signature_amplitude <= 3 * self.baseline_noise:
            raise ValueError(
                "signature amplitude must exceed 3x baseline noise to be distinguishable"
            )


@dataclass(frozen=True)
class MessageSchedule:
    """Periodic frame stream for one source address.

    ``count`` caps the number of frames; None keeps transmitting until
    the scenario ends.
    """

    sa: int
    period_s: float
    offset_s: float = 0.0
    dlc: int = 8
    id_prefix: int = 0x00F0  # high bits above the SA byte (29-bit) / SA window (11-bit)
    count: int | None = None

    def frame_id(self, fmt: FrameFormat) -> int:
        if fmt is FrameFormat.EXTENDED:
            return ((self.id_prefix & 0x1FFFFF) << 8) | self.sa
        return ((self.id_prefix & 0x7) << 8) | self.sa


@dataclass(frozen=True)
class EcuSpec:
    """One node: its source addresses, message schedules, and power profile."""

    index: int
    schedules: tuple[MessageSchedule, ...]
    profile: PowerProfile = PowerProfile()

    @property
    def sas(self) -> list[int]:
        return [s.sa for s in self.schedules]


@dataclass(frozen=True)
class AttackSpec:
    """One injected attack stream.

    ``attacker`` is a legitimate ECU index for COMPROMISED_ECU (and
    optionally for HIJACK_TRANSMISSION); None means the frames come from
    attacker hardware with no power channel. ``victim_sa`` restricts
    hijacks to one stream; None hijacks any eligible frame.
    """

    kind: AttackKind
    spoofed_sa: int
    attacker: int | None = None
    count: int = 0
    trigger_times: tuple[float, ...] = ()
    victim_sa: int | None = None
    id_prefix: int = 0x00D5

    def __post_init__(self):
        if self.kind is AttackKind.NORMAL:
            raise ValueError("an attack spec cannot be of kind NORMAL")
        if self.kind is AttackKind.COMPROMISED_ECU and self.attacker is None:
            raise ValueError("compromised-ECU attacks need an attacker index")
        if self.kind is AttackKind.ADDED_MODULE and self.attacker is not None:
            raise ValueError("added-module frames have no legitimate attacker index")


@dataclass(frozen=True)
class BusConfig:
    bitrate: float = 125_000.0
    format: FrameFormat = FrameFormat.EXTENDED
    sample_rate: float = 10e6
    voltage_noise: float = 0.05


@dataclass(frozen=True)
class Scenario:
    bus: BusConfig
    ecus: tuple[EcuSpec, ...]
    duration: float
    seed: int = 0
    attacks: tuple[AttackSpec, ...] = ()

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        sas = [sa for ecu in self.ecus for sa in ecu.sas]
        if len(sas) != len(set(sas)):
            raise ValueError("source addresses must be distinct across ECUs")
        owners = {sa: ecu.index for ecu in self.ecus for sa in ecu.sas}
        for atk in self.attacks:
            if atk.spoofed_sa not in owners:
                raise ValueError(f"spoofed SA {atk.spoofed_sa} is not owned by any ECU")
            if atk.attacker is not None:
                if atk.attacker not in {e.index for e in self.ecus}:
                    raise ValueError(f"attacker index {atk.attacker} is not a legitimate ECU")
                if owners[atk.spoofed_sa] == atk.attacker:
                    raise ValueError("spoofed SA must belong to an ECU other than the attacker")

    @property
    def owners(self) -> dict[int, int]:
        return {sa: ecu.index for ecu in self.ecus for sa in ecu.sas}

    def source_map(self) -> SourceAddressMap:
        if self.bus.format is FrameFormat.EXTENDED:
            return SourceAddressMap(owners=self.owners)
        table: dict[int, int] = {}
        for ecu in self.ecus:
            for sched in ecu.schedules:
                table[sched.frame_id(self.bus.format)] = sched.sa
        for atk in self.attacks:
            fid = ((atk.id_prefix & 0x7) << 8) | atk.spoofed_sa
            table[fid] = atk.spoofed_sa
        return SourceAddressMap(
            owners=self.owners, rule=DerivationRule.EXPLICIT_TABLE, table=table
        )


@dataclass(frozen=True)
class GroundTruthEntry:
    """What actually happened for one frame present on the bus."""

    t: float
    frame_id: int
    claimed_sa: int
    true_source: int | None  # ECU index, None = added module
    kind: AttackKind
    victim_id: int | None = None  # intended ID of a hijacked transmission


@dataclass(frozen=True)
class GroundTruthLog:
    entries: tuple[GroundTruthEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def normal_count(self) -> int:
        return sum(1 for e in self.entries if e.kind is AttackKind.NORMAL)

    @property
    def attack_count(self) -> int:
        return len(self.entries) - self.normal_count


@dataclass(frozen=True)
class PowerEvent:
    start: float
    end: float
    role: PowerRole


@dataclass
class _BusSlot:
    """One transmission on the wire with its provenance."""

    start: float
    wire: list[int]
    frame: CanFrame
    claimed_sa: int
    transmitter: int | None
    kind: AttackKind
    victim_id: int | None = None
    handover_bit: int | None = None  # hijack: first bit owned by the attacker
    victim_ecu: int | None = None

    @property
    def duration_bits(self) -> int:
        return len(self.wire)


def synth_voltage(
    order: list[_BusSlot], cfg: BusConfig, duration: float, rng: np.random.Generator
) -> SampledTrace:
    """Differential bus voltage for a resolved transmission order.

    Dominant bits drive ~2 V, recessive/idle stays at ~0 V, with additive
    Gaussian noise; bit edges are aligned to the sample grid.
    """
    n = int(round(duration * cfg.sample_rate))
    if cfg.voltage_noise > 0:
        samples = rng.standard_normal(n, dtype=np.float32)
        samples *= np.float32(cfg.voltage_noise)
    else:
        samples = np.zeros(n, dtype=np.float32)
    spb = cfg.sample_rate / cfg.bitrate
    for slot in order:
        s0 = int(round(slot.start * cfg.sample_rate))
        bits = np.asarray(slot.wire, dtype=np.int8)
        bounds = s0 + np.round(np.arange(bits.size + 1) * spb).astype(np.int64)
        counts = np.diff(bounds)
        level = np.where(bits == 0, np.float32(DOMINANT_VOLTS), np.float32(0.0))
        seg = np.repeat(level, counts)
        a, b = bounds[0], min(bounds[-1], n)
        samples[a:b] += seg[: b - a]
    return SampledTrace(samples, cfg.sample_rate)


def _pulse(
    samples: np.ndarray,
    sample_rate: float,
    start: float,
    end: float,
    amplitude: float,
    rise_fall_s: float,
    ripple_hz: float = 0.0,
    ripple_amplitude: float = 0.0,
    phase: float = 0.0,
) -> None:
    """Add a smoothed rectangular pulse (optionally with a harmonic ripple)."""
    n = samples.size
    a = max(0, int(round(start * sample_rate)))
    b = min(n, int(round(end * sample_rate)))
    if b <= a:
        return
    rs = max(rise_fall_s * sample_rate, 1e-9)
    idx = np.arange(b - a)
    env = 1.0 - np.exp(-idx / rs)
    body = amplitude * env
    if ripple_hz > 0.0 and ripple_amplitude != 0.0:
        t = idx / sample_rate
        body = body + ripple_amplitude * env * np.sin(2 * np.pi * ripple_hz * t + phase)
    samples[a:b] += body
    # exponential tail after the pulse
    tail_len = min(n - b, int(round(6 * rs)))
    if tail_len > 0:
        samples[b : b + tail_len] += amplitude * np.exp(-np.arange(1, tail_len + 1) / rs)


def synth_power(
    ecu: EcuSpec,
    timeline: list[PowerEvent],
    duration: float,
    sample_rate: float,
    seed: np.random.SeedSequence | int,
) -> SampledTrace:
    """Power consumption of one ECU over a bus timeline.

    Baseline Gaussian noise plus the transmission signature over the
    ECU's own transmit intervals and a reception bump over everyone
    else's. Heterogeneous program activity adds seeded low-frequency
    bursts around the ECU's own transmissions.
    """
    prof = ecu.profile
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    base = prof.baseline_mean + prof.noise_floor_offset
    if prof.baseline_noise > 0:
        samples = rng.standard_normal(n, dtype=np.float32)
        samples *= np.float32(prof.baseline_noise)
        samples += np.float32(base)
    else:
        samples = np.full(n, base, dtype=np.float32)
    for ev in timeline:
        if ev.role is PowerRole.TRANSMIT:
            amp = prof.signature_amplitude * (
                1.0 + prof.signature_jitter * rng.uniform(-1.0, 1.0)
            )
            _pulse(
                samples,
                sample_rate,
                ev.start,
                ev.end,
                amp,
                prof.signature_rise_fall_s,
                ripple_hz=prof.ripple_frequency_hz,
                ripple_amplitude=prof.ripple_amplitude * amp,
                phase=rng.uniform(0.0, 2 * np.pi),
            )
        else:
            _pulse(
                samples,
                sample_rate,
                ev.start,
                ev.end,
                prof.reception_ripple,
                prof.signature_rise_fall_s,
            )
    if prof.program is ProgramActivity.HETEROGENEOUS:
        own = [ev for ev in timeline if ev.role is PowerRole.TRANSMIT]
        for ev in own:
            span = ev.end - ev.start
            for anchor, sign in ((ev.start, -1.0), (ev.end, +1.0)):
                if rng.uniform() > 0.6:
                    continue
                burst_len = span * rng.uniform(0.3, 0.9)
                gap = span * rng.uniform(0.05, 0.4)
                if sign < 0:
                    b0 = anchor - gap - burst_len
                else:
                    b0 = anchor + gap
                _pulse(
                    samples,
                    sample_rate,
                    b0,
                    b0 + burst_len,
                    0.35 * prof.signature_amplitude,
                    prof.signature_rise_fall_s,
                    ripple_hz=rng.uniform(5e3, 20e3),
                    ripple_amplitude=0.1 * prof.signature_amplitude,
                    phase=rng.uniform(0.0, 2 * np.pi),
                )
    return SampledTrace(samples, sample_rate)


def _craft_hijack_id(victim_id: int, spoofed_sa: int, nbits: int = 29) -> int | None:
    """ID an attacker can overwrite onto a live transmission.

    The attacker can only turn recessive bits dominant, so the crafted ID
    must share the victim's prefix up to the first flipped 1 bit and win
    arbitration there. Returns None when the victim's ID has no 1 bit
    above the SA byte to flip.
    """
    for pos in range(nbits - 1, 7, -1):
        if (victim_id >> pos) & 1:
            prefix_mask = ~((1 << (pos + 1)) - 1) & ((1 << nbits) - 1)
            crafted = (victim_id & prefix_mask) | spoofed_sa
            if crafted != victim_id:
                return crafted
            return None
    return None


def _stream_requests(
    scenario: Scenario, rng: np.random.Generator
) -> list[tuple[CanFrame, float, int | None, AttackKind]]:
    """All frame requests: (frame, request time, transmitter, kind)."""
    fmt = scenario.bus.format
    requests: list[tuple[CanFrame, float, int | None, AttackKind]] = []
    margin = 200 * 8 / scenario.bus.bitrate  # leave room for the longest frame + queue
    horizon = scenario.duration - margin
    for ecu in scenario.ecus:
        for sched in ecu.schedules:
            fid = sched.frame_id(fmt)
            t = sched.offset_s
            emitted = 0
            while t < horizon and (sched.count is None or emitted < sched.count):
                payload = bytes(rng.integers(0, 256, sched.dlc).tolist())
                requests.append((CanFrame(fid, payload, fmt), t, ecu.index, AttackKind.NORMAL))
                t += sched.period_s
                emitted += 1
    for atk in scenario.attacks:
        if atk.kind is AttackKind.HIJACK_TRANSMISSION:
            continue  # realized post-arbitration
        fid = (
            ((atk.id_prefix & 0x1FFFFF) << 8) | atk.spoofed_sa
            if fmt is FrameFormat.EXTENDED
            else ((atk.id_prefix & 0x7) << 8) | atk.spoofed_sa
        )
        times = list(atk.trigger_times)
        if atk.count > len(times):
            extra = atk.count - len(times)
            lo, hi = 0.02 * horizon, horizon
            grid = lo + (np.arange(extra) + 0.5) * (hi - lo) / extra
            grid = grid + rng.uniform(-0.1, 0.1) * (hi - lo) / max(extra, 1)
            times.extend(float(t) for t in grid)
        for t in times:
            payload = bytes(rng.integers(0, 256, 8).tolist())
            requests.append((CanFrame(fid, payload, fmt), t, atk.attacker, atk.kind))
    return requests


def _apply_hijacks(
    slots: list[_BusSlot], scenario: Scenario, rng: np.random.Generator
) -> None:
    """Rewrite victim slots in place per the hijack attack specs."""
    fmt = scenario.bus.format
    if not any(a.kind is AttackKind.HIJACK_TRANSMISSION for a in scenario.attacks):
        return
    if fmt is not FrameFormat.EXTENDED:
        raise ValueError("transmission hijack is modeled for extended-format scenarios only")
    bit_time = 1.0 / scenario.bus.bitrate
    for atk in scenario.attacks:
        if atk.kind is not AttackKind.HIJACK_TRANSMISSION:
            continue
        remaining = max(atk.count, len(atk.trigger_times)) or 1
        for i, slot in enumerate(slots):
            if remaining == 0:
                break
            if slot.kind is not AttackKind.NORMAL:
                continue
            if atk.victim_sa is not None and slot.claimed_sa != atk.victim_sa:
                continue
            if slot.claimed_sa == atk.spoofed_sa:
                continue
            if atk.trigger_times and not any(
                t <= slot.start <= t + 0.2 for t in atk.trigger_times
            ):
                continue
            crafted = _craft_hijack_id(slot.frame.frame_id, atk.spoofed_sa)
            if crafted is None:
                continue
            next_start = slots[i + 1].start if i + 1 < len(slots) else scenario.duration
            budget = next_start - slot.start - INTERFRAME_BITS * bit_time
            new_slot = None
            for _ in range(8):
                payload = bytes(rng.integers(0, 256, slot.frame.dlc).tolist())
                frame = CanFrame(crafted, payload, fmt)
                wire = serialize_frame(frame)
                if len(wire) * bit_time <= budget:
                    old_wire = slot.wire
                    handover = next(
                        k for k in range(min(len(wire), len(old_wire))) if wire[k] != old_wire[k]
                    )
                    new_slot = _BusSlot(
                        start=slot.start,
                        wire=wire,
                        frame=frame,
                        claimed_sa=atk.spoofed_sa,
                        transmitter=atk.attacker,
                        kind=AttackKind.HIJACK_TRANSMISSION,
                        victim_id=slot.frame.frame_id,
                        handover_bit=handover,
                        victim_ecu=slot.transmitter,
                    )
                    break
            if new_slot is None:
                log.warning("hijack skipped: no crafted frame fits before the next slot")
                continue
            slots[i] = new_slot
            remaining -= 1


def simulate(
    scenario: Scenario,
) -> tuple[SampledTrace, list[SampledTrace], GroundTruthLog]:
    """Run a scenario: voltage trace, one power trace per ECU, ground truth."""
    ss = np.random.SeedSequence(scenario.seed)
    payload_ss, voltage_ss, hijack_ss, *power_ss = ss.spawn(3 + len(scenario.ecus))
    rng_payload = np.random.default_rng(payload_ss)

    requests = _stream_requests(scenario, rng_payload)
    order = arbitrate(
        [(frame, t) for frame, t, _, _ in requests], scenario.bus.bitrate
    )  # may raise DuplicateId for ill-formed scenarios

    bit_time = 1.0 / scenario.bus.bitrate
    samap = scenario.source_map()
    slots: list[_BusSlot] = []
    for arb in sorted(order, key=lambda a: a.start_time):
        if arb.start_time + arb.duration + INTERFRAME_BITS * bit_time > scenario.duration:
            continue  # frame would not complete inside the trace
        _, _, transmitter, kind = requests[arb.request_index]
        sa, _ = samap.resolve(arb.frame.frame_id)
        slots.append(
            _BusSlot(
                start=arb.start_time,
                wire=list(arb.wire),
                frame=arb.frame,
                claimed_sa=sa if sa is not None else -1,
                transmitter=transmitter,
                kind=kind,
            )
        )

    _apply_hijacks(slots, scenario, np.random.default_rng(hijack_ss))

    voltage = synth_voltage(
        slots, scenario.bus, scenario.duration, np.random.default_rng(voltage_ss)
    )

    powers: list[SampledTrace] = []
    for ecu, child in zip(scenario.ecus, power_ss):
        timeline: list[PowerEvent] = []
        for slot in slots:
            end = slot.start + slot.duration_bits * bit_time
            if slot.kind is AttackKind.HIJACK_TRANSMISSION and slot.handover_bit is not None:
                cut = slot.start + (slot.handover_bit + 1) * bit_time
                if ecu.index == slot.victim_ecu:
                    timeline.append(PowerEvent(slot.start, cut, PowerRole.TRANSMIT))
                    timeline.append(PowerEvent(cut, end, PowerRole.RECEIVE))
                elif ecu.index == slot.transmitter:
                    timeline.append(PowerEvent(slot.start, cut, PowerRole.RECEIVE))
                    timeline.append(PowerEvent(cut, end, PowerRole.TRANSMIT))
                else:
                    timeline.append(PowerEvent(slot.start, end, PowerRole.RECEIVE))
            elif slot.transmitter == ecu.index:
                timeline.append(PowerEvent(slot.start, end, PowerRole.TRANSMIT))
            else:
                timeline.append(PowerEvent(slot.start, end, PowerRole.RECEIVE))
        powers.append(
            synth_power(ecu, timeline, scenario.duration, scenario.bus.sample_rate, child)
        )

    entries = tuple(
        GroundTruthEntry(
            t=slot.start,
            frame_id=slot.frame.frame_id,
            claimed_sa=slot.claimed_sa,
            true_source=slot.transmitter,
            kind=slot.kind,
            victim_id=slot.victim_id,
        )
        for slot in slots
    )
    return voltage, powers, GroundTruthLog(entries)


# ------------------------------------------------------------------ presets


def lab_scenario(
    frames_per_sa: int = 1000,
    sample_rate: float = 2e6,
    seed: int = 7,
    bitrate: float = 125_000.0,
    fmt: FrameFormat = FrameFormat.EXTENDED,
    program: ProgramActivity = ProgramActivity.UNIFORM,
    attacks: tuple[AttackSpec, ...] = (),
) -> Scenario:
    """Bench-style scenario: five ECUs, one source address each."""
    period = 8e-3 * 125_000.0 / bitrate
    ecus = []
    for k in range(5):
        profile = PowerProfile(
            baseline_mean=1.0 + 0.05 * k,
            baseline_noise=0.08,
            ripple_frequency_hz=60e3 + 70e3 * k,
            program=program,
        )
        sched = MessageSchedule(
            sa=k + 1,
            period_s=period,
            offset_s=k * period / 5,
            dlc=8,
            id_prefix=0x00F0 + k,
            count=frames_per_sa,
        )
        ecus.append(EcuSpec(index=k, schedules=(sched,), profile=profile))
    duration = frames_per_sa * period + 60e-3
    bus = BusConfig(bitrate=bitrate, format=fmt, sample_rate=sample_rate)
    return Scenario(bus=bus, ecus=tuple(ecus), duration=duration, seed=seed, attacks=attacks)


def truck_scenario(
    frames_per_sa: int = 1000,
    sample_rate: float = 3e6,
    seed: int = 21,
    attacks: tuple[AttackSpec, ...] = (),
) -> Scenario:
    """Vehicle-style scenario: engine ECU owning SAs 0 and 15, brake ECU owning 11."""
    bitrate = 250_000.0
    period = 2.6e-3
    engine = EcuSpec(
        index=0,
        schedules=(
            MessageSchedule(sa=0, period_s=period, offset_s=0.0, dlc=8, id_prefix=0x00F0, count=frames_per_sa),
            MessageSchedule(sa=15, period_s=period, offset_s=period / 3, dlc=7, id_prefix=0x00F1, count=frames_per_sa),
        ),
        profile=PowerProfile(
            baseline_mean=1.2,
            baseline_noise=0.07,
            ripple_frequency_hz=90e3,
        ),
    )
    brake = EcuSpec(
        index=1,
        schedules=(
            MessageSchedule(sa=11, period_s=period, offset_s=2 * period / 3, dlc=8, id_prefix=0x00F2, count=frames_per_sa),
        ),
        profile=PowerProfile(
            baseline_mean=0.9,
            baseline_noise=0.10,
            ripple_frequency_hz=240e3,
        ),
    )
    duration = frames_per_sa * period + 40e-3
    bus = BusConfig(bitrate=bitrate, format=FrameFormat.EXTENDED, sample_rate=sample_rate)
    return Scenario(
        bus=bus, ecus=(engine, brake), duration=duration, seed=seed, attacks=attacks
    )
